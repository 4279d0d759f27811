from __future__ import annotations

import base64
import json
import socket
import threading

import pytest

from spatial_arena.episode import EngineConfig, EpisodeEngine
from spatial_arena.render import Image
from spatial_arena.server import PROTOCOL_VERSION, ProtocolHandler, serve_tcp


@pytest.fixture()
def handler(scene7, qa_items):
    engine = EpisodeEngine({scene7.scene_id: scene7}, {i.qa_id: i for i in qa_items})
    return ProtocolHandler(engine=engine)


def send(handler: ProtocolHandler, **doc) -> dict:
    return json.loads(handler.handle_line(json.dumps(doc)))


class TestHandler:
    def test_hello_reports_version_and_configs(self, handler):
        reply = send(handler, v=1, type="hello")
        assert reply["type"] == "hello" and reply["v"] == PROTOCOL_VERSION
        assert reply["engine"]["step_budget"] == 12
        assert "sigma" in reply["reward_config"]

    def test_version_mismatch_rejected(self, handler):
        reply = send(handler, v=99, type="hello")
        assert reply["type"] == "error" and "version" in reply["error"]

    def test_full_episode_flow(self, handler, scene7, qa_items):
        qa = qa_items[0]
        obs = send(handler, type="start", scene=scene7.scene_id, qa=qa.qa_id)
        assert obs["type"] == "obs" and obs["t"] == 0
        assert len(obs["images"]) == len(scene7.floors)
        ppm = base64.b64decode(obs["images"][0]["b64_ppm"])
        img = Image.from_ppm(ppm)
        assert img.width == 512
        sid = obs["session"]
        obs = send(handler, type="tool", session=sid, name="zoom_in",
                   floor=0, bbox=[0, 0, 512, 512])
        assert obs["type"] == "obs" and obs["t"] == 1 and not obs["clamped"]
        obs = send(handler, type="tool", session=sid, name="render_view",
                   pos=[2.0, 2.0, 1.5], theta=[30.0, -5.0, 0.0])
        assert obs["type"] == "obs" and len(obs["images"]) == 1
        done = send(handler, type="answer", session=sid, text=qa.answer)
        assert done["type"] == "done" and done["correct"] is True
        assert done["tool_calls"] == 2
        assert done["reward"]["n_u"] == 2

    def test_clamped_flag_on_oversized_bbox(self, handler, scene7, qa_items):
        obs = send(handler, type="start", scene=scene7.scene_id, qa=qa_items[0].qa_id)
        sid = obs["session"]
        obs = send(handler, type="tool", session=sid, name="zoom_in",
                   floor=0, bbox=[-50, 0, 600, 512])
        assert obs["clamped"] is True

    def test_malformed_json_keeps_session_alive(self, handler, scene7, qa_items):
        obs = send(handler, type="start", scene=scene7.scene_id, qa=qa_items[0].qa_id)
        sid = obs["session"]
        bad = json.loads(handler.handle_line("{not json"))
        assert bad["type"] == "error"
        obs = send(handler, type="tool", session=sid, name="zoom_in",
                   floor=0, bbox=[0, 0, 100, 100])
        assert obs["type"] == "obs"

    def test_unknown_ids_and_sessions(self, handler, scene7, qa_items):
        reply = send(handler, type="start", scene="missing", qa=qa_items[0].qa_id)
        assert reply["type"] == "error" and "not found" in reply["error"]
        reply = send(handler, type="tool", session="ghost", name="zoom_in",
                     floor=0, bbox=[0, 0, 10, 10])
        assert reply["type"] == "error"

    def test_interleaved_sessions_are_isolated(self, handler, scene7, qa_items):
        qa = qa_items[0]
        a = send(handler, type="start", scene=scene7.scene_id, qa=qa.qa_id)["session"]
        b = send(handler, type="start", scene=scene7.scene_id, qa=qa.qa_id)["session"]
        assert a != b
        send(handler, type="tool", session=a, name="zoom_in", floor=0, bbox=[0, 0, 99, 99])
        obs_b = send(handler, type="tool", session=b, name="render_view",
                     pos=[2.0, 2.0, 1.5], theta=[0.0, 0.0, 0.0])
        assert obs_b["t"] == 1  # session b saw none of session a's calls
        done_a = send(handler, type="answer", session=a, text=qa.answer)
        done_b = send(handler, type="answer", session=b, text="wrong")
        assert done_a["correct"] is True and done_b["correct"] is False
        assert done_a["reward"]["n_uz"] == 1 and done_b["reward"]["n_ur"] == 1

    def test_replay_reproduces_transcript(self, scene7, qa_items):
        qa = qa_items[0]
        requests = [
            {"v": 1, "type": "hello"},
            {"type": "start", "scene": scene7.scene_id, "qa": qa.qa_id, "session": "r1"},
            {"type": "tool", "session": "r1", "name": "zoom_in", "floor": 0,
             "bbox": [10, 10, 300, 300]},
            {"type": "tool", "session": "r1", "name": "render_view",
             "pos": [3.0, 3.0, 1.5], "theta": [90.0, 0.0, 0.0]},
            {"type": "answer", "session": "r1", "text": qa.answer},
        ]
        transcripts = []
        for _ in range(2):
            engine = EpisodeEngine({scene7.scene_id: scene7},
                                   {i.qa_id: i for i in qa_items})
            handler = ProtocolHandler(engine=engine)
            transcripts.append([handler.handle_line(json.dumps(r)) for r in requests])
        assert transcripts[0] == transcripts[1]

    def test_group_advantages_over_sessions(self, handler, scene7, qa_items):
        qa = qa_items[0]
        sids = []
        for i in range(4):
            obs = send(handler, type="start", scene=scene7.scene_id, qa=qa.qa_id,
                       session=f"g{i}")
            sids.append(obs["session"])
            if i % 2 == 0:
                send(handler, type="tool", session=sids[-1], name="zoom_in",
                     floor=qa.gt_floor, bbox=qa.gt_bbox.as_list())
            send(handler, type="answer", session=sids[-1],
                 text=qa.answer if i < 2 else "wrong")
        result = send(handler, type="group", sessions=sids)
        assert result["type"] == "group_result"
        assert result["correctness_rate"] == pytest.approx(0.5)
        assert sum(result["advantages"]) == pytest.approx(0.0, abs=1e-9)
        assert all(b["correctness_rate"] == pytest.approx(0.5) for b in result["rewards"])

    def test_group_needs_terminated_shared_qa(self, handler, scene7, qa_items):
        qa = qa_items[0]
        send(handler, type="start", scene=scene7.scene_id, qa=qa.qa_id, session="x1")
        reply = send(handler, type="group", sessions=["x1", "x1"])
        assert reply["type"] == "error"

    def test_budget_forces_done_message(self, scene7, qa_items):
        engine = EpisodeEngine({scene7.scene_id: scene7},
                               {i.qa_id: i for i in qa_items},
                               EngineConfig(step_budget=2))
        handler = ProtocolHandler(engine=engine)
        qa = qa_items[0]
        sid = send(handler, type="start", scene=scene7.scene_id, qa=qa.qa_id)["session"]
        for _ in range(2):
            send(handler, type="tool", session=sid, name="zoom_in",
                 floor=0, bbox=[0, 0, 100, 100])
        done = send(handler, type="tool", session=sid, name="zoom_in",
                    floor=0, bbox=[0, 0, 100, 100])
        assert done["type"] == "done" and done["forced"] is True
        assert done["answer"] == "" and done["correct"] is False


class TestTCP:
    def test_episode_over_socket(self, scene7, qa_items):
        engine = EpisodeEngine({scene7.scene_id: scene7},
                               {i.qa_id: i for i in qa_items})
        server = serve_tcp(engine, "127.0.0.1", 0)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            host, port = server.server_address
            qa = qa_items[0]
            with socket.create_connection((host, port), timeout=10) as conn:
                fh = conn.makefile("rw", encoding="utf-8")

                def rpc(doc):
                    fh.write(json.dumps(doc) + "\n")
                    fh.flush()
                    return json.loads(fh.readline())

                hello = rpc({"v": 1, "type": "hello"})
                assert hello["type"] == "hello"
                obs = rpc({"type": "start", "scene": scene7.scene_id, "qa": qa.qa_id})
                sid = obs["session"]
                done = rpc({"type": "answer", "session": sid, "text": qa.answer})
                assert done["correct"] is True
        finally:
            server.shutdown()
            server.server_close()
