"""Newline-delimited JSON protocol server for episode sessions.

One request line yields exactly one response line. Sessions are multiplexed
by a `session` field and are isolated from each other; within a connection
messages are processed strictly in order, so replaying a recorded request
transcript reproduces the identical response transcript byte for byte.

Protocol (version 1):
  -> {"v":1,"type":"hello"}
  <- {"type":"hello","v":1,"engine":{...},"reward_config":{...}}
  -> {"type":"start","scene":ID,"qa":ID[,"session":S][,"reveal_gt":true]}
  <- {"type":"obs","session":S,"t":0,"images":[{"b64_ppm":...}],"note":...}
  -> {"type":"tool","session":S,"name":"zoom_in","floor":I,"bbox":[x0,y0,x1,y1]}
  -> {"type":"tool","session":S,"name":"render_view","pos":[x,y,z],"theta":[yaw,pitch,roll]}
  <- {"type":"obs","session":S,"t":T,"images":[...],"note":...,"clamped":B,"error":E}
  -> {"type":"answer","session":S,"text":...}
  <- {"type":"done","session":S,"correct":B,"forced":B,"reward":{...}}
  -> {"type":"group","sessions":[S1,...]}
  <- {"type":"group_result","rewards":[...],"advantages":[...],"correctness_rate":C}
Malformed input yields {"type":"error","error":...} and the session continues.
"""

from __future__ import annotations

import base64
import json
import socketserver
import sys
from dataclasses import dataclass, field
from typing import IO

from .episode import (
    EngineConfig,
    EpisodeEngine,
    EpisodeState,
    NotFound,
    Observation,
    ProtocolError,
    RENDER_VIEW,
    ToolCall,
    ZOOM_IN,
    state_features,
)
from .geometry import BBox2D
from .qa import QAItem
from .rewards import (
    DEFAULT_REWARD_CONFIG,
    RewardConfig,
    TrajectoryFeatures,
    group_advantages,
    total_reward,
)

PROTOCOL_VERSION = 1


def _encode(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _obs_payload(obs: Observation) -> dict:
    return {
        "images": [{"b64_ppm": base64.b64encode(img.to_ppm()).decode("ascii")}
                   for img in obs.images],
        "note": obs.note,
        "clamped": obs.clamped,
        "error": obs.error,
    }


@dataclass
class _Session:
    state: EpisodeState
    done_sent: bool = False


@dataclass
class ProtocolHandler:
    """Session book-keeping plus request dispatch for one connection."""

    engine: EpisodeEngine
    reward_config: RewardConfig = DEFAULT_REWARD_CONFIG
    sessions: dict[str, _Session] = field(default_factory=dict)
    _counter: int = 0

    def handle_line(self, line: str) -> str:
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            return _encode({"type": "error", "error": f"malformed JSON: {exc.msg}"})
        if not isinstance(doc, dict):
            return _encode({"type": "error", "error": "request must be a JSON object"})
        try:
            return self._dispatch(doc)
        except ProtocolError as exc:
            return _encode({"type": "error", "error": str(exc),
                            "session": doc.get("session")})
        except NotFound as exc:
            return _encode({"type": "error", "error": f"not found: {exc.args[0]}",
                            "session": doc.get("session")})
        except (KeyError, TypeError, ValueError) as exc:
            return _encode({"type": "error", "error": f"bad request: {exc}",
                            "session": doc.get("session")})

    def _dispatch(self, doc: dict) -> str:
        version = doc.get("v")
        if version is not None and version != PROTOCOL_VERSION:
            return _encode({"type": "error",
                            "error": f"unsupported protocol version {version}"})
        mtype = doc.get("type")
        if mtype == "hello":
            return _encode({
                "type": "hello",
                "v": PROTOCOL_VERSION,
                "engine": self.engine.config.to_dict(),
                "reward_config": json.loads(self.reward_config.to_json()),
            })
        if mtype == "start":
            return self._start(doc)
        if mtype == "tool":
            return self._tool(doc)
        if mtype == "answer":
            return self._answer(doc)
        if mtype == "group":
            return self._group(doc)
        return _encode({"type": "error", "error": f"unknown message type {mtype!r}"})

    def _new_session_id(self) -> str:
        self._counter += 1
        return f"s{self._counter}"

    def _start(self, doc: dict) -> str:
        sid = doc.get("session") or self._new_session_id()
        if sid in self.sessions and not self.sessions[sid].state.terminated:
            raise ProtocolError(f"session {sid!r} already active")
        state, obs = self.engine.start(doc["scene"], doc["qa"])
        self.sessions[sid] = _Session(state=state)
        payload = _obs_payload(obs)
        payload.update({"type": "obs", "session": sid, "t": state.t})
        if doc.get("reveal_gt"):
            payload["meta"] = _gt_meta(state.qa, self.engine.config)
        return _encode(payload)

    def _session(self, doc: dict) -> tuple[str, _Session]:
        sid = doc.get("session")
        if sid is None or sid not in self.sessions:
            raise ProtocolError(f"unknown or missing session {sid!r}")
        return sid, self.sessions[sid]

    def _tool(self, doc: dict) -> str:
        sid, sess = self._session(doc)
        name = doc.get("name")
        if name == ZOOM_IN:
            call = ToolCall.zoom_in(doc["floor"], BBox2D(*(float(v) for v in doc["bbox"])))
        elif name == RENDER_VIEW:
            pos = tuple(float(v) for v in doc["pos"])
            theta = tuple(float(v) for v in doc["theta"])
            if len(pos) != 3 or len(theta) != 3:
                raise ProtocolError("pos and theta must each have 3 components")
            call = ToolCall.render_view(pos, theta)
        else:
            raise ProtocolError(f"unknown tool name {name!r}")
        state, obs = self.engine.step(sess.state, call)
        if state.terminated:  # budget exhausted mid-call
            return self._done_payload(sid, sess)
        payload = _obs_payload(obs)
        payload.update({"type": "obs", "session": sid, "t": state.t,
                        "history": _history_summary(state)})
        return _encode(payload)

    def _answer(self, doc: dict) -> str:
        sid, sess = self._session(doc)
        text = doc.get("text")
        if not isinstance(text, str):
            raise ProtocolError("answer requires a string 'text' field")
        self.engine.step(sess.state, ToolCall.answer(text))
        return self._done_payload(sid, sess)

    def _features(self, sess: _Session) -> TrajectoryFeatures:
        return state_features(sess.state, self.reward_config,
                              self.engine.config.bev_resolution)

    def _done_payload(self, sid: str, sess: _Session) -> str:
        state = sess.state
        feats = self._features(sess)
        goal = state.qa.goal_target()
        breakdown = total_reward(feats, float(state.correct), goal, self.reward_config)
        sess.done_sent = True
        return _encode({
            "type": "done",
            "session": sid,
            "correct": state.correct,
            "forced": state.forced,
            "answer": state.answer,
            "tool_calls": state.tool_call_count,
            "reward": breakdown.to_dict(),
        })

    def _group(self, doc: dict) -> str:
        sids = doc.get("sessions")
        if not isinstance(sids, list) or len(sids) < 2:
            raise ProtocolError("group requires a list of at least 2 session ids")
        sessions = []
        for sid in sids:
            if sid not in self.sessions:
                raise ProtocolError(f"unknown session {sid!r}")
            sess = self.sessions[sid]
            if not sess.state.terminated:
                raise ProtocolError(f"session {sid!r} has not terminated")
            sessions.append(sess)
        qa_ids = {s.state.qa.qa_id for s in sessions}
        if len(qa_ids) != 1:
            raise ProtocolError("group sessions must share one QA item")
        c = sum(1 for s in sessions if s.state.correct) / len(sessions)
        goal = sessions[0].state.qa.goal_target()
        breakdowns = [
            total_reward(self._features(s), c, goal, self.reward_config)
            for s in sessions
        ]
        advantages = group_advantages([b.r_total for b in breakdowns])
        return _encode({
            "type": "group_result",
            "sessions": list(sids),
            "correctness_rate": c,
            "rewards": [b.to_dict() for b in breakdowns],
            "advantages": advantages,
        })


def _history_summary(state: EpisodeState) -> str:
    """Prior calls as compact text; only the newest image is ever re-sent."""
    parts = []
    for rec in state.history:
        call = rec.call
        if call.kind == ZOOM_IN:
            parts.append(f"zoom_in(floor={call.floor}, bbox={call.bbox.as_list()})")
        elif call.kind == RENDER_VIEW:
            parts.append(f"render_view(pos={list(call.pos)}, theta={list(call.theta)})")
        if not rec.ok:
            parts[-1] += " [error]"
    return "; ".join(parts)


def _gt_meta(qa: QAItem, config: EngineConfig) -> dict:
    """Ground-truth diagnostics for conformance clients; never sent by default."""
    return {
        "gt_floor": qa.gt_floor,
        "gt_bbox": qa.gt_bbox.as_list(),
        "gt_pos": [qa.gt_pose.x, qa.gt_pose.y, qa.gt_pose.z],
        "gt_theta": [qa.gt_pose.yaw, qa.gt_pose.pitch, qa.gt_pose.roll],
        "answer": qa.answer,
        "bev_resolution": qa.bev_resolution,
    }


def serve_stdio(
    engine: EpisodeEngine,
    reward_config: RewardConfig = DEFAULT_REWARD_CONFIG,
    stdin: IO[str] | None = None,
    stdout: IO[str] | None = None,
) -> None:
    """Serve one connection over stdin/stdout until EOF."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    handler = ProtocolHandler(engine=engine, reward_config=reward_config)
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(handler.handle_line(line) + "\n")
        stdout.flush()


class _TCPHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        handler = ProtocolHandler(engine=self.server.engine,  # type: ignore[attr-defined]
                                  reward_config=self.server.reward_config)  # type: ignore[attr-defined]
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            self.wfile.write((handler.handle_line(line) + "\n").encode("utf-8"))


class ProtocolTCPServer(socketserver.ThreadingTCPServer):
    """One protocol handler per connection; scenes are shared immutably."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], engine: EpisodeEngine,
                 reward_config: RewardConfig = DEFAULT_REWARD_CONFIG) -> None:
        super().__init__(address, _TCPHandler)
        self.engine = engine
        self.reward_config = reward_config


def serve_tcp(engine: EpisodeEngine, host: str, port: int,
              reward_config: RewardConfig = DEFAULT_REWARD_CONFIG) -> ProtocolTCPServer:
    """Bind and return the server; the caller drives serve_forever/shutdown."""
    return ProtocolTCPServer((host, port), engine, reward_config)
