"""Evaluation harness: scripted policies, per-type accuracy, grouped rollouts.

Scripted reference policies stand in for trained models: an oracle that
replays each item's annotated region and viewpoint, a seeded random explorer,
and a no-tool guesser. Episodes run across a worker pool; reports aggregate
accuracy per question type plus the average tool-call count, and serialize
both as JSON and as a plain-text table.
"""

from __future__ import annotations

import json
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .episode import (
    DEFAULT_ENGINE_CONFIG,
    EngineConfig,
    EpisodeState,
    ToolCall,
    start_episode,
    state_features,
    step,
)
from .geometry import BBox2D
from .qa import QAItem, ROOM_DISPLAY, floor_phrase
from .rewards import (
    DEFAULT_REWARD_CONFIG,
    GroupRewards,
    RewardConfig,
    group_rewards,
    total_reward,
)
from .scene import COLORS, MATERIALS, SHAPES, Scene

POLICY_KINDS = ("oracle", "random", "bev-guess", "external")

# Table column order used by the text report
REPORT_COLUMNS = ("material", "color", "position", "state", "shape", "counting")


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    seed: int = 0
    step_budget: int | None = None
    endpoint: str | None = None  # external clients connect via the protocol server

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")


@dataclass
class EpisodeResult:
    qa_id: str
    qtype: str
    correct: bool
    forced: bool
    tool_calls: int
    answer: str
    reward: dict

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "qtype": self.qtype,
            "correct": self.correct,
            "forced": self.forced,
            "tool_calls": self.tool_calls,
            "answer": self.answer,
            "reward": self.reward,
        }


@dataclass
class EvalReport:
    policy: str
    seed: int
    accuracy_by_type: dict[str, float]
    counts_by_type: dict[str, int]
    overall_accuracy: float
    avg_tool_calls: float
    episodes: list[EpisodeResult] = field(default_factory=list)
    wall_clock_s: float = 0.0

    def to_dict(self, include_episodes: bool = False) -> dict:
        doc = {
            "policy": self.policy,
            "seed": self.seed,
            "accuracy_by_type": dict(self.accuracy_by_type),
            "counts_by_type": dict(self.counts_by_type),
            "overall_accuracy": self.overall_accuracy,
            "avg_tool_calls": self.avg_tool_calls,
            "episodes_total": len(self.episodes),
            "wall_clock_s": self.wall_clock_s,
        }
        if include_episodes:
            doc["episodes"] = [e.to_dict() for e in self.episodes]
        return doc

    def to_text_table(self) -> str:
        header = ["Policy"] + [c.capitalize() for c in REPORT_COLUMNS] + ["Overall", "Avg. Toolcall"]
        cells = [self.policy]
        for col in REPORT_COLUMNS:
            acc = self.accuracy_by_type.get(col)
            cells.append("-" if acc is None else f"{acc:.3f}")
        cells.append(f"{self.overall_accuracy:.3f}")
        cells.append(f"{self.avg_tool_calls:.2f}")
        widths = [max(len(h), len(c)) for h, c in zip(header, cells)]
        line = lambda row: "  ".join(v.ljust(w) for v, w in zip(row, widths))  # noqa: E731
        return "\n".join([line(header), line(["-" * w for w in widths]), line(cells)])


# ---------------------------------------------------------------------------
# scripted policies


class OracleCoarseToFine:
    """Replays each item's annotated zoom region and viewpoint, then answers."""

    def __init__(self, spec: PolicySpec) -> None:
        self.spec = spec

    def run(self, scene: Scene, qa: QAItem, state: EpisodeState,
            config: EngineConfig, rng: random.Random) -> EpisodeState:
        state, _ = step(state, ToolCall.zoom_in(qa.gt_floor, qa.gt_bbox), config)
        p = qa.gt_pose
        state, _ = step(state, ToolCall.render_view((p.x, p.y, p.z), (p.yaw, p.pitch, p.roll)),
                        config)
        state, _ = step(state, ToolCall.answer(qa.answer), config)
        return state


class RandomExplorer:
    """Seeded random zooms and views followed by a random plausible answer."""

    def run(self, scene: Scene, qa: QAItem, state: EpisodeState,
            config: EngineConfig, rng: random.Random) -> EpisodeState:
        n_calls = rng.randint(1, max(1, min(6, state.step_budget - 1)))
        res = float(config.bev_resolution)
        fp = scene.floors[0].footprint
        for _ in range(n_calls):
            if rng.random() < 0.5:
                w = rng.uniform(res * 0.1, res * 0.6)
                h = rng.uniform(res * 0.1, res * 0.6)
                x0 = rng.uniform(0, res - w)
                y0 = rng.uniform(0, res - h)
                call = ToolCall.zoom_in(rng.randrange(len(scene.floors)),
                                        BBox2D(x0, y0, x0 + w, y0 + h))
            else:
                fl = scene.floors[rng.randrange(len(scene.floors))]
                pos = (rng.uniform(fp.x0 + 0.3, fp.x1 - 0.3),
                       rng.uniform(fp.y0 + 0.3, fp.y1 - 0.3),
                       fl.elevation_z + 1.5)
                call = ToolCall.render_view(pos, (rng.uniform(-180.0, 179.9),
                                                  rng.uniform(-45.0, 45.0), 0.0))
            state, _ = step(state, call, config)
            if state.terminated:
                return state
        state, _ = step(state, ToolCall.answer(_random_guess(scene, qa, rng)), config)
        return state


class BEVOnlyGuesser:
    """Answers immediately from fixed modal guesses, zero tool calls."""

    GUESSES = {
        "color": "white",
        "material": "wood",
        "shape": "rectangular",
        "state": "closed",
        "counting": "1",
    }

    def run(self, scene: Scene, qa: QAItem, state: EpisodeState,
            config: EngineConfig, rng: random.Random) -> EpisodeState:
        if qa.qtype == "position":
            guess = f"in the living room on {floor_phrase(0)}"
        else:
            guess = self.GUESSES[qa.qtype]
        state, _ = step(state, ToolCall.answer(guess), config)
        return state


def _random_guess(scene: Scene, qa: QAItem, rng: random.Random) -> str:
    if qa.qtype == "color":
        return rng.choice(COLORS)
    if qa.qtype == "material":
        return rng.choice(MATERIALS)
    if qa.qtype == "shape":
        return rng.choice(SHAPES)
    if qa.qtype == "state":
        return rng.choice(("open", "closed", "on", "off", "folded", "unfolded"))
    if qa.qtype == "counting":
        return str(rng.randint(1, 4))
    room = rng.choice([r for fl in scene.floors for r in fl.rooms])
    fl_idx = next(fl.index for fl in scene.floors for r in fl.rooms if r is room)
    return f"in the {ROOM_DISPLAY[room.category]} on {floor_phrase(fl_idx)}"


def make_policy(spec: PolicySpec):
    if spec.kind == "oracle":
        return OracleCoarseToFine(spec)
    if spec.kind == "random":
        return RandomExplorer()
    if spec.kind == "bev-guess":
        return BEVOnlyGuesser()
    raise ValueError(
        f"policy kind {spec.kind!r} is not runnable in-process; use the protocol server")


# ---------------------------------------------------------------------------
# evaluation


def _run_one(policy, spec: PolicySpec, scene: Scene, qa: QAItem,
             config: EngineConfig, reward_cfg: RewardConfig,
             rollout: int = 0) -> EpisodeResult:
    rng = random.Random(f"eval:{spec.seed}:{qa.qa_id}:{rollout}")
    state, _ = start_episode(scene, qa, config)
    state = policy.run(scene, qa, state, config, rng)
    if not state.terminated:
        state, _ = step(state, ToolCall.answer(""), config)
    feats = state_features(state, reward_cfg, config.bev_resolution)
    breakdown = total_reward(feats, float(state.correct), qa.goal_target(), reward_cfg)
    return EpisodeResult(
        qa_id=qa.qa_id,
        qtype=qa.qtype,
        correct=state.correct,
        forced=state.forced,
        tool_calls=state.tool_call_count,
        answer=state.answer or "",
        reward=breakdown.to_dict(),
    )


def run_eval(
    spec: PolicySpec,
    qa_items: Sequence[QAItem],
    scenes: Mapping[str, Scene],
    config: EngineConfig = DEFAULT_ENGINE_CONFIG,
    reward_cfg: RewardConfig = DEFAULT_REWARD_CONFIG,
    workers: int = 4,
) -> EvalReport:
    """Run every QA item exactly once and aggregate; deterministic per seed."""
    missing = {qa.scene_id for qa in qa_items} - set(scenes)
    if missing:
        raise KeyError(f"unresolvable scene references: {sorted(missing)}")
    if spec.step_budget is not None:
        config = EngineConfig(
            bev_resolution=config.bev_resolution,
            zoom_resolution=config.zoom_resolution,
            view_resolution=config.view_resolution,
            step_budget=spec.step_budget,
        )
    policy = make_policy(spec)
    items = sorted(qa_items, key=lambda q: q.qa_id)
    started = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda qa: _run_one(policy, spec, scenes[qa.scene_id], qa, config, reward_cfg),
                items))
    else:
        results = [_run_one(policy, spec, scenes[qa.scene_id], qa, config, reward_cfg)
                   for qa in items]
    elapsed = time.perf_counter() - started

    results.sort(key=lambda r: r.qa_id)
    counts: dict[str, int] = {}
    hits: dict[str, int] = {}
    for r in results:
        counts[r.qtype] = counts.get(r.qtype, 0) + 1
        hits[r.qtype] = hits.get(r.qtype, 0) + (1 if r.correct else 0)
    accuracy = {q: hits[q] / counts[q] for q in counts}
    overall = sum(hits.values()) / len(results) if results else 0.0
    avg_calls = sum(r.tool_calls for r in results) / len(results) if results else 0.0
    return EvalReport(
        policy=spec.kind,
        seed=spec.seed,
        accuracy_by_type=accuracy,
        counts_by_type=counts,
        overall_accuracy=overall,
        avg_tool_calls=avg_calls,
        episodes=results,
        wall_clock_s=elapsed,
    )


def rollout_group(
    spec: PolicySpec,
    scene: Scene,
    qa: QAItem,
    group_size: int,
    config: EngineConfig = DEFAULT_ENGINE_CONFIG,
    reward_cfg: RewardConfig = DEFAULT_REWARD_CONFIG,
) -> GroupRewards:
    """G rollouts of one question, scored as a group with shared correctness rate."""
    if group_size < 2:
        raise ValueError("group rollouts need G >= 2")
    policy = make_policy(spec)
    features = []
    for i in range(group_size):
        rng = random.Random(f"eval:{spec.seed}:{qa.qa_id}:{i}")
        state, _ = start_episode(scene, qa, config)
        state = policy.run(scene, qa, state, config, rng)
        if not state.terminated:
            state, _ = step(state, ToolCall.answer(""), config)
        features.append(state_features(state, reward_cfg, config.bev_resolution))
    return group_rewards(features, qa.goal_target(), reward_cfg)


def save_episode_log(path: str | Path, report: EvalReport) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for episode in report.episodes:
            fh.write(json.dumps(episode.to_dict(), sort_keys=True) + "\n")
    return path


def recount_from_log(lines: Iterable[dict]) -> tuple[float, float]:
    """Independent (overall accuracy, avg tool calls) recount over a raw log."""
    total = 0
    correct = 0
    calls = 0
    for doc in lines:
        total += 1
        correct += 1 if doc["correct"] else 0
        calls += doc["tool_calls"]
    if total == 0:
        return 0.0, 0.0
    return correct / total, calls / total
