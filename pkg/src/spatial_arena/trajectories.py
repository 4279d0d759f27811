"""Synthesis of chain-of-thought training trajectories from QA items.

Clean records walk the coarse-to-fine route the item was generated with:
zoom into the annotated region, render the annotated viewpoint, answer.
A configurable fraction of records additionally gets a deliberately wrong
call injected first, followed by either a gradual multi-step correction or
an explicit restart, so downstream fine-tuning sees self-correction
behavior. Reasoning text is template-filled; the structural signal
(operation, observation, inference) is the point, not the prose.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .episode import ANSWER, EngineConfig, DEFAULT_ENGINE_CONFIG, ToolCall, start_episode, step
from .geometry import BBox2D, angular_difference_deg, bbox_iou
from .qa import QAItem
from .render import normalize_yaw
from .scene import Scene

ERROR_TYPES = ("WrongPosition", "WrongBBox", "WrongCamera")
CORRECTION_MODES = ("Progressive", "Reset")

DEFAULT_INJECT_RATE = 0.25
DEFAULT_PROGRESSIVE_FRACTION = 0.70

SYSTEM_PROMPT = (
    "You explore a multi-floor indoor scene to answer a question. "
    "Available tools: zoom_in(floor, bbox) focuses a region of a floor's "
    "bird's-eye view; render_view(pos, theta) renders a first-person image. "
    "Reason before every call and finish with a final answer."
)

_ZOOM_REASONS = (
    "The overview of floor {floor} suggests the relevant area is this region; zooming in for a closer look.",
    "The question concerns something on floor {floor}; focusing the bird's-eye view on the candidate region.",
    "Starting coarse-to-fine: selecting the region of floor {floor} most likely to contain the target.",
)
_VIEW_REASONS = (
    "The zoomed map shows the target area; rendering a first-person view to read its details.",
    "A close-up from inside the region should reveal the attribute in question.",
    "Moving to a viewpoint inside the focused region to observe the target directly.",
)
_ANSWER_REASONS = (
    "The close-up view shows the answer clearly.",
    "The rendered view contains the target; reading the answer off it.",
    "Observation complete; the collected views determine the answer.",
)
_PROGRESS_REASONS = (
    "That call missed the target; adjusting the parameters toward the right spot.",
    "The observation does not show the target yet; refining the previous call.",
    "Not quite on target; nudging the operation closer.",
)
_ABANDON_REASONS = (
    "This line of exploration is wrong; abandoning it and restarting from the overview.",
    "The current strategy is not working at all; discarding it and starting over.",
)
_BAD_ZOOM_REASONS = (
    "Trying a region of floor {floor} that might contain the target.",
    "Guessing at a region of floor {floor} to inspect first.",
)
_BAD_VIEW_REASONS = (
    "Rendering a view to look for the target.",
    "Trying a viewpoint that may show the target.",
)


@dataclass
class TrajectoryTurn:
    reasoning: str
    call: ToolCall | None  # None for a pure-reasoning turn (strategy abandonment)
    observation_hash: str | None = None

    def to_dict(self) -> dict:
        return {
            "reasoning": self.reasoning,
            "call": self.call.to_dict() if self.call else None,
            "observation_hash": self.observation_hash,
        }


@dataclass
class TrainingRecord:
    qa_id: str
    scene_id: str
    question: str
    answer: str
    turns: list[TrajectoryTurn]
    injected: bool = False
    error_type: str | None = None
    correction_mode: str | None = None
    adjustment_count: int = 0

    @property
    def calls(self) -> list[ToolCall]:
        return [t.call for t in self.turns if t.call is not None]

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "scene_id": self.scene_id,
            "question": self.question,
            "answer": self.answer,
            "injected": self.injected,
            "error_type": self.error_type,
            "correction_mode": self.correction_mode,
            "adjustment_count": self.adjustment_count,
            "turns": [t.to_dict() for t in self.turns],
            "messages": self.to_messages(),
        }

    def to_messages(self) -> list[dict]:
        """Chat-format rendering (system/user/assistant/tool roles)."""
        messages = [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": self.question},
        ]
        for turn in self.turns:
            if turn.call is None:
                messages.append({"role": "assistant", "content": turn.reasoning})
                continue
            if turn.call.kind == ANSWER:
                messages.append({
                    "role": "assistant",
                    "content": f"{turn.reasoning} Final answer: {turn.call.text}",
                })
                continue
            messages.append({
                "role": "assistant",
                "content": turn.reasoning,
                "tool_calls": [{"name": turn.call.kind,
                                "arguments": {k: v for k, v in turn.call.to_dict().items()
                                              if k != "kind"}}],
            })
            obs_ref = turn.observation_hash or "deferred"
            messages.append({"role": "tool", "content": f"<observation {obs_ref}>"})
        return messages


@dataclass
class CorpusStats:
    total: int
    injected: int
    progressive: int
    reset: int
    by_error_type: dict[str, int]

    @property
    def injected_fraction(self) -> float:
        return self.injected / self.total if self.total else 0.0

    @property
    def progressive_fraction(self) -> float:
        return self.progressive / self.injected if self.injected else 0.0

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "injected": self.injected,
            "progressive": self.progressive,
            "reset": self.reset,
            "by_error_type": dict(self.by_error_type),
            "injected_fraction": self.injected_fraction,
            "progressive_fraction": self.progressive_fraction,
        }


# ---------------------------------------------------------------------------
# call construction


def _jitter_bbox(qa: QAItem, rng: random.Random, scale: float = 0.05) -> BBox2D:
    b = qa.gt_bbox
    diag = math.hypot(b.width, b.height)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    shift = rng.uniform(0.0, scale * diag)
    dx, dy = shift * math.cos(angle), shift * math.sin(angle)
    res = float(qa.bev_resolution)
    x0 = min(max(b.x_min + dx, 0.0), res - 4.0)
    y0 = min(max(b.y_min + dy, 0.0), res - 4.0)
    x1 = min(max(b.x_max + dx, x0 + 2.0), res)
    y1 = min(max(b.y_max + dy, y0 + 2.0), res)
    return BBox2D(round(x0, 2), round(y0, 2), round(x1, 2), round(y1, 2))


def _jitter_theta(qa: QAItem, rng: random.Random, max_deg: float = 5.0) -> tuple[float, float, float]:
    yaw = normalize_yaw(qa.gt_pose.yaw + rng.uniform(-max_deg, max_deg))
    pitch = max(-89.0, min(89.0, qa.gt_pose.pitch + rng.uniform(-max_deg, max_deg)))
    return (round(yaw, 3), round(pitch, 3), 0.0)


def _gt_zoom(qa: QAItem) -> ToolCall:
    return ToolCall.zoom_in(qa.gt_floor, qa.gt_bbox)


def _gt_view(qa: QAItem) -> ToolCall:
    p = qa.gt_pose
    return ToolCall.render_view((p.x, p.y, p.z), (p.yaw, p.pitch, p.roll))


def _zoom_call(qa: QAItem, rng: random.Random, zero_jitter: bool) -> ToolCall:
    if zero_jitter:
        return _gt_zoom(qa)
    return ToolCall.zoom_in(qa.gt_floor, _jitter_bbox(qa, rng))


def _view_call(qa: QAItem, rng: random.Random, zero_jitter: bool) -> ToolCall:
    if zero_jitter:
        return _gt_view(qa)
    p = qa.gt_pose
    return ToolCall.render_view((p.x, p.y, p.z), _jitter_theta(qa, rng))


# ---------------------------------------------------------------------------
# clean synthesis


def synth_clean(
    scene: Scene,
    qa: QAItem,
    rng: random.Random | None = None,
    zero_jitter: bool = False,
) -> TrainingRecord:
    """Two tool calls plus the answer, mirroring the item's generation route."""
    rng = rng or random.Random(f"clean:{qa.qa_id}")
    turns = [
        TrajectoryTurn(rng.choice(_ZOOM_REASONS).format(floor=qa.gt_floor),
                       _zoom_call(qa, rng, zero_jitter)),
        TrajectoryTurn(rng.choice(_VIEW_REASONS), _view_call(qa, rng, zero_jitter)),
        TrajectoryTurn(rng.choice(_ANSWER_REASONS), ToolCall.answer(qa.answer)),
    ]
    return TrainingRecord(qa_id=qa.qa_id, scene_id=qa.scene_id, question=qa.question,
                          answer=qa.answer, turns=turns)


# ---------------------------------------------------------------------------
# error injection


def _bad_bbox(qa: QAItem, rng: random.Random) -> BBox2D:
    """A region with IoU < 0.1 against the annotated one."""
    res = float(qa.bev_resolution)
    w = min(qa.gt_bbox.width, res / 2)
    h = min(qa.gt_bbox.height, res / 2)
    for _ in range(64):
        x0 = rng.uniform(0.0, res - w)
        y0 = rng.uniform(0.0, res - h)
        cand = BBox2D(round(x0, 2), round(y0, 2), round(x0 + w, 2), round(y0 + h, 2))
        if bbox_iou(cand, qa.gt_bbox) < 0.1:
            return cand
    # a gt region this large leaves no low-overlap placement at its own size
    return BBox2D(0.0, 0.0, max(4.0, res * 0.05), max(4.0, res * 0.05))


def _bad_theta(qa: QAItem, rng: random.Random) -> tuple[float, float, float]:
    """Angles at least 60 degrees off the annotated direction."""
    gt = qa.gt_pose
    for _ in range(64):
        yaw = normalize_yaw(gt.yaw + rng.uniform(70.0, 290.0))
        pitch = max(-60.0, min(60.0, gt.pitch + rng.uniform(-25.0, 25.0)))
        if angular_difference_deg(yaw, pitch, gt.yaw, gt.pitch) >= 60.0:
            return (round(yaw, 3), round(pitch, 3), 0.0)
    return (normalize_yaw(gt.yaw + 180.0), gt.pitch, 0.0)


def _bad_position(scene: Scene, qa: QAItem, rng: random.Random) -> tuple[float, float, float]:
    """A camera position displaced >= 3 m, or placed on the wrong floor."""
    gt = qa.gt_pose
    fp = scene.floors[0].footprint
    if len(scene.floors) > 1 and rng.random() < 0.5:
        wrong = rng.choice([f.index for f in scene.floors if f.index != qa.gt_floor])
        z = scene.floors[wrong].elevation_z + 1.5
        return (round(gt.x, 3), round(gt.y, 3), round(z, 3))
    for _ in range(64):
        x = rng.uniform(fp.x0 + 0.2, fp.x1 - 0.2)
        y = rng.uniform(fp.y0 + 0.2, fp.y1 - 0.2)
        if math.hypot(x - gt.x, y - gt.y) >= 3.0:
            return (round(x, 3), round(y, 3), round(gt.z, 3))
    # tiny footprints cannot be 3 m off; fall back to the far corner
    corner = max(((fp.x0, fp.y0), (fp.x0, fp.y1), (fp.x1, fp.y0), (fp.x1, fp.y1)),
                 key=lambda p: math.hypot(p[0] - gt.x, p[1] - gt.y))
    return (round(corner[0], 3), round(corner[1], 3), round(gt.z, 3))


def _interp_fractions(rng: random.Random) -> list[float]:
    n = rng.choice((2, 3))
    if n == 2:
        return [rng.uniform(0.45, 0.7), 1.0]
    return [rng.uniform(0.3, 0.45), rng.uniform(0.6, 0.8), 1.0]


def _lerp_bbox(bad: BBox2D, good: BBox2D, f: float) -> BBox2D:
    return BBox2D(
        round(bad.x_min + (good.x_min - bad.x_min) * f, 2),
        round(bad.y_min + (good.y_min - bad.y_min) * f, 2),
        round(bad.x_max + (good.x_max - bad.x_max) * f, 2),
        round(bad.y_max + (good.y_max - bad.y_max) * f, 2),
    )


def _lerp_angle(a: float, b: float, f: float) -> float:
    delta = (b - a + 180.0) % 360.0 - 180.0
    return normalize_yaw(a + delta * f)


def synth_injected(
    scene: Scene,
    qa: QAItem,
    rng: random.Random | None = None,
    error_type: str | None = None,
    correction_mode: str | None = None,
) -> TrainingRecord:
    """A record with one deliberately wrong call and its correction arc."""
    rng = rng or random.Random(f"injected:{qa.qa_id}")
    error_type = error_type or rng.choice(ERROR_TYPES)
    if correction_mode is None:
        correction_mode = ("Progressive" if rng.random() < DEFAULT_PROGRESSIVE_FRACTION
                           else "Reset")
    if error_type not in ERROR_TYPES:
        raise ValueError(f"unknown error type {error_type!r}")
    if correction_mode not in CORRECTION_MODES:
        raise ValueError(f"unknown correction mode {correction_mode!r}")

    turns: list[TrajectoryTurn] = []
    adjustments = 0
    gt_view = _gt_view(qa)

    if error_type == "WrongBBox":
        bad = ToolCall.zoom_in(qa.gt_floor, _bad_bbox(qa, rng))
        turns.append(TrajectoryTurn(
            rng.choice(_BAD_ZOOM_REASONS).format(floor=qa.gt_floor), bad))
        if correction_mode == "Progressive":
            for f in _interp_fractions(rng):
                turns.append(TrajectoryTurn(
                    rng.choice(_PROGRESS_REASONS),
                    ToolCall.zoom_in(qa.gt_floor, _lerp_bbox(bad.bbox, qa.gt_bbox, f))))
                adjustments += 1
            turns.append(TrajectoryTurn(rng.choice(_VIEW_REASONS), gt_view))
        else:
            turns.append(TrajectoryTurn(rng.choice(_ABANDON_REASONS), None))
            turns.append(TrajectoryTurn(
                rng.choice(_ZOOM_REASONS).format(floor=qa.gt_floor), _gt_zoom(qa)))
            turns.append(TrajectoryTurn(rng.choice(_VIEW_REASONS), gt_view))
    else:
        turns.append(TrajectoryTurn(
            rng.choice(_ZOOM_REASONS).format(floor=qa.gt_floor),
            _zoom_call(qa, rng, zero_jitter=False)))
        gt = qa.gt_pose
        if error_type == "WrongCamera":
            bad = ToolCall.render_view((gt.x, gt.y, gt.z), _bad_theta(qa, rng))
        else:
            bad = ToolCall.render_view(_bad_position(scene, qa, rng),
                                       (gt.yaw, gt.pitch, gt.roll))
        turns.append(TrajectoryTurn(rng.choice(_BAD_VIEW_REASONS), bad))
        if correction_mode == "Progressive":
            for f in _interp_fractions(rng):
                if error_type == "WrongCamera":
                    theta = (round(_lerp_angle(bad.theta[0], gt.yaw, f), 3),
                             round(bad.theta[1] + (gt.pitch - bad.theta[1]) * f, 3), 0.0)
                    call = ToolCall.render_view((gt.x, gt.y, gt.z), theta)
                else:
                    pos = tuple(round(b + (g - b) * f, 3)
                                for b, g in zip(bad.pos, (gt.x, gt.y, gt.z)))
                    call = ToolCall.render_view(pos, (gt.yaw, gt.pitch, gt.roll))
                turns.append(TrajectoryTurn(rng.choice(_PROGRESS_REASONS), call))
                adjustments += 1
        else:
            turns.append(TrajectoryTurn(rng.choice(_ABANDON_REASONS), None))
            turns.append(TrajectoryTurn(
                rng.choice(_ZOOM_REASONS).format(floor=qa.gt_floor), _gt_zoom(qa)))
            turns.append(TrajectoryTurn(rng.choice(_VIEW_REASONS), gt_view))

    turns.append(TrajectoryTurn(rng.choice(_ANSWER_REASONS), ToolCall.answer(qa.answer)))
    return TrainingRecord(
        qa_id=qa.qa_id, scene_id=qa.scene_id, question=qa.question, answer=qa.answer,
        turns=turns, injected=True, error_type=error_type,
        correction_mode=correction_mode, adjustment_count=adjustments,
    )


# ---------------------------------------------------------------------------
# corpus


def attach_observation_hashes(
    scene: Scene, record: TrainingRecord,
    config: EngineConfig = DEFAULT_ENGINE_CONFIG,
    qa: QAItem | None = None,
) -> TrainingRecord:
    """Replay the record's calls and fill in observation content digests."""
    if qa is None:
        raise ValueError("replay needs the QA item the record was built from")
    state, _ = start_episode(scene, qa, config)
    for turn in record.turns:
        if turn.call is None:
            continue
        state, obs = step(state, turn.call, config)
        turn.observation_hash = obs.digest()
    return record


def synth_corpus(
    scenes: Mapping[str, Scene],
    qa_items: Sequence[QAItem],
    seed: int,
    inject_rate: float = DEFAULT_INJECT_RATE,
    progressive_fraction: float = DEFAULT_PROGRESSIVE_FRACTION,
    render_observations: bool = False,
    config: EngineConfig = DEFAULT_ENGINE_CONFIG,
) -> tuple[list[TrainingRecord], CorpusStats]:
    """One record per QA item; injection decisions are i.i.d. per item.

    Deterministic in (qa_id, seed) regardless of item order or parallelism.
    """
    if not qa_items:
        raise ValueError("empty QA set")
    if not 0.0 <= inject_rate <= 1.0 or not 0.0 <= progressive_fraction <= 1.0:
        raise ValueError("rates must lie in [0, 1]")
    records: list[TrainingRecord] = []
    error_counter: Counter[str] = Counter()
    n_prog = n_reset = 0
    for qa in qa_items:
        scene = scenes.get(qa.scene_id)
        if scene is None:
            raise KeyError(f"missing scene {qa.scene_id!r} for {qa.qa_id!r}")
        rng = random.Random(f"traj:{qa.qa_id}:{seed}")
        if rng.random() < inject_rate:
            mode = "Progressive" if rng.random() < progressive_fraction else "Reset"
            etype = rng.choice(ERROR_TYPES)
            record = synth_injected(scene, qa, rng, error_type=etype, correction_mode=mode)
            error_counter[etype] += 1
            if mode == "Progressive":
                n_prog += 1
            else:
                n_reset += 1
        else:
            record = synth_clean(scene, qa, rng)
        if render_observations:
            attach_observation_hashes(scene, record, config, qa=qa)
        records.append(record)
    stats = CorpusStats(
        total=len(records),
        injected=n_prog + n_reset,
        progressive=n_prog,
        reset=n_reset,
        by_error_type=dict(error_counter),
    )
    return records, stats


def save_records(path: str | Path, records: Iterable[TrainingRecord]) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    return path


def load_records(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
