"""Tool-call episode engine: session state, dispatch, budget and termination.

An episode starts from the full set of per-floor BEV images and proceeds by
tool calls: zooming into a BEV region, rendering a first-person view, or
submitting an answer. Well-formed calls with invalid parameters produce a
textual error observation and still consume a step; structurally malformed
calls are rejected without consuming one. Episodes are replay-deterministic:
identical call sequences yield identical observation digests.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .geometry import BBox2D
from .qa import QAItem, match_answer
from .render import (
    CameraPose,
    Image,
    InvalidRegion,
    PoseOutOfBounds,
    clamp_bbox,
    render_bev,
    render_view,
    render_zoom,
)
from .rewards import (
    DEFAULT_REWARD_CONFIG,
    RewardConfig,
    TrajectoryFeatures,
    ViewPoint,
    ZoomRegion,
    extract_features,
)
from .scene import Scene

ZOOM_IN = "zoom_in"
RENDER_VIEW = "render_view"
ANSWER = "answer"
TOOL_KINDS = (ZOOM_IN, RENDER_VIEW, ANSWER)

DEFAULT_STEP_BUDGET = 12


class NotFound(KeyError):
    """Unknown scene or QA item id."""


class ProtocolError(ValueError):
    """Structurally malformed tool call; does not consume a step."""


@dataclass(frozen=True)
class ToolCall:
    """One spatial operation; exactly one parameter set matches its kind."""

    kind: str
    floor: int | None = None
    bbox: BBox2D | None = None
    pos: tuple[float, float, float] | None = None
    theta: tuple[float, float, float] | None = None
    text: str | None = None

    @classmethod
    def zoom_in(cls, floor: int, bbox: BBox2D) -> "ToolCall":
        return cls(kind=ZOOM_IN, floor=floor, bbox=bbox)

    @classmethod
    def render_view(cls, pos: tuple[float, float, float],
                    theta: tuple[float, float, float]) -> "ToolCall":
        return cls(kind=RENDER_VIEW, pos=pos, theta=theta)

    @classmethod
    def answer(cls, text: str) -> "ToolCall":
        return cls(kind=ANSWER, text=text)

    def validate(self) -> None:
        if self.kind == ZOOM_IN:
            ok = (self.floor is not None and self.bbox is not None
                  and self.pos is None and self.theta is None and self.text is None)
        elif self.kind == RENDER_VIEW:
            ok = (self.pos is not None and self.theta is not None
                  and self.floor is None and self.bbox is None and self.text is None)
        elif self.kind == ANSWER:
            ok = (self.text is not None and self.floor is None and self.bbox is None
                  and self.pos is None and self.theta is None)
        else:
            raise ProtocolError(f"unknown tool kind {self.kind!r}")
        if not ok:
            raise ProtocolError(f"parameters do not match tool kind {self.kind!r}")

    def to_dict(self) -> dict:
        doc: dict = {"kind": self.kind}
        if self.kind == ZOOM_IN:
            doc["floor"] = self.floor
            doc["bbox"] = self.bbox.as_list()
        elif self.kind == RENDER_VIEW:
            doc["pos"] = list(self.pos)
            doc["theta"] = list(self.theta)
        else:
            doc["text"] = self.text
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ToolCall":
        kind = doc.get("kind")
        if kind == ZOOM_IN:
            return cls.zoom_in(doc["floor"], BBox2D(*doc["bbox"]))
        if kind == RENDER_VIEW:
            return cls.render_view(tuple(doc["pos"]), tuple(doc["theta"]))
        if kind == ANSWER:
            return cls.answer(doc["text"])
        raise ProtocolError(f"unknown tool kind {kind!r}")


@dataclass
class Observation:
    """What a step returns: zero or more images plus a textual note."""

    images: list[Image] = field(default_factory=list)
    note: str = ""
    clamped: bool = False
    error: str | None = None

    def digest(self) -> str:
        h = hashlib.sha256()
        for img in self.images:
            h.update(img.to_ppm())
        h.update(self.note.encode())
        h.update(b"clamped" if self.clamped else b"")
        h.update((self.error or "").encode())
        return h.hexdigest()


@dataclass
class StepRecord:
    call: ToolCall
    digest: str
    ok: bool  # False when the call produced a textual error observation


@dataclass
class EpisodeState:
    scene: Scene
    qa: QAItem
    step_budget: int
    history: list[StepRecord] = field(default_factory=list)
    current_digest: str = ""
    terminated: bool = False
    forced: bool = False
    answer: str | None = None
    correct: bool = False

    @property
    def t(self) -> int:
        return len(self.history)

    @property
    def tool_call_count(self) -> int:
        """Tool calls excluding the final answer submission."""
        return sum(1 for rec in self.history if rec.call.kind != ANSWER)


@dataclass
class Trajectory:
    """Immutable record of one finished episode."""

    episode_id: str
    qa_id: str
    scene_id: str
    calls: list[ToolCall]
    answer: str
    correct: bool
    forced: bool
    observation_digests: list[str]


@dataclass(frozen=True)
class EngineConfig:
    bev_resolution: int = 512
    zoom_resolution: int = 512
    view_resolution: int = 256
    step_budget: int = DEFAULT_STEP_BUDGET

    def to_dict(self) -> dict:
        return {
            "bev_resolution": self.bev_resolution,
            "zoom_resolution": self.zoom_resolution,
            "view_resolution": self.view_resolution,
            "step_budget": self.step_budget,
        }


DEFAULT_ENGINE_CONFIG = EngineConfig()


class EpisodeEngine:
    """Resolves ids, starts episodes and dispatches tool calls."""

    def __init__(
        self,
        scenes: dict[str, Scene],
        qa_items: dict[str, QAItem],
        config: EngineConfig = DEFAULT_ENGINE_CONFIG,
    ) -> None:
        self.scenes = scenes
        self.qa_items = qa_items
        self.config = config

    def start(self, scene_id: str, qa_id: str) -> tuple[EpisodeState, Observation]:
        scene = self.scenes.get(scene_id)
        if scene is None:
            raise NotFound(f"unknown scene {scene_id!r}")
        qa = self.qa_items.get(qa_id)
        if qa is None:
            raise NotFound(f"unknown QA item {qa_id!r}")
        if qa.scene_id != scene_id:
            raise NotFound(f"QA item {qa_id!r} does not belong to scene {scene_id!r}")
        return start_episode(scene, qa, self.config)

    def step(self, state: EpisodeState, call: ToolCall) -> tuple[EpisodeState, Observation]:
        return step(state, call, self.config)


def start_episode(
    scene: Scene, qa: QAItem, config: EngineConfig = DEFAULT_ENGINE_CONFIG
) -> tuple[EpisodeState, Observation]:
    """Fresh episode whose first observation is the ordered per-floor BEV set."""
    images = [render_bev(scene, fi, config.bev_resolution) for fi in range(len(scene.floors))]
    obs = Observation(
        images=images,
        note=(f"question: {qa.question} | scene {scene.scene_id} has "
              f"{len(scene.floors)} floor(s); one bird's-eye view per floor, floor 0 first"),
    )
    state = EpisodeState(scene=scene, qa=qa, step_budget=config.step_budget,
                         current_digest=obs.digest())
    return state, obs


def step(
    state: EpisodeState, call: ToolCall, config: EngineConfig = DEFAULT_ENGINE_CONFIG
) -> tuple[EpisodeState, Observation]:
    """Apply one tool call; see the module docstring for error semantics."""
    if state.terminated:
        raise ProtocolError("episode already terminated")
    call.validate()
    if state.t >= state.step_budget:
        state.terminated = True
        state.forced = True
        state.answer = ""
        state.correct = False
        return state, Observation(note="step budget exhausted; episode force-terminated",
                                  error="ForcedTermination")

    if call.kind == ANSWER:
        state.answer = call.text or ""
        state.correct = match_answer(state.answer, state.qa)
        state.terminated = True
        obs = Observation(note=f"answer received after {state.tool_call_count} tool call(s)")
        state.history.append(StepRecord(call=call, digest=obs.digest(), ok=True))
        state.current_digest = obs.digest()
        return state, obs

    if call.kind == ZOOM_IN:
        obs = _do_zoom(state.scene, call, config)
    else:
        obs = _do_view(state.scene, call, config)
    state.history.append(StepRecord(call=call, digest=obs.digest(), ok=obs.error is None))
    state.current_digest = obs.digest()
    return state, obs


def _do_zoom(scene: Scene, call: ToolCall, config: EngineConfig) -> Observation:
    if not 0 <= call.floor < len(scene.floors):
        return Observation(note=f"floor {call.floor} does not exist; valid floors are "
                                f"0..{len(scene.floors) - 1}", error="InvalidFloor")
    clamped, was_clamped = clamp_bbox(call.bbox, config.bev_resolution)
    try:
        img = render_zoom(scene, call.floor, clamped,
                          config.zoom_resolution, config.bev_resolution)
    except InvalidRegion as exc:
        return Observation(note=str(exc), error="InvalidRegion")
    note = f"zoomed into floor {call.floor} region {clamped.as_list()}"
    if was_clamped:
        note += " (bbox clamped to image bounds)"
    return Observation(images=[img], note=note, clamped=was_clamped)


def _do_view(scene: Scene, call: ToolCall, config: EngineConfig) -> Observation:
    yaw, pitch, roll = call.theta
    try:
        pose = CameraPose(x=call.pos[0], y=call.pos[1], z=call.pos[2],
                          yaw=yaw, pitch=pitch, roll=roll)
        img = render_view(scene, pose, config.view_resolution)
    except PoseOutOfBounds as exc:
        return Observation(note=str(exc), error="PoseOutOfBounds")
    except ValueError as exc:
        return Observation(note=f"invalid camera parameters: {exc}", error="InvalidPose")
    return Observation(images=[img],
                       note=f"first-person view from {list(call.pos)} yaw={yaw} pitch={pitch}")


def to_trajectory(state: EpisodeState, episode_id: str) -> Trajectory:
    if not state.terminated:
        raise ValueError("episode has not terminated")
    return Trajectory(
        episode_id=episode_id,
        qa_id=state.qa.qa_id,
        scene_id=state.scene.scene_id,
        calls=[rec.call for rec in state.history],
        answer=state.answer or "",
        correct=state.correct,
        forced=state.forced,
        observation_digests=[rec.digest for rec in state.history],
    )


def state_features(
    state: EpisodeState,
    reward_cfg: RewardConfig = DEFAULT_REWARD_CONFIG,
    bev_resolution: int | None = None,
) -> TrajectoryFeatures:
    """Reward features from an episode's successfully executed calls."""
    res = bev_resolution or DEFAULT_ENGINE_CONFIG.bev_resolution
    zooms = []
    views = []
    for rec in state.history:
        if not rec.ok:
            continue
        call = rec.call
        if call.kind == ZOOM_IN:
            clamped, _ = clamp_bbox(call.bbox, res)
            zooms.append(ZoomRegion(
                floor=call.floor,
                bbox=BBox2D(clamped.x_min / res, clamped.y_min / res,
                            clamped.x_max / res, clamped.y_max / res)))
        elif call.kind == RENDER_VIEW:
            views.append(ViewPoint(pos=tuple(call.pos), yaw=call.theta[0], pitch=call.theta[1]))
    return extract_features(zooms, views, state.correct, reward_cfg)
