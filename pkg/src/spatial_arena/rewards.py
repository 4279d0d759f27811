"""Reward stack for grouped exploration trajectories.

Components: an adaptive exploration reward whose phase follows the group's
answer-correctness rate, a goal-directed reward (Gaussian in zoom-center
distance, linear in view-angle difference), an incremental repetition
penalty, their weighted composite, and group-standardized advantages with
the clipped surrogate objective used by GRPO-style trainers.

All operations are pure functions of their inputs and a RewardConfig.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from .geometry import BBox2D, angular_difference_deg, bbox_iou


@dataclass(frozen=True)
class RewardConfig:
    """All reward hyperparameters, loadable from a single TOML or JSON file."""

    tau_low: float = 0.25
    tau_high: float = 0.75
    n_max: int = 6
    alpha_explore: float = 0.1
    gamma_penalty: float = -0.1
    n_penalty: int = 4
    r_max: float = 1.0
    sigma: float = 0.2
    theta_threshold: float = 90.0
    alpha_rep: float = 0.2
    w_c: float = 1.0
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    iou_dup_threshold: float = 0.5
    view_dup_pos_m: float = 0.5
    view_dup_angle_deg: float = 15.0
    epsilon_clip: float = 0.2
    beta_kl: float = 0.01
    # correctness term of the composite: "group" uses the shared group rate for
    # every trajectory; "per_trajectory" uses each trajectory's own 0/1 outcome.
    correctness_mode: str = "group"

    def validate(self) -> None:
        if not 0.0 <= self.tau_low < self.tau_high <= 1.0:
            raise ValueError("require 0 <= tau_low < tau_high <= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.theta_threshold <= 0:
            raise ValueError("theta_threshold must be positive")
        if self.alpha_rep < 0:
            raise ValueError("alpha_rep must be non-negative")
        if self.gamma_penalty > 0:
            raise ValueError("gamma_penalty carries its own sign and must be <= 0")
        if self.correctness_mode not in ("group", "per_trajectory"):
            raise ValueError(f"unknown correctness_mode {self.correctness_mode!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_file(cls, path: str | Path) -> "RewardConfig":
        path = Path(path)
        if path.suffix == ".toml":
            try:
                import tomllib  # type: ignore[import-not-found]
            except ModuleNotFoundError:
                import tomli as tomllib  # type: ignore[no-redef]
            doc = tomllib.loads(path.read_text())
        else:
            doc = json.loads(path.read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown reward config keys: {sorted(unknown)}")
        cfg = replace(cls(), **doc)
        cfg.validate()
        return cfg


DEFAULT_REWARD_CONFIG = RewardConfig()


@dataclass(frozen=True)
class ZoomRegion:
    """One zoom call: floor index plus its bbox in normalized [0,1] BEV coords."""

    floor: int
    bbox: BBox2D


@dataclass(frozen=True)
class ViewPoint:
    """One view call: world position plus viewing angles in degrees."""

    pos: tuple[float, float, float]
    yaw: float
    pitch: float


@dataclass(frozen=True)
class GoalTarget:
    """Ground-truth region and viewpoint a trajectory should converge to."""

    floor: int
    center: tuple[float, float]  # normalized BEV coords
    yaw: float
    pitch: float


@dataclass
class TrajectoryFeatures:
    """Everything the reward stack needs to know about one trajectory."""

    zooms: list[ZoomRegion] = field(default_factory=list)
    views: list[ViewPoint] = field(default_factory=list)
    correct: bool = False
    n_uz: int = 0
    n_ur: int = 0
    n_u: int = 0
    n_rep: int = 0

    @property
    def final_zoom(self) -> ZoomRegion | None:
        return self.zooms[-1] if self.zooms else None

    @property
    def final_view(self) -> ViewPoint | None:
        return self.views[-1] if self.views else None


@dataclass
class RewardBreakdown:
    correct: bool
    correctness_rate: float
    n_uz: int
    n_ur: int
    n_u: int
    n_rep: int
    r_explore: float
    r_bbox: float
    r_angle: float
    r_goal: float
    p_rep: float
    r_total: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GroupRewards:
    breakdowns: list[RewardBreakdown]
    correctness_rate: float
    advantages: list[float]


def count_unique_regions(
    zooms: Sequence[ZoomRegion],
    views: Sequence[ViewPoint],
    cfg: RewardConfig = DEFAULT_REWARD_CONFIG,
) -> tuple[int, int, int, int]:
    """Greedy duplicate detection over a trajectory's calls.

    A zoom duplicates an earlier unique region when it is on the same floor
    and their bbox IoU exceeds the threshold; a view duplicates one when both
    its position distance and angular difference fall under the thresholds.
    The first occurrence of each region is its representative.

    Returns (N_uz, N_ur, N_u, n_rep).
    """
    zoom_reps: list[ZoomRegion] = []
    n_rep = 0
    for z in zooms:
        dup = any(
            z.floor == rep.floor and bbox_iou(z.bbox, rep.bbox) > cfg.iou_dup_threshold
            for rep in zoom_reps
        )
        if dup:
            n_rep += 1
        else:
            zoom_reps.append(z)
    view_reps: list[ViewPoint] = []
    for v in views:
        dup = any(
            math.dist(v.pos, rep.pos) < cfg.view_dup_pos_m
            and angular_difference_deg(v.yaw, v.pitch, rep.yaw, rep.pitch) < cfg.view_dup_angle_deg
            for rep in view_reps
        )
        if dup:
            n_rep += 1
        else:
            view_reps.append(v)
    return len(zoom_reps), len(view_reps), len(zoom_reps) + len(view_reps), n_rep


def extract_features(
    zooms: Sequence[ZoomRegion],
    views: Sequence[ViewPoint],
    correct: bool,
    cfg: RewardConfig = DEFAULT_REWARD_CONFIG,
) -> TrajectoryFeatures:
    n_uz, n_ur, n_u, n_rep = count_unique_regions(zooms, views, cfg)
    return TrajectoryFeatures(
        zooms=list(zooms), views=list(views), correct=correct,
        n_uz=n_uz, n_ur=n_ur, n_u=n_u, n_rep=n_rep,
    )


def explore_reward(c: float, n_u: int, cfg: RewardConfig = DEFAULT_REWARD_CONFIG) -> float:
    """Adaptive exploration incentive, piecewise in the correctness rate c.

    Below tau_low each unique region earns alpha_explore up to n_max regions;
    above tau_high regions beyond n_penalty are penalized; in between the two
    phases are linearly blended so the value is continuous in c.
    """
    if not 0.0 <= c <= 1.0:
        raise ValueError("correctness rate must lie in [0, 1]")
    if n_u < 0:
        raise ValueError("unique region count must be non-negative")
    low = min(n_u, cfg.n_max) * cfg.alpha_explore
    high = cfg.gamma_penalty * max(0, n_u - cfg.n_penalty)
    if c < cfg.tau_low:
        return low
    if c > cfg.tau_high:
        return high
    lam = (cfg.tau_high - c) / (cfg.tau_high - cfg.tau_low)
    return lam * low + (1.0 - lam) * high


def bbox_goal_reward(d_bbox: float, cfg: RewardConfig = DEFAULT_REWARD_CONFIG) -> float:
    """Gaussian reward in the normalized distance between zoom centers."""
    return cfg.r_max * math.exp(-(d_bbox * d_bbox) / (2.0 * cfg.sigma * cfg.sigma))


def angle_goal_reward(d_angle: float, cfg: RewardConfig = DEFAULT_REWARD_CONFIG) -> float:
    """Linear falloff in angular difference, clamped at zero beyond the threshold."""
    return cfg.r_max * max(0.0, 1.0 - d_angle / cfg.theta_threshold)


def normalized_center_distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Distance between two normalized BEV points, rescaled by the BEV diagonal."""
    return math.dist(a, b) / math.sqrt(2.0)


def goal_reward(
    features: TrajectoryFeatures,
    goal: GoalTarget,
    cfg: RewardConfig = DEFAULT_REWARD_CONFIG,
) -> tuple[float, float, float]:
    """Goal alignment of the final invocation of each tool type.

    Only the last zoom and the last view are scored; a missing tool type
    contributes 0, and a final zoom on the wrong floor forces the bbox term
    to 0. Returns (r_goal, r_bbox, r_angle) with r_goal = max of the parts.
    """
    r_bbox = 0.0
    fz = features.final_zoom
    if fz is not None and fz.floor == goal.floor:
        d = normalized_center_distance(fz.bbox.center, goal.center)
        r_bbox = bbox_goal_reward(d, cfg)
    r_angle = 0.0
    fv = features.final_view
    if fv is not None:
        d_angle = angular_difference_deg(fv.yaw, fv.pitch, goal.yaw, goal.pitch)
        r_angle = angle_goal_reward(d_angle, cfg)
    return max(r_bbox, r_angle), r_bbox, r_angle


def repetition_penalty(n_rep: int, cfg: RewardConfig = DEFAULT_REWARD_CONFIG) -> float:
    """Incremental penalty: the i-th duplicate costs alpha_rep * i."""
    if n_rep < 0:
        raise ValueError("n_rep must be non-negative")
    if n_rep == 0:
        return 0.0
    return -cfg.alpha_rep * n_rep * (n_rep + 1) / 2.0


def total_reward(
    features: TrajectoryFeatures,
    group_rate: float,
    goal: GoalTarget | None,
    cfg: RewardConfig = DEFAULT_REWARD_CONFIG,
) -> RewardBreakdown:
    """Weighted composite of all components, with the parts retained."""
    c = group_rate if cfg.correctness_mode == "group" else float(features.correct)
    r_exp = explore_reward(c, features.n_u, cfg)
    if goal is not None:
        r_goal, r_bbox, r_angle = goal_reward(features, goal, cfg)
    else:
        r_goal = r_bbox = r_angle = 0.0
    p_rep = repetition_penalty(features.n_rep, cfg)
    total = cfg.w_c * c + cfg.w1 * r_exp + cfg.w2 * r_goal + cfg.w3 * p_rep
    return RewardBreakdown(
        correct=features.correct,
        correctness_rate=c,
        n_uz=features.n_uz,
        n_ur=features.n_ur,
        n_u=features.n_u,
        n_rep=features.n_rep,
        r_explore=r_exp,
        r_bbox=r_bbox,
        r_angle=r_angle,
        r_goal=r_goal,
        p_rep=p_rep,
        r_total=total,
    )


def group_rewards(
    features: Sequence[TrajectoryFeatures],
    goal: GoalTarget | None,
    cfg: RewardConfig = DEFAULT_REWARD_CONFIG,
) -> GroupRewards:
    """Score a group of trajectories for one question and standardize."""
    if len(features) < 2:
        raise ValueError("a reward group needs at least 2 trajectories")
    c = sum(1 for f in features if f.correct) / len(features)
    breakdowns = [total_reward(f, c, goal, cfg) for f in features]
    advantages = group_advantages([b.r_total for b in breakdowns])
    return GroupRewards(breakdowns=breakdowns, correctness_rate=c, advantages=advantages)


def group_advantages(rewards: Sequence[float]) -> list[float]:
    """Within-group standardized rewards (population std, zero-variance guard)."""
    g = len(rewards)
    if g < 2:
        raise ValueError("advantage standardization needs a group of size >= 2")
    mean = sum(rewards) / g
    var = sum((r - mean) ** 2 for r in rewards) / g
    std = math.sqrt(var)
    if std < 1e-8:
        return [0.0] * g
    return [(r - mean) / std for r in rewards]


def grpo_objective(
    ratios: Sequence[float],
    advantages: Sequence[float],
    kl: Sequence[float],
    cfg: RewardConfig = DEFAULT_REWARD_CONFIG,
) -> float:
    """Clipped-surrogate group objective minus the KL penalty.

    Probability ratios and per-trajectory KL values come from the external
    trainer; this is a pure numeric kernel.
    """
    if not len(ratios) == len(advantages) == len(kl):
        raise ValueError("ratios, advantages and kl must have equal lengths")
    if any(r <= 0 for r in ratios):
        raise ValueError("probability ratios must be positive")
    g = len(ratios)
    lo, hi = 1.0 - cfg.epsilon_clip, 1.0 + cfg.epsilon_clip
    surrogate = sum(
        min(r * a, min(max(r, lo), hi) * a) for r, a in zip(ratios, advantages)
    ) / g
    return surrogate - cfg.beta_kl * (sum(kl) / g)


@dataclass(frozen=True)
class CheckCase:
    label: str
    computed: float
    expected: float

    @property
    def passed(self) -> bool:
        return abs(self.computed - self.expected) <= 1e-9


def self_check(cfg: RewardConfig = DEFAULT_REWARD_CONFIG) -> list[CheckCase]:
    """Built-in worked examples of every reward kernel under the default config."""
    return [
        CheckCase("explore, low phase (c=0.1, N_u=3)", explore_reward(0.1, 3, cfg), 0.3),
        CheckCase("explore, high phase (c=0.9, N_u=6)", explore_reward(0.9, 6, cfg), -0.2),
        CheckCase("explore, transition (c=0.5, N_u=5)", explore_reward(0.5, 5, cfg), 0.2),
        CheckCase("goal bbox (d=0)", bbox_goal_reward(0.0, cfg), 1.0),
        CheckCase("goal bbox (d=0.2)", bbox_goal_reward(0.2, cfg), math.exp(-0.5)),
        CheckCase("goal angle (d=45 deg)", angle_goal_reward(45.0, cfg), 0.5),
        CheckCase("repetition (n_rep=0)", repetition_penalty(0, cfg), 0.0),
        CheckCase("repetition (n_rep=1)", repetition_penalty(1, cfg), -0.2),
        CheckCase("repetition (n_rep=3)", repetition_penalty(3, cfg), -1.2),
    ]
