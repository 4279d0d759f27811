"""Deterministic house-scale 3D scene toolkit for active spatial reasoning.

Procedural multi-floor scenes with exact ground truth, coarse-to-fine
renderers, a tool-call episode engine with a line-JSON protocol, the complete
exploration/goal/repetition reward stack with GRPO group advantages, and
QA + chain-of-thought trajectory synthesis pipelines.
"""

from .episode import (
    EngineConfig,
    EpisodeEngine,
    EpisodeState,
    NotFound,
    Observation,
    ProtocolError,
    ToolCall,
    Trajectory,
    start_episode,
    step,
)
from .geometry import AABB, BBox2D, Rect, bbox_iou
from .qa import QAItem, generate_qa, match_answer, quality_filter
from .render import CameraPose, Image, render_bev, render_view, render_zoom
from .rewards import (
    GroupRewards,
    RewardBreakdown,
    RewardConfig,
    TrajectoryFeatures,
    count_unique_regions,
    explore_reward,
    goal_reward,
    group_advantages,
    grpo_objective,
    repetition_penalty,
    total_reward,
)
from .scene import GeneratorProfile, Scene, generate_scene, load_scene, query_objects
from .trajectories import TrainingRecord, synth_clean, synth_corpus, synth_injected

__version__ = "0.1.0"

__all__ = [
    "AABB",
    "BBox2D",
    "CameraPose",
    "EngineConfig",
    "EpisodeEngine",
    "EpisodeState",
    "GeneratorProfile",
    "GroupRewards",
    "Image",
    "NotFound",
    "Observation",
    "ProtocolError",
    "QAItem",
    "Rect",
    "RewardBreakdown",
    "RewardConfig",
    "Scene",
    "ToolCall",
    "Trajectory",
    "TrainingRecord",
    "TrajectoryFeatures",
    "bbox_iou",
    "count_unique_regions",
    "explore_reward",
    "generate_qa",
    "generate_scene",
    "goal_reward",
    "group_advantages",
    "grpo_objective",
    "load_scene",
    "match_answer",
    "quality_filter",
    "query_objects",
    "render_bev",
    "render_view",
    "render_zoom",
    "repetition_penalty",
    "start_episode",
    "step",
    "synth_clean",
    "synth_corpus",
    "synth_injected",
    "total_reward",
]
