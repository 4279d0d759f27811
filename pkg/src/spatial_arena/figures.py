"""Matplotlib report figures written next to the JSON/JSONL outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluate import REPORT_COLUMNS, EvalReport  # noqa: E402
from .qa import DEFAULT_TYPE_DISTRIBUTION, QTYPES  # noqa: E402
from .rewards import RewardConfig, explore_reward  # noqa: E402


def save_accuracy_figure(report: EvalReport, path: str | Path) -> Path:
    """Per-question-type accuracy bars plus the overall line."""
    path = Path(path)
    cols = [c for c in REPORT_COLUMNS if c in report.accuracy_by_type]
    values = [report.accuracy_by_type[c] for c in cols]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(cols)), values, color="#4878a8")
    ax.axhline(report.overall_accuracy, color="#c44e52", linestyle="--",
               label=f"overall {report.overall_accuracy:.3f}")
    ax.set_xticks(range(len(cols)))
    ax.set_xticklabels([c.capitalize() for c in cols], rotation=20)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy")
    ax.set_title(f"{report.policy} policy, {len(report.episodes)} episodes, "
                 f"avg {report.avg_tool_calls:.2f} tool calls")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_type_distribution_figure(
    counts: Mapping[str, int], path: str | Path,
    target: Mapping[str, float] | None = None,
) -> Path:
    """Question-type fractions against their sampling targets."""
    path = Path(path)
    total = max(1, sum(counts.values()))
    target = target or DEFAULT_TYPE_DISTRIBUTION
    fractions = [counts.get(q, 0) / total for q in QTYPES]
    wanted = [target.get(q, 0.0) for q in QTYPES]
    x = range(len(QTYPES))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar([i - 0.2 for i in x], fractions, width=0.4, label="generated", color="#4878a8")
    ax.bar([i + 0.2 for i in x], wanted, width=0.4, label="target", color="#aac7e0")
    ax.set_xticks(list(x))
    ax.set_xticklabels([q.capitalize() for q in QTYPES], rotation=20)
    ax.set_ylabel("fraction")
    ax.set_title(f"question-type distribution over {total} items")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_scene_stats_figure(
    areas: Sequence[float], room_counts: Sequence[int], floor_counts: Sequence[int],
    path: str | Path,
) -> Path:
    """Histograms of scene scale: total area, rooms, floors."""
    path = Path(path)
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.5))
    axes[0].hist(areas, bins=20, color="#4878a8")
    axes[0].axvline(300, color="#c44e52", linestyle="--", label="300 m$^2$")
    axes[0].set_title("total area (m$^2$)")
    axes[0].legend()
    axes[1].hist(room_counts, bins=range(9, 23), color="#4878a8", rwidth=0.9)
    axes[1].set_title("rooms per scene")
    axes[2].hist(floor_counts, bins=(0.5, 1.5, 2.5, 3.5), color="#4878a8", rwidth=0.9)
    axes[2].set_xticks((1, 2, 3))
    axes[2].set_title("floors per scene")
    for ax in axes:
        ax.set_ylabel("scenes")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_explore_reward_figure(cfg: RewardConfig, path: str | Path) -> Path:
    """Exploration reward as a function of the correctness rate, per region count."""
    path = Path(path)
    cs = [i / 200 for i in range(201)]
    fig, ax = plt.subplots(figsize=(7, 4))
    for n_u in (0, 2, 4, 6, 8):
        ax.plot(cs, [explore_reward(c, n_u, cfg) for c in cs], label=f"$N_u$={n_u}")
    for tau in (cfg.tau_low, cfg.tau_high):
        ax.axvline(tau, color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel("group correctness rate")
    ax.set_ylabel("exploration reward")
    ax.set_title("adaptive exploration reward phases")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
