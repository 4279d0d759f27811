"""Single command-line entry point for the full pipeline.

Every subcommand prints its resolved seed and a SHA-256 hash of its effective
configuration so runs are reproducible from the command line alone. Defaults
can be overridden with SPATIAL_ARENA_* environment variables; explicit flags
always win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import figures
from .episode import EngineConfig, EpisodeEngine
from .evaluate import PolicySpec, recount_from_log, run_eval, save_episode_log
from .qa import (
    DEFAULT_TYPE_DISTRIBUTION,
    generate_qa,
    load_qa_items,
    quality_filter,
    save_qa_items,
    set_stats,
)
from .rewards import DEFAULT_REWARD_CONFIG, RewardConfig, self_check
from .scene import (
    DEFAULT_PROFILE,
    GeneratorProfile,
    Scene,
    canonical_json,
    generate_scene,
    load_scene,
)
from .server import serve_stdio, serve_tcp
from .trajectories import save_records, synth_corpus

ENV_PREFIX = "SPATIAL_ARENA_"


class CliError(RuntimeError):
    """User-facing failure; printed to stderr, exit code 1."""


def _env(name: str, default, cast=str):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError as exc:
        raise CliError(f"bad {ENV_PREFIX}{name}={raw!r}: {exc}") from exc


def _print_provenance(args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items())
                if k != "func" and isinstance(v, (str, int, float, bool, type(None)))}
    digest = hashlib.sha256(canonical_json(resolved).encode()).hexdigest()
    # the serve subcommand may own stdout for the line protocol
    out = sys.stderr if args.command == "serve" else sys.stdout
    seed = getattr(args, "seed", None)
    if seed is not None:
        print(f"seed: {seed}", file=out)
    print(f"config-hash: {digest}", file=out)


def _prepare_output(path: Path, force: bool, directory: bool = False) -> Path:
    if path.exists():
        if not force:
            raise CliError(f"refusing to overwrite {path}; pass --force")
    elif directory:
        path.mkdir(parents=True)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
    if directory and not path.exists():
        path.mkdir(parents=True)
    return path


def _load_scene_dir(path: str) -> dict[str, Scene]:
    scene_dir = Path(path)
    files = sorted(scene_dir.glob("*.scene.json"))
    if not files:
        raise CliError(f"no .scene.json files under {scene_dir}")
    scenes = {}
    for f in files:
        scene = load_scene(f)
        scenes[scene.scene_id] = scene
    return scenes


def _reward_config(args: argparse.Namespace) -> RewardConfig:
    path = getattr(args, "reward_config", None)
    if path is None:
        return DEFAULT_REWARD_CONFIG
    return RewardConfig.from_file(path)


def _profile(args: argparse.Namespace) -> GeneratorProfile:
    path = getattr(args, "profile", None)
    if path is None:
        return DEFAULT_PROFILE
    doc = json.loads(Path(path).read_text())
    coerced = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
    if "room_category_weights" in coerced:
        coerced["room_category_weights"] = tuple(
            (c, w) for c, w in coerced["room_category_weights"])
    profile = GeneratorProfile(**coerced)
    profile.validate()
    return profile


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_scenes(args: argparse.Namespace) -> int:
    out = _prepare_output(Path(args.out), args.force, directory=True)
    profile = _profile(args)
    for i in range(args.n):
        scene = generate_scene(args.seed + i, profile)
        scene.save(out / f"{scene.scene_id}.scene.json")
    print(f"wrote {args.n} scene(s) to {out}")
    return 0


def cmd_gen_qa(args: argparse.Namespace) -> int:
    out = _prepare_output(Path(args.out), args.force)
    scenes = _load_scene_dir(args.scenes)
    dist = None
    if args.target_dist:
        dist = {str(k): float(v) for k, v in json.loads(args.target_dist).items()}
    items = []
    rejections: dict[str, int] = {}
    for scene_id in sorted(scenes):
        scene = scenes[scene_id]
        generated = generate_qa(scene, args.per_scene, args.seed, type_distribution=dist)
        if args.no_filter:
            kept, rej = generated, {}
        else:
            kept, rej = quality_filter(scene, generated)
        items.extend(kept)
        for reason, count in rej.items():
            rejections[reason] = rejections.get(reason, 0) + count
    save_qa_items(out, items)
    stats = set_stats(items, rejections)
    print(f"wrote {len(items)} QA items to {out} "
          f"({sum(rejections.values())} rejected: {rejections or 'none'})")
    if args.stats:
        stats_path = Path(args.stats)
        stats_path.parent.mkdir(parents=True, exist_ok=True)
        stats_path.write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n")
        fig_path = stats_path.with_suffix(".png")
        figures.save_type_distribution_figure(
            stats.counts_by_type, fig_path, dist or DEFAULT_TYPE_DISTRIBUTION)
        print(f"stats: {stats_path}  figure: {fig_path}")
    return 0


def cmd_gen_traj(args: argparse.Namespace) -> int:
    out = _prepare_output(Path(args.out), args.force)
    scenes = _load_scene_dir(args.scenes)
    qa_items = load_qa_items(args.qa)
    records, stats = synth_corpus(
        scenes, qa_items, args.seed,
        inject_rate=args.inject_rate,
        progressive_fraction=args.progressive_frac,
        render_observations=args.render_obs,
    )
    save_records(out, records)
    print(f"wrote {stats.total} records to {out} "
          f"(injected {stats.injected}, {stats.progressive} progressive / {stats.reset} reset)")
    if args.stats:
        stats_path = Path(args.stats)
        stats_path.parent.mkdir(parents=True, exist_ok=True)
        stats_path.write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n")
        print(f"stats: {stats_path}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    scenes = _load_scene_dir(args.scenes)
    qa_items = {item.qa_id: item for item in load_qa_items(args.qa)}
    engine = EpisodeEngine(scenes, qa_items, EngineConfig(step_budget=args.budget))
    reward_cfg = _reward_config(args)
    if args.stdio:
        serve_stdio(engine, reward_cfg)
        return 0
    host, _, port = args.bind.rpartition(":")
    server = serve_tcp(engine, host or "127.0.0.1", int(port), reward_cfg)
    print(f"listening on {server.server_address[0]}:{server.server_address[1]}",
          file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    out = _prepare_output(Path(args.out), args.force, directory=True)
    scenes = _load_scene_dir(args.scenes)
    qa_items = load_qa_items(args.qa)
    spec = PolicySpec(kind=args.policy, seed=args.seed, step_budget=args.budget)
    report = run_eval(spec, qa_items, scenes, reward_cfg=_reward_config(args),
                      workers=args.workers)
    (out / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(report.to_text_table() + "\n")
    save_episode_log(out / "episodes.jsonl", report)
    figures.save_accuracy_figure(report, out / "accuracy_by_type.png")
    log = [json.loads(line) for line in (out / "episodes.jsonl").read_text().splitlines()]
    recount_acc, recount_calls = recount_from_log(log)
    if abs(recount_acc - report.overall_accuracy) > 1e-12:
        raise CliError("episode log disagrees with the aggregated report")
    print(report.to_text_table())
    print(f"report written to {out} ({report.wall_clock_s:.1f}s, "
          f"recount accuracy {recount_acc:.3f}, avg calls {recount_calls:.2f})")
    return 0


def cmd_reward_check(args: argparse.Namespace) -> int:
    cfg = _reward_config(args)
    cases = self_check(cfg)
    failures = 0
    for case in cases:
        status = "PASS" if case.passed else "FAIL"
        print(f"[{status}] {case.label}: computed {case.computed:.10f}, "
              f"expected {case.expected:.10f}")
        failures += 0 if case.passed else 1
    if args.plot:
        path = figures.save_explore_reward_figure(cfg, args.plot)
        print(f"figure: {path}")
    print(f"{len(cases) - failures}/{len(cases)} checks passed")
    return 1 if failures else 0


def cmd_stats(args: argparse.Namespace) -> int:
    out = _prepare_output(Path(args.out), args.force, directory=True)
    scenes = _load_scene_dir(args.scenes)
    areas = [s.total_area for s in scenes.values()]
    rooms = [sum(len(f.rooms) for f in s.floors) for s in scenes.values()]
    floors = [len(s.floors) for s in scenes.values()]
    doc = {
        "scenes": len(scenes),
        "area": {"min": min(areas), "mean": sum(areas) / len(areas), "max": max(areas),
                 "over_300_fraction": sum(1 for a in areas if a > 300) / len(areas)},
        "rooms": {"min": min(rooms), "max": max(rooms)},
        "floors": {"min": min(floors), "max": max(floors)},
    }
    figures.save_scene_stats_figure(areas, rooms, floors, out / "scene_stats.png")
    if args.qa:
        items = load_qa_items(args.qa)
        stats = set_stats(items)
        doc["qa"] = stats.to_dict()
        figures.save_type_distribution_figure(
            stats.counts_by_type, out / "qtype_distribution.png")
    (out / "stats.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(json.dumps(doc, indent=2, sort_keys=True))
    print(f"stats written to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spatial-arena",
        description="Deterministic house-scale scene environment, reward engine, "
                    "and QA/trajectory synthesis toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, seed: bool = True) -> None:
        if seed:
            p.add_argument("--seed", type=int, default=_env("SEED", 0, int),
                           help="base RNG seed (env SPATIAL_ARENA_SEED)")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("gen-scenes", help="generate deterministic scenes")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--profile", help="JSON file with generator profile overrides")
    add_common(p)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("gen-qa", help="synthesize QA items over scenes")
    p.add_argument("--scenes", required=True)
    p.add_argument("--per-scene", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", help="also write stats JSON (+ distribution figure)")
    p.add_argument("--target-dist", help="JSON object overriding question-type fractions")
    p.add_argument("--no-filter", action="store_true", help="skip quality filtering")
    add_common(p)
    p.set_defaults(func=cmd_gen_qa)

    p = sub.add_parser("gen-traj", help="synthesize training trajectories from QA items")
    p.add_argument("--scenes", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", help="also write corpus stats JSON")
    p.add_argument("--inject-rate", type=float, default=0.25)
    p.add_argument("--progressive-frac", type=float, default=0.70)
    p.add_argument("--render-obs", action="store_true",
                   help="replay records to fill observation hashes (slower)")
    add_common(p)
    p.set_defaults(func=cmd_gen_traj)

    p = sub.add_parser("serve", help="serve the episode protocol")
    p.add_argument("--scenes", required=True)
    p.add_argument("--qa", required=True)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--stdio", action="store_true", help="speak the protocol on stdin/stdout")
    mode.add_argument("--bind", default=_env("BIND", "127.0.0.1:8788"),
                      help="host:port to listen on (env SPATIAL_ARENA_BIND)")
    p.add_argument("--budget", type=int, default=_env("BUDGET", 12, int))
    p.add_argument("--reward-config", help="TOML/JSON reward config file")
    add_common(p, seed=False)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("eval", help="evaluate a scripted policy on a QA set")
    p.add_argument("--scenes", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--policy", choices=("oracle", "random", "bev-guess"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=_env("WORKERS", 4, int))
    p.add_argument("--budget", type=int, default=_env("BUDGET", 12, int))
    p.add_argument("--reward-config")
    add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reward-check", help="verify reward kernels against worked examples")
    p.add_argument("--config", dest="reward_config", help="TOML/JSON reward config file")
    p.add_argument("--plot", help="also write the exploration-reward figure here")
    add_common(p, seed=False)
    p.set_defaults(func=cmd_reward_check)

    p = sub.add_parser("stats", help="summarize scenes (and optionally a QA set)")
    p.add_argument("--scenes", required=True)
    p.add_argument("--qa")
    p.add_argument("--out", required=True)
    add_common(p, seed=False)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _print_provenance(args)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
