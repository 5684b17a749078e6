"""Command-line driver: ``btforge learn|run|simplify|render|eval``.

Exit codes: 0 goal reached / command succeeded, 1 goal not reached,
2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .bloat import prune
from .env import FitnessWeights, Level, LevelError, read_level, run_episode
from .genetics import GpConfig, SelectionMethod
from .learning import EpisodeCache, LearnerConfig, learn
from .text import ParseError, read_bt, to_dot, write_bt
from .tree import BehaviorTree

log = logging.getLogger("btforge")

EXIT_OK, EXIT_GOAL_MISSED, EXIT_USAGE = 0, 1, 2
U64_MAX = 2**64 - 1


class UsageError(Exception):
    pass


def _configure_logging() -> None:
    levels = {"quiet": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    name = os.environ.get("BTFORGE_LOG", "").lower()
    logging.basicConfig(
        level=levels.get(name, logging.WARNING), format="%(levelname)s %(name)s: %(message)s"
    )


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError(f"{value} is outside the unsigned 64-bit range")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _open_unit(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"P_c must lie strictly between 0 and 1, got {value}")
    return value


def bundled_levels() -> dict[str, Path]:
    root = resources.files("btforge") / "levels"
    return {p.name[: -len(".lvl")]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".lvl")}


def resolve_level_path(ref: str) -> Path:
    path = Path(ref)
    if path.exists():
        return path
    bundled = bundled_levels()
    if ref in bundled:
        return bundled[ref]
    raise UsageError(f"level not found: {ref} (bundled: {', '.join(sorted(bundled))})")


def _load_level(ref: str) -> tuple[Level, Path]:
    path = resolve_level_path(ref)
    try:
        return read_level(path), path
    except (LevelError, OSError, UnicodeDecodeError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _load_tree(path: str) -> BehaviorTree:
    try:
        return read_bt(path)
    except ParseError as exc:
        raise UsageError(f"{path}:{exc.line}:{exc.column}: {exc.message}") from None
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


# -- learn ------------------------------------------------------------------


def _config_from_args(args) -> LearnerConfig:
    gp = GpConfig(
        population_size=args.pop_size,
        max_generations=args.generations,
        selection=SelectionMethod(args.selection),
        rank_pc=args.pc,
        seed=args.seed,
        strict_mutation=args.strict_mutation,
    )
    return LearnerConfig(
        tau=args.tau, max_phases=args.max_phases, gp=gp, seed=args.seed, prune=not args.no_prune
    )


def cmd_learn(args) -> int:
    if args.manifest:
        try:
            manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
            config = LearnerConfig.from_dict(manifest["config"])
            level_ref = manifest["level"]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"unreadable manifest {args.manifest}: {exc}") from None
        out = Path(args.out or manifest["outputs"]["tree"])
    else:
        if not args.level or not args.out:
            raise UsageError("learn needs --level and --out (or --manifest)")
        try:
            config = _config_from_args(args)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        level_ref = args.level
        out = Path(args.out)

    level, level_path = _load_level(level_ref)
    started = time.perf_counter()
    result = learn(level, config)
    elapsed = time.perf_counter() - started

    out.parent.mkdir(parents=True, exist_ok=True)
    write_bt(out, result.tree)
    phases_path = _sidecar(out, ".phases.jsonl")
    phases_path.write_text(result.phase_log(), encoding="utf-8")
    episode = run_episode(result.tree, level, config.seed, config.weights)
    trace_path = _sidecar(out, ".trace.jsonl")
    trace_path.write_text(episode.trace_lines(), encoding="utf-8")
    outputs = {"tree": str(out), "phase_log": str(phases_path), "trace": str(trace_path)}
    if result.prune_report is not None:
        prune_path = _sidecar(out, ".prune.json")
        prune_path.write_text(json.dumps(result.prune_report.to_dict(), indent=2) + "\n", encoding="utf-8")
        outputs["prune_report"] = str(prune_path)
    manifest_path = _sidecar(out, ".manifest.json")
    outputs["manifest"] = str(manifest_path)
    manifest = {
        "btforge": __version__,
        "config": config.to_dict(),
        "level": level_ref if not Path(level_ref).exists() else str(level_path),
        "seed": config.seed,
        "outputs": outputs,
        "final_gamma": episode.gamma,
        "solved": result.solved,
        "wall_clock_s": round(elapsed, 3),
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")

    print(
        f"gamma={episode.gamma:.6g} solved={str(result.solved).lower()} "
        f"phases={result.increments} nodes={len(result.tree)} out={out}"
    )
    return EXIT_OK if result.solved else EXIT_GOAL_MISSED


# -- run / simplify / render / eval -----------------------------------------


def cmd_run(args) -> int:
    tree = _load_tree(args.bt)
    level, _ = _load_level(args.level)
    frames: Optional[list[str]] = [] if args.ascii else None
    episode = run_episode(tree, level, args.seed, frames=frames)
    if frames is not None:
        for frame in frames:
            print(frame)
            print()
    if args.trace:
        Path(args.trace).write_text(episode.trace_lines(), encoding="utf-8")
    print(f"gamma={episode.gamma:.6g} terminal={episode.terminal.value} ticks={episode.final.tick}")
    return EXIT_OK if episode.gamma >= 1.0 else EXIT_GOAL_MISSED


def cmd_simplify(args) -> int:
    tree = _load_tree(args.bt)
    level, _ = _load_level(args.level)
    cache = EpisodeCache(level, args.seed, FitnessWeights())
    pruned, report = prune(tree, cache.fitness)
    out = Path(args.out)
    write_bt(out, pruned)
    report_path = Path(args.report) if args.report else _sidecar(out, ".prune.json")
    report_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(
        f"removed={len(report.removed)} nodes={report.initial_nodes}->{report.final_nodes} "
        f"fitness={report.initial_fitness:.6g}->{report.final_fitness:.6g}"
    )
    return EXIT_OK


def ascii_outline(tree: BehaviorTree) -> str:
    lines = []

    def walk(i: int, depth: int) -> None:
        lines.append("  " * depth + tree.nodes[i].kind.label())
        for c in tree.nodes[i].children:
            walk(c, depth + 1)

    walk(tree.root, 0)
    return "\n".join(lines) + "\n"


def cmd_render(args) -> int:
    tree = _load_tree(args.bt)
    sys.stdout.write(to_dot(tree) if args.format == "dot" else ascii_outline(tree))
    return EXIT_OK


def cmd_eval(args) -> int:
    tree = _load_tree(args.bt)
    folder = Path(args.levels)
    if not folder.is_dir():
        raise UsageError(f"not a directory: {folder}")
    paths = sorted(folder.glob("*.lvl"))
    if not paths:
        raise UsageError(f"no .lvl files in {folder}")
    rows = []
    for path in paths:
        level, _ = _load_level(str(path))
        for seed in range(args.seeds):
            ep = run_episode(tree, level, seed)
            rows.append({"level": path.stem, "seed": seed, "gamma": ep.gamma, "terminal": ep.terminal.value})
    gammas = [r["gamma"] for r in rows]
    summary = {"mean": sum(gammas) / len(gammas), "min": min(gammas), "cells": len(rows)}
    if args.json:
        print(json.dumps({"rows": rows, "summary": summary}, indent=2))
    else:
        width = max(len("level"), *(len(r["level"]) for r in rows))
        print(f"{'level':<{width}}  seed  gamma     terminal")
        for r in rows:
            print(f"{r['level']:<{width}}  {r['seed']:>4}  {r['gamma']:<8.6g}  {r['terminal']}")
        print(f"mean={summary['mean']:.6g} min={summary['min']:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="btforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"btforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", help="learn a behavior tree for a level")
    p.add_argument("--level", help="level file, or a bundled level name such as testbed1")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--tau", type=_positive, default=60, help="moving window in ticks")
    p.add_argument("--pop-size", type=_positive, default=GpConfig.population_size)
    p.add_argument("--generations", type=int, default=GpConfig.max_generations)
    p.add_argument("--selection", choices=[m.value for m in SelectionMethod], default="rank")
    p.add_argument("--pc", type=_open_unit, default=2 / 3, help="rank-space top probability")
    p.add_argument("--max-phases", type=_positive, default=64)
    p.add_argument("--out", help="where to write the learned .bt")
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--strict-mutation", action="store_true")
    p.add_argument("--manifest", help="replay the run described by a manifest file")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("run", help="run a tree on a level")
    p.add_argument("--bt", required=True)
    p.add_argument("--level", required=True)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--trace", help="write the per-tick JSON-lines trace here")
    p.add_argument("--ascii", action="store_true", help="print every frame")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simplify", help="anti-bloat pruning of a tree")
    p.add_argument("--bt", required=True)
    p.add_argument("--level", required=True)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="prune report path (default: next to --out)")
    p.set_defaults(func=cmd_simplify)

    p = sub.add_parser("render", help="render a tree as DOT or an ASCII outline")
    p.add_argument("--bt", required=True)
    p.add_argument("--format", choices=["dot", "ascii"], default="ascii")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="fitness table over a directory of levels")
    p.add_argument("--bt", required=True)
    p.add_argument("--levels", required=True)
    p.add_argument("--seeds", type=_positive, default=1)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"btforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
