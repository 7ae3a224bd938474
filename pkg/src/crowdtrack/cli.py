"""Command-line interface: scene synthesis, tracking, evaluation, benchmarks.

Every option can also come from a ``key=value`` config file passed with
``--config``; explicit command-line flags override file values, which in
turn override built-in defaults.  Boolean keys accept true/false, yes/no,
or 1/0.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .pipeline import (
    TrackerConfig,
    TrackSet,
    accuracy_curve,
    bench_solvers,
    read_bench_csv,
    track_sequence,
    write_bench_csv,
)
from .sampling import PruneConfig
from .scene import GroundTruth, SceneConfig, generate_scene, load_frames, save_scene
from .solver import SolverConfig

__all__ = ["main"]

SOLVER_NAMES = {"fw": "fw", "away": "fw_away", "swap": "fw_swap",
                "exact": "exact"}


def _parse_bool(text: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_sizes(text: str) -> list[int]:
    sizes = [int(part) for part in str(text).split(",") if part.strip()]
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError(f"sizes must be positive integers, got {text!r}")
    return sizes


# per-subcommand option converters, also the set of legal config-file keys
OPTION_TYPES = {
    "synth": {
        "targets": int, "frames": int, "groups": int, "palette": int,
        "seed": int, "out": str,
    },
    "track": {
        "frames": str, "init": str, "out": str,
        "no_motion": _parse_bool, "no_nmotion": _parse_bool,
        "no_proximity": _parse_bool, "no_group": _parse_bool,
        "appearance": str, "solver": str, "eps": float,
        "prune_m": int, "no_prune": _parse_bool,
        "zeta": float, "eta": float, "trace": str, "patch_size": int,
    },
    "eval": {
        "tracks": str, "gt": str, "max_thresh": int, "out": str,
    },
    "bench": {
        "sizes": _parse_sizes, "seeds": int, "out": str,
    },
    "plot": {
        "input": str, "out": str,
    },
}

DEFAULTS = {
    "synth": {"groups": 4, "palette": 4, "seed": 0},
    "track": {
        "no_motion": False, "no_nmotion": False, "no_proximity": False,
        "no_group": False, "appearance": "ridge", "solver": "swap",
        "eps": 0.01, "prune_m": 3, "no_prune": False,
        "zeta": 0.3, "eta": 0.2,
    },
    "eval": {"max_thresh": 50},
    "bench": {"sizes": [25, 50, 100, 200], "seeds": 5},
    "plot": {},
}

REQUIRED = {
    "synth": ("targets", "frames", "out"),
    "track": ("frames", "init", "out"),
    "eval": ("tracks", "gt", "out"),
    "bench": ("out",),
    "plot": ("input", "out"),
}


class CliError(Exception):
    pass


def _read_config(path: str, command: str) -> dict:
    """Parse a key=value file; keys use the flag spelling with underscores."""
    types = OPTION_TYPES[command]
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in types:
            raise CliError(f"{path}:{lineno}: unknown option {key!r} "
                           f"for {command}")
        try:
            values[key] = types[key](value.strip())
        except ValueError as exc:
            raise CliError(f"{path}:{lineno}: {exc}") from exc
    return values


def _resolve(args: argparse.Namespace, command: str) -> dict:
    """Defaults, then config-file values, then explicit flags."""
    merged = dict(DEFAULTS[command])
    if args.config is not None:
        merged.update(_read_config(args.config, command))
    for key in OPTION_TYPES[command]:
        value = getattr(args, key)
        if value is not None:
            merged[key] = value
    missing = [k for k in REQUIRED[command] if merged.get(k) is None]
    if missing:
        flags = ", ".join("--" + ("in" if k == "input" else k.replace("_", "-"))
                          for k in missing)
        raise CliError(f"{command}: missing required option(s): {flags}")
    return merged


def _cmd_synth(opts: dict) -> int:
    config = SceneConfig(
        n_targets=opts["targets"], n_frames=opts["frames"],
        n_groups=opts["groups"], palette_size=opts["palette"],
        seed=opts["seed"],
    )
    frames, truth = generate_scene(config)
    save_scene(opts["out"], frames, truth)
    print(f"wrote {len(frames)} frames and gt.csv to {opts['out']}")
    return 0


def _tracker_config(opts: dict) -> TrackerConfig:
    if opts["solver"] not in SOLVER_NAMES:
        raise CliError(f"unknown solver {opts['solver']!r}; "
                       f"choose from {sorted(SOLVER_NAMES)}")
    if opts["appearance"] not in ("ridge", "ncc"):
        raise CliError(f"unknown appearance backend {opts['appearance']!r}")
    solver = SolverConfig(variant=SOLVER_NAMES[opts["solver"]],
                          epsilon=opts["eps"])
    prune = None if opts["no_prune"] else PruneConfig(m=opts["prune_m"])
    patch = opts.get("patch_size")
    return TrackerConfig(
        motion_weight=opts["zeta"],
        neighbor_weight=opts["eta"],
        use_motion=not opts["no_motion"],
        use_neighbor_motion=not opts["no_nmotion"],
        use_proximity=not opts["no_proximity"],
        use_group=not opts["no_group"],
        appearance=opts["appearance"],
        solver=solver,
        prune=prune,
        patch_size=(patch, patch) if patch is not None else None,
    )


def _write_trace(path: str, summaries) -> None:
    """Concatenate per-frame solver traces under one frame column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "iteration", "objective", "gap",
                         "step_kind", "lambda", "wall_time_us"])
        for summary in summaries:
            trace = summary.trace
            for i in range(len(trace.objective)):
                writer.writerow([
                    summary.frame, i, repr(trace.objective[i]),
                    repr(trace.gap[i]), trace.step_kind[i],
                    repr(trace.step_lambda[i]), trace.wall_time_us[i],
                ])


def _cmd_track(opts: dict) -> int:
    frames = load_frames(opts["frames"])
    init = GroundTruth.from_csv(opts["init"])
    tracks, summaries = track_sequence(frames, init, _tracker_config(opts))
    tracks.to_csv(opts["out"])
    if opts.get("trace") is not None:
        _write_trace(opts["trace"], summaries)
    coasted = sum(1 for s in summaries if not s.converged)
    print(f"tracked {len(frames)} frames -> {opts['out']} "
          f"({coasted} coasted)")
    return 0


def _cmd_eval(opts: dict) -> int:
    tracks = TrackSet.from_csv(opts["tracks"])
    truth = GroundTruth.from_csv(opts["gt"])
    curve = accuracy_curve(tracks, truth, max_threshold=opts["max_thresh"])
    curve.to_csv(opts["out"])
    print(f"wrote accuracy for thresholds 1..{opts['max_thresh']} "
          f"to {opts['out']}")
    return 0


def _cmd_bench(opts: dict) -> int:
    rows = bench_solvers(opts["sizes"], seeds=opts["seeds"])
    write_bench_csv(opts["out"], rows)
    print(f"wrote {len(rows)} benchmark rows to {opts['out']}")
    return 0


def _read_curve_rows(path: str):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    return header, rows


def _cmd_plot(opts: dict) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    header, rows = _read_curve_rows(opts["input"])
    fig, ax = plt.subplots(figsize=(6, 4))
    if header == ["threshold", "accuracy"]:
        xs = [int(r[0]) for r in rows]
        ys = [float(r[1]) for r in rows]
        ax.plot(xs, ys, marker="o", markersize=3)
        ax.set_xlabel("distance threshold (px)")
        ax.set_ylabel("fraction of targets within threshold")
        ax.set_ylim(0.0, 1.05)
    elif header == ["size", "seed", "variant", "n_variables", "iterations",
                    "wall_time_s", "final_objective", "final_gap",
                    "converged"]:
        by_variant: dict[str, dict[int, list[float]]] = {}
        for r in rows:
            by_variant.setdefault(r[2], {}).setdefault(int(r[0]), []).append(
                float(r[5]))
        for variant in sorted(by_variant):
            sizes = sorted(by_variant[variant])
            means = [sum(by_variant[variant][s]) / len(by_variant[variant][s])
                     for s in sizes]
            ax.plot(sizes, means, marker="o", markersize=3, label=variant)
        ax.set_xlabel("targets")
        ax.set_ylabel("mean wall time (s)")
        ax.legend()
    else:
        raise CliError(f"unrecognized input header {header} in "
                       f"{opts['input']}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(opts["out"], format="svg")
    plt.close(fig)
    print(f"wrote {opts['out']}")
    return 0


COMMANDS = {
    "synth": _cmd_synth,
    "track": _cmd_track,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "plot": _cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdtrack",
        description="Crowd tracking via per-frame assignment programs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic scene")
    synth.add_argument("--targets", type=int)
    synth.add_argument("--frames", type=int)
    synth.add_argument("--groups", type=int)
    synth.add_argument("--palette", type=int)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--out")

    track = sub.add_parser("track", help="track targets through saved frames")
    track.add_argument("--frames")
    track.add_argument("--init")
    track.add_argument("--out")
    track.add_argument("--no-motion", action="store_true", default=None)
    track.add_argument("--no-nmotion", action="store_true", default=None)
    track.add_argument("--no-proximity", action="store_true", default=None)
    track.add_argument("--no-group", action="store_true", default=None)
    track.add_argument("--appearance", choices=["ridge", "ncc"])
    track.add_argument("--solver", choices=sorted(SOLVER_NAMES))
    track.add_argument("--eps", type=float)
    prune = track.add_mutually_exclusive_group()
    prune.add_argument("--prune-m", type=int)
    prune.add_argument("--no-prune", action="store_true", default=None)
    track.add_argument("--zeta", type=float)
    track.add_argument("--eta", type=float)
    track.add_argument("--trace")
    track.add_argument("--patch-size", type=int)

    evaluate = sub.add_parser("eval", help="accuracy curve against truth")
    evaluate.add_argument("--tracks")
    evaluate.add_argument("--gt")
    evaluate.add_argument("--max-thresh", type=int)
    evaluate.add_argument("--out")

    bench = sub.add_parser("bench", help="time solver variants")
    bench.add_argument("--sizes", type=_parse_sizes)
    bench.add_argument("--seeds", type=int)
    bench.add_argument("--out")

    plot = sub.add_parser("plot", help="render a curve or bench CSV as SVG")
    plot.add_argument("--in", dest="input")
    plot.add_argument("--out")

    for name, p in zip(("synth", "track", "eval", "bench", "plot"),
                       (synth, track, evaluate, bench, plot)):
        p.add_argument("--config", help="key=value file with option defaults")
        p.set_defaults(command=name)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = _resolve(args, args.command)
        return COMMANDS[args.command](opts)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
