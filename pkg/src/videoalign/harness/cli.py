"""Command line entry point: ``videoalign {synth,align,eval,viz}``.

Scene directory layout written by ``synth`` and extended by ``align``::

    scene.json            scene spec, pair strategy, intrinsics
    gt/depth_XXXX.pfm     ground-truth depth
    gt/trajectory.txt     ground-truth poses (TUM)
    mono/depth_XXXX.pfm   emulated monocular depth (for --scale-map)
    pairs.bin             pair predictions (binary container)
    corr.bin              ground-truth correspondences (binary container)
    pred/...              aligned depth and trajectory (from align)
    state.bin, align.json full aligned state and run summary (from align)

Errors are reported as one JSON object on stderr with a distinct exit code.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_MALFORMED = 4
EXIT_INVALID_VALUE = 5
EXIT_NUMERICAL = 6

log = logging.getLogger("videoalign")


class UsageError(Exception):
    pass


class MissingInputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class ExperimentConfig:
    """One alignment run: exactly one of ``scene`` or ``input_dir`` is set."""

    scene: object | None = None  # SceneSpec
    input_dir: Path | None = None
    strategy: object | None = None  # Strategy; None means every stored pair
    optim: object = None  # OptimConfig
    out: Path | None = None
    scale_map: bool = False
    corr: Path | None = None
    emit: dict = field(default_factory=lambda: {"depth_png": False, "ply": False, "trajectory_svg": False, "metrics": True})

    def __post_init__(self):
        if (self.scene is None) == (self.input_dir is None):
            raise UsageError("exactly one input source is required: --in DIR or --frames N")


# --------------------------------------------------------------------------
# argument parsing


def _add_strategy(p):
    p.add_argument("--strategy", choices=["window", "strided", "hierarchical"])
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--clip-length", type=int, default=10)


def _add_scene(p, frames_default):
    p.add_argument("--frames", type=int, default=frames_default)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--path", choices=["line", "arc", "random_walk"], default="line")
    p.add_argument("--noise", type=float, default=0.0, help="relative point-map noise (fraction of depth)")
    p.add_argument("--correlation", type=float, default=0.0, help="share of noise common to a frame's edges")
    p.add_argument("--edge-scale-range", type=float, default=1.0)
    p.add_argument("--blobs", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="videoalign", description="Global alignment of pairwise point maps.")
    ap.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread count")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic scene and its pair predictions")
    _add_scene(s, 10)
    _add_strategy(s)
    s.add_argument("--corr-per-edge", type=int, default=64)
    s.add_argument("--out", type=Path, required=True)

    a = sub.add_parser("align", help="optimize depth, poses and edge scales")
    a.add_argument("--in", dest="input", type=Path)
    _add_scene(a, None)
    _add_strategy(a)
    a.add_argument("--iters", type=int, default=300)
    a.add_argument("--lr", type=float, default=0.05)
    a.add_argument("--schedule", choices=["cosine", "constant"], default="cosine")
    a.add_argument("--residual", choices=["3d", "depth"], default="3d")
    a.add_argument("--scale-map", action="store_true", help="optimize scale maps over monocular depth")
    a.add_argument("--corr", type=Path, help="correspondence container")
    a.add_argument("--corr-weight", type=float, default=0.01)
    a.add_argument("--out", type=Path)

    e = sub.add_parser("eval", help="compare aligned output against ground truth")
    e.add_argument("--in", dest="input", type=Path)
    e.add_argument("--gt", type=Path, help="directory with depth_*.pfm and trajectory.txt")
    e.add_argument("--pred", type=Path, help="directory with depth_*.pfm and trajectory.txt")
    e.add_argument("--se3", action="store_true", help="rigid instead of similarity trajectory alignment")
    e.add_argument("--out", type=Path, help="metrics JSON path")

    v = sub.add_parser("viz", help="write depth colormaps, point clouds and a trajectory plot")
    v.add_argument("--in", dest="input", type=Path, required=True)
    v.add_argument("--which", choices=["pred", "gt"], default=None)
    v.add_argument("--out", type=Path)

    for p in (s, a, e, v):
        p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return ap


def _strategy(args):
    from ..viewgraph import Strategy

    if args.strategy is None:
        return None
    return Strategy(args.strategy, window=args.window, stride=args.stride, clip_length=args.clip_length)


def _scene_spec(args):
    from .synth import NoiseModel, SceneSpec

    noise = NoiseModel(relative_sigma=args.noise, correlation=args.correlation, edge_scale_range=args.edge_scale_range)
    return SceneSpec(
        frame_count=args.frames,
        width=args.width,
        height=args.height,
        path=args.path,
        blobs=args.blobs,
        noise=noise,
        seed=args.seed,
    )


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingInputError(f"missing input: {path}")
    return path


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> dict:
    from ..evaluation import DepthSequence
    from ..viewgraph import Strategy, enumerate_pairs
    from . import io
    from .synth import mono_depths, synth_scene

    spec = _scene_spec(args)
    strategy = _strategy(args) or Strategy.symmetric_window(args.window)
    graph = enumerate_pairs(spec.frame_count, strategy)
    scene = synth_scene(spec)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(
        out / "scene.json",
        {"spec": spec.to_dict(), "strategy": strategy.to_dict(), "intrinsics": io.intrinsics_to_dict(scene.intrinsics)},
    )
    io.write_depth_sequence(out / "gt", scene.depth_sequence)
    io.write_tum(out / "gt" / "trajectory.txt", scene.trajectory)
    io.write_depth_sequence(out / "mono", DepthSequence(mono_depths(scene)))
    io.write_pairs(out / "pairs.bin", scene.render_pairs(graph))
    io.write_correspondences(out / "corr.bin", scene.correspondences(graph.edges, per_edge=args.corr_per_edge))
    log.info("wrote %d frames and %d pairs to %s", spec.frame_count, len(graph), out)
    return {"frames": spec.frame_count, "pairs": len(graph), "out": str(out)}


def _experiment(args) -> ExperimentConfig:
    from ..alignment import OptimConfig

    if args.input is not None and args.frames is not None:
        raise UsageError("give either --in DIR or --frames N, not both")
    scene = None if args.input is not None or args.frames is None else _scene_spec(args)
    optim = OptimConfig(
        iterations=args.iters,
        learning_rate=args.lr,
        schedule=args.schedule,
        residual=args.residual,
        correspondence_weight=args.corr_weight,
        clip_length=args.clip_length,
    )
    out = args.out or args.input
    if out is None:
        raise UsageError("--out is required when aligning a scene generated on the fly")
    return ExperimentConfig(scene, args.input, _strategy(args), optim, out, args.scale_map, args.corr)


def cmd_align(args) -> dict:
    from ..alignment import initial_state, optimize_global, optimize_hierarchical, optimize_scale_maps
    from ..alignment.hierarchical import PairAccounting
    from ..evaluation import DepthSequence, Trajectory
    from ..viewgraph import Strategy, enumerate_pairs
    from . import io
    from .synth import mono_depths, synth_scene

    exp = _experiment(args)
    t0 = time.perf_counter()
    mono = None
    if exp.scene is not None:
        scene = synth_scene(exp.scene)
        frame_count, k = scene.frame_count, scene.intrinsics
        strategy = exp.strategy or Strategy.symmetric_window(10)
        provider = scene.render_pairs
        stored = None
        if exp.scale_map:
            mono = list(mono_depths(scene))
    else:
        root = exp.input_dir
        meta = io.read_json(_require(root / "scene.json"))
        k = io.intrinsics_from_dict(meta["intrinsics"])
        frame_count = int(meta["spec"]["frame_count"])
        pf = io.PairFile(_require(root / "pairs.bin"))
        strategy = exp.strategy
        provider = pf.load
        stored = pf.edges
        if exp.scale_map:
            mono = list(io.read_depth_sequence(_require(root / "mono")).frames)
    corr = io.read_correspondences(_require(exp.corr)) if exp.corr is not None else None
    ks = [k] * frame_count

    if strategy is not None and strategy.kind == "hierarchical":
        if exp.scale_map or corr is not None:
            raise UsageError("--scale-map and --corr are not supported with the hierarchical strategy")
        res = optimize_hierarchical(provider, frame_count, exp.optim, ks)
        state, trace = res.state, res.energy_trace
        evaluated, peak = res.pairs_evaluated, res.peak_resident_pairs
    else:
        edges = stored if strategy is None else list(enumerate_pairs(frame_count, strategy).edges)
        acct = PairAccounting(provider)
        pairs = acct.acquire(edges)
        if exp.scale_map:
            r = optimize_scale_maps(pairs, mono, exp.optim, intrinsics=ks)
            state = r.state.to_alignment_state()
        else:
            r = optimize_global(pairs, initial_state(pairs, frame_count, ks), exp.optim, corr=corr)
            state = r.state
        trace, evaluated, peak = r.energy_trace, acct.total, acct.peak_resident
    elapsed = time.perf_counter() - t0
    log.info("aligned %d frames using %d pairs (peak resident %d)", frame_count, evaluated, peak)

    out = exp.out
    out.mkdir(parents=True, exist_ok=True)
    io.write_depth_sequence(out / "pred", DepthSequence(state.depths))
    io.write_tum(out / "pred" / "trajectory.txt", Trajectory.from_poses(state.poses, dt=1.0 / 30.0))
    io.write_state(out / "state.bin", state)
    summary = {
        "frames": frame_count,
        "pairs_evaluated": evaluated,
        "peak_resident_pairs": peak,
        "strategy": strategy.to_dict() if strategy is not None else "stored",
        "config": exp.optim.to_dict(),
        "scale_map": exp.scale_map,
        "correspondences": 0 if corr is None else len(corr),
        "initial_energy": trace[0],
        "final_energy": trace[-1],
        "seconds": elapsed,
    }
    if exp.scene is not None:
        summary["scene"] = exp.scene.to_dict()
        io.write_depth_sequence(out / "gt", scene.depth_sequence)
        io.write_tum(out / "gt" / "trajectory.txt", scene.trajectory)
    io.write_json(out / "align.json", summary)
    return summary


def cmd_eval(args) -> dict:
    from ..evaluation import evaluate
    from . import io

    if args.input is None and (args.gt is None or args.pred is None):
        raise UsageError("give --in DIR or both --gt and --pred")
    gt_dir = args.gt or args.input / "gt"
    pred_dir = args.pred or args.input / "pred"
    gt_depth = io.read_depth_sequence(_require(gt_dir))
    pred_depth = io.read_depth_sequence(_require(pred_dir))
    gt_traj = io.read_tum(_require(gt_dir / "trajectory.txt"))
    pred_traj = io.read_tum(_require(pred_dir / "trajectory.txt"))
    rep = evaluate(pred_depth, gt_depth, pred_traj, gt_traj, with_scale=not args.se3)
    metrics = rep.to_dict()
    out = args.out or ((args.input or pred_dir) / "metrics.json")
    io.write_json(out, metrics)
    return metrics


def cmd_viz(args) -> dict:
    from . import io
    from .viz import write_depth_pngs, write_point_clouds, write_trajectory_svg

    root = args.input
    which = args.which or ("pred" if (root / "pred").exists() else "gt")
    seq = io.read_depth_sequence(_require(root / which))
    traj = io.read_tum(_require(root / which / "trajectory.txt"))
    if which == "pred" and (root / "state.bin").exists():
        ks = io.read_state(root / "state.bin").intrinsics
    else:
        k = io.intrinsics_from_dict(io.read_json(_require(root / "scene.json"))["intrinsics"])
        ks = (k,) * len(seq)
    out = args.out or root / "viz"
    out.mkdir(parents=True, exist_ok=True)
    pngs = write_depth_pngs(out, seq)
    plys = write_point_clouds(out, seq, traj.poses, ks)
    trajs = {which: traj}
    if which == "pred" and (root / "gt" / "trajectory.txt").exists():
        from ..evaluation import align_trajectory

        gt = io.read_tum(root / "gt" / "trajectory.txt")
        _, aligned = align_trajectory(traj, gt)
        trajs = {"gt": gt, "pred (Sim3-aligned)": aligned}
    write_trajectory_svg(out / "trajectory.svg", trajs)
    return {"source": which, "png": len(pngs), "ply": len(plys), "svg": str(out / "trajectory.svg")}


COMMANDS = {"synth": cmd_synth, "align": cmd_align, "eval": cmd_eval, "viz": cmd_viz}


def _exit_code(exc: BaseException) -> int:
    from ..errors import DegenerateInputError, DivergenceError, FormatError

    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (MissingInputError, FileNotFoundError, KeyError)):
        return EXIT_MISSING_INPUT
    if isinstance(exc, (FormatError, json.JSONDecodeError)):
        return EXIT_MALFORMED
    if isinstance(exc, (DivergenceError, DegenerateInputError, ArithmeticError)):
        return EXIT_NUMERICAL
    if isinstance(exc, ValueError):
        return EXIT_INVALID_VALUE
    return EXIT_INTERNAL


def _set_threads(n: int | None) -> None:
    # only effective before numpy loads its BLAS, i.e. in a fresh process
    if n is None:
        return
    if n < 1:
        raise UsageError(f"--threads must be >= 1, got {n}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _set_threads(args.threads)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
            force=True,
        )
        logging.getLogger("matplotlib").setLevel(logging.WARNING)
        result = COMMANDS[args.command](args)
    except Exception as exc:  # reported as JSON, never as a traceback
        code = _exit_code(exc)
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(json.dumps({"error": type(exc).__name__, "message": msg, "exit_code": code}), file=sys.stderr)
        return code
    print(json.dumps(result, indent=2, sort_keys=True, default=float))
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
