"""Adam + cosine schedule over log-depth, SE(3) twists, log-focal and log edge scales."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError, EmptySelectionError
from ..geometry import DepthMap, Intrinsics, Pose, so3_exp, _so3_left_jacobian
from .energy import CorrespondenceBatch, Gradient, PairBatch, Params, correspondence_energy, pointmap_energy
from .types import AlignmentState, CorrespondenceSet, OptimConfig, PairPrediction, ScaleMapState

log = logging.getLogger(__name__)


class Adam:
    """Adam on a dict of arrays; returns the update instead of applying it."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        out = {}
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            out[k] = -(lr / bc1) * m / (np.sqrt(v / bc2) + self.epsilon)
        return out


def cosine_lr(it: int, total: int, lr0: float, lr_min: float = 0.0) -> float:
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * it / total))


def learning_rate(config: OptimConfig, it: int) -> float:
    if config.schedule == "constant":
        return config.learning_rate
    return cosine_lr(it, config.iterations, config.learning_rate, config.min_learning_rate)


@dataclass
class OptimResult:
    state: AlignmentState
    energy_trace: list[float]
    pairs_evaluated: int
    skipped_correspondences: int = 0
    peak_resident_pairs: int = 0

    @property
    def initial_energy(self) -> float:
        return self.energy_trace[0]

    @property
    def final_energy(self) -> float:
        return self.energy_trace[-1]


@dataclass
class ScaleMapResult:
    state: ScaleMapState
    energy_trace: list[float]
    pairs_evaluated: int


# --------------------------------------------------------------------------
# initialization


def _resolve_intrinsics(intrinsics, frame_count: int, shape: tuple[int, int]) -> tuple[Intrinsics, ...]:
    H, W = shape
    if intrinsics is None:
        return tuple(Intrinsics.fallback(W, H) for _ in range(frame_count))
    if isinstance(intrinsics, Intrinsics):
        return tuple(intrinsics for _ in range(frame_count))
    ks = tuple(intrinsics)
    if len(ks) != frame_count:
        raise ValueError(f"expected {frame_count} intrinsics, got {len(ks)}")
    return ks


def incident_median_depth(pairs: list[PairPrediction], frame: int, scales: dict | None = None) -> float | None:
    zs = []
    for pp in pairs:
        s = 1.0 if scales is None else scales.get(pp.edge, 1.0)
        for v, x, c in ((pp.edge.n, pp.x_n, pp.c_n), (pp.edge.m, pp.x_m, pp.c_m)):
            if v == frame:
                ok = x.valid & (c.weights > 0)
                z = x.points[..., 2][ok] * s
                zs.append(z[z > 0])
    if not zs:
        return None
    z = np.concatenate(zs)
    return float(np.median(z)) if z.size else None


def initial_state(
    pairs: list[PairPrediction],
    frame_count: int,
    intrinsics=None,
    mono_depths: list[DepthMap] | None = None,
) -> AlignmentState:
    """Identity poses, unit edge scales, and a constant median depth per frame
    (or the supplied monocular depths)."""
    if not pairs:
        raise ValueError("at least one pair prediction is required")
    shape = pairs[0].shape
    ks = _resolve_intrinsics(intrinsics, frame_count, shape)
    if mono_depths is not None:
        depths = tuple(mono_depths)
    else:
        meds = [incident_median_depth(pairs, v) for v in range(frame_count)]
        known = [m for m in meds if m is not None]
        if not known:
            raise EmptySelectionError("no valid positive depth in any point map")
        fallback = float(np.median(known))
        depths = tuple(DepthMap(np.full(shape, m if m is not None else fallback)) for m in meds)
    edges = tuple(pp.edge for pp in pairs)
    return AlignmentState(depths, tuple(Pose.identity() for _ in range(frame_count)), ks, edges, np.ones(len(edges)))


# --------------------------------------------------------------------------
# depth parameterizations


class _DirectDepth:
    def __init__(self, params: Params):
        self.value = params.log_depth.copy()

    def log_depth(self) -> np.ndarray:
        return self.value

    def pullback(self, g: np.ndarray) -> np.ndarray:
        return g

    def shift(self, c: float) -> None:
        self.value -= c


def bilinear_weights(size: int, nodes: int) -> np.ndarray:
    """(size, nodes) interpolation matrix, nodes spread evenly over [0, size-1]."""
    A = np.zeros((size, nodes))
    if nodes == 1 or size == 1:
        A[:, 0] = 1.0
        return A
    s = np.arange(size) * (nodes - 1) / (size - 1)
    i0 = np.minimum(np.floor(s).astype(int), nodes - 2)
    f = s - i0
    A[np.arange(size), i0] = 1.0 - f
    A[np.arange(size), i0 + 1] = f
    return A


class _ScaleGridDepth:
    """log D = log D_mono + Ay @ L @ Ax^T with L a coarse log-scale grid per frame."""

    def __init__(self, log_mono: np.ndarray, grid: tuple[int, int] | None):
        N, H, W = log_mono.shape
        gh, gw = grid if grid is not None else (H, W)
        self.Ay = np.eye(H) if grid is None else bilinear_weights(H, gh)
        self.Ax = np.eye(W) if grid is None else bilinear_weights(W, gw)
        self.log_mono = log_mono
        self.value = np.zeros((N, gh, gw))

    def log_scale(self) -> np.ndarray:
        return np.einsum("hi,nij,wj->nhw", self.Ay, self.value, self.Ax)

    def log_depth(self) -> np.ndarray:
        return self.log_mono + self.log_scale()

    def pullback(self, g: np.ndarray) -> np.ndarray:
        return np.einsum("hi,nhw,wj->nij", self.Ay, g, self.Ax)

    def shift(self, c: float) -> None:
        self.value -= c


# --------------------------------------------------------------------------
# main loop


def _retract_all(R: np.ndarray, t: np.ndarray, twists: np.ndarray) -> None:
    for i, tw in enumerate(twists):
        if not tw.any():
            continue
        dR = so3_exp(tw[3:])
        dt = _so3_left_jacobian(tw[3:]) @ tw[:3]
        R[i] = dR @ R[i]
        t[i] = dR @ t[i] + dt


def _run(
    params: Params,
    depth_param,
    batch: PairBatch,
    config: OptimConfig,
    corr: CorrespondenceBatch | None,
    frozen: np.ndarray,
) -> tuple[list[float], int]:
    """Runs the Adam loop in place on ``params``/``depth_param``; returns (trace, skipped)."""
    scale_gauge = not config.freeze_depth and not frozen.any()
    adam = Adam(config.beta1, config.beta2, config.epsilon)
    use_corr = corr is not None and len(corr) > 0 and config.correspondence_weight > 0
    trace: list[float] = []
    skipped = 0

    def evaluate(with_grad: bool):
        params.log_depth = depth_param.log_depth()
        e, g = pointmap_energy(params, batch, config.residual, scale_gauge, with_grad)
        s = 0
        if use_corr:
            ec, gc, s = correspondence_energy(params, corr, config.correspondence_weight, with_grad)
            e += ec
            if with_grad:
                g = g + gc
        return e, g, s

    for it in range(config.iterations):
        e, g, skipped = evaluate(True)
        if not math.isfinite(e):
            raise DivergenceError(it, e)
        trace.append(e)

        gd = g.log_depth.copy()
        tw = g.twist.copy()
        gf = g.log_focal.copy()
        gd[frozen] = 0.0
        tw[frozen] = 0.0
        gf[frozen] = 0.0
        if config.freeze_depth:
            gd[:] = 0.0
        if config.freeze_poses:
            tw[:] = 0.0
        if not config.optimize_focal:
            gf[:] = 0.0
        grads = {"depth": depth_param.pullback(gd), "twist": tw, "focal": gf, "sigma": g.log_sigma}
        if max(float(np.abs(v).max(initial=0.0)) for v in grads.values()) <= config.gradient_tolerance:
            continue
        step = adam.step(grads, learning_rate(config, it))

        depth_param.value += step["depth"]
        _retract_all(params.R, params.t, step["twist"])
        params.log_focal += step["focal"]
        params.log_sigma += step["sigma"]
        if scale_gauge:
            c = float(np.mean(params.log_sigma))
            params.log_sigma -= c
            depth_param.shift(c)
            # np.exp overflows to inf instead of raising, so divergence is reported by the next evaluation
            params.t *= np.exp(-c)

    e, _, skipped = evaluate(False)
    if not math.isfinite(e):
        raise DivergenceError(config.iterations, e)
    trace.append(e)
    return trace, skipped


def _prepare(pairs, init: AlignmentState):
    params = Params.from_state(init)
    order = {e: i for i, e in enumerate(init.edges)}
    missing = [pp.edge for pp in pairs if pp.edge not in order]
    if missing:
        raise ValueError(f"initial state has no scale for edge ({missing[0].n}, {missing[0].m})")
    params.log_sigma = params.log_sigma[[order[pp.edge] for pp in pairs]].copy()
    batch = PairBatch(pairs)
    batch.check_frames(params.frame_count, params.shape)
    return params, batch


def optimize_global(
    pairs: list[PairPrediction],
    init: AlignmentState | None = None,
    config: OptimConfig | None = None,
    corr: CorrespondenceSet | None = None,
    frame_count: int | None = None,
    frozen_frames=(),
) -> OptimResult:
    config = config or OptimConfig()
    if init is None:
        if frame_count is None:
            frame_count = 1 + max(max(pp.edge.n, pp.edge.m) for pp in pairs)
        init = initial_state(pairs, frame_count)
    params, batch = _prepare(pairs, init)
    cb = None
    if corr is not None:
        H, W = params.shape
        corr.check_range(params.frame_count, W, H)
        cb = CorrespondenceBatch(corr, W)
    frozen = np.zeros(params.frame_count, dtype=bool)
    frozen[list(frozen_frames)] = True
    depth_param = _DirectDepth(params)
    trace, skipped = _run(params, depth_param, batch, config, cb, frozen)
    params.log_depth = depth_param.log_depth()
    log.debug("optimize_global: %d pairs, energy %.3e -> %.3e", len(batch), trace[0], trace[-1])
    state = params.to_state(batch.edges)
    return OptimResult(state, trace, len(batch), skipped, len(batch))


def optimize_scale_maps(
    pairs: list[PairPrediction],
    mono_depths: list[DepthMap],
    config: OptimConfig | None = None,
    init: AlignmentState | None = None,
    intrinsics=None,
) -> ScaleMapResult:
    """Align fixed monocular depths through per-frame multiplicative scale maps.

    The scale map is bilinear in log space over a ``config.scale_grid`` control
    grid (``None`` gives one free scale per pixel).
    """
    config = config or OptimConfig()
    N = len(mono_depths)
    for i, d in enumerate(mono_depths):
        if not d.valid.any():
            raise EmptySelectionError(f"monocular depth for frame {i} has no valid pixel")
    if init is None:
        init = initial_state(pairs, N, intrinsics=intrinsics, mono_depths=mono_depths)
    else:
        init = AlignmentState(tuple(mono_depths), init.poses, init.intrinsics, init.edges, init.edge_scales)
    params, batch = _prepare(pairs, init)
    depth_param = _ScaleGridDepth(params.log_depth.copy(), config.scale_grid)
    trace, _ = _run(params, depth_param, batch, config, None, np.zeros(N, dtype=bool))
    params.log_depth = depth_param.log_depth()
    full = params.to_state(batch.edges)
    scale_maps = tuple(np.exp(depth_param.log_scale()))
    state = ScaleMapState(scale_maps, tuple(mono_depths), full.poses, full.intrinsics, full.edges, full.edge_scales)
    return ScaleMapResult(state, trace, len(batch))
