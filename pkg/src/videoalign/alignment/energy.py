"""Confidence-weighted point-map alignment energy and its analytic gradient.

For edge e = (n, m) and view v in {n, m} the residual at pixel p is

    r = D_v(p) * ray_v(p)  -  R_v^T (R_n (sigma_e X_v^e(p)) + t_n - t_v)

i.e. the prediction is scaled into the global frame inside camera n and then
moved rigidly into camera v. In ``depth`` mode only the z component is kept.
With ``scale_gauge`` the energy is divided by the squared geometric mean of
the edge scales, which makes it invariant to a global similarity and equal
to the plain sum whenever prod(sigma) = 1.

Pose gradients are left-perturbation twists ``(rho, theta)``; depth, focal
and edge-scale gradients are taken in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatchError
from ..geometry import DepthMap, Intrinsics, Pose
from .types import AlignmentState, CorrespondenceSet, PairPrediction


@dataclass
class Params:
    """Flat, mutable optimizer view of an :class:`AlignmentState`."""

    log_depth: np.ndarray  # (N, H, W)
    depth_valid: np.ndarray  # (N, H, W) bool
    R: np.ndarray  # (N, 3, 3)
    t: np.ndarray  # (N, 3)
    log_focal: np.ndarray  # (N,) log multiplier on (fx, fy)
    fx0: np.ndarray
    fy0: np.ndarray
    cx: np.ndarray
    cy: np.ndarray
    log_sigma: np.ndarray  # (E,)

    @property
    def frame_count(self) -> int:
        return self.log_depth.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.log_depth.shape[1:]

    @classmethod
    def from_state(cls, state: AlignmentState) -> "Params":
        ld = np.stack([np.where(d.valid, np.log(np.where(d.valid, d.values, 1.0)), 0.0) for d in state.depths])
        return cls(
            log_depth=ld,
            depth_valid=np.stack([d.valid for d in state.depths]),
            R=np.stack([p.rotation for p in state.poses]),
            t=np.stack([p.translation for p in state.poses]),
            log_focal=np.zeros(state.frame_count),
            fx0=np.array([k.fx for k in state.intrinsics]),
            fy0=np.array([k.fy for k in state.intrinsics]),
            cx=np.array([k.cx for k in state.intrinsics]),
            cy=np.array([k.cy for k in state.intrinsics]),
            log_sigma=np.log(state.edge_scales),
        )

    def copy(self) -> "Params":
        return Params(**{k: v.copy() for k, v in self.__dict__.items()})

    def focal(self) -> tuple[np.ndarray, np.ndarray]:
        s = np.exp(self.log_focal)
        return self.fx0 * s, self.fy0 * s

    def rays(self) -> np.ndarray:
        """(N, H*W, 3) unit-z rays under the current focals."""
        H, W = self.shape
        v, u = np.mgrid[0:H, 0:W].astype(np.float64)
        fx, fy = self.focal()
        rx = (u.reshape(1, -1) - self.cx[:, None]) / fx[:, None]
        ry = (v.reshape(1, -1) - self.cy[:, None]) / fy[:, None]
        return np.stack([rx, ry, np.ones_like(rx)], axis=-1)

    def to_state(self, edges) -> AlignmentState:
        H, W = self.shape
        fx, fy = self.focal()
        depths = tuple(
            DepthMap(np.where(ok, np.exp(ld), np.nan), ok) for ld, ok in zip(self.log_depth, self.depth_valid)
        )
        poses = tuple(Pose(_reortho(R), t) for R, t in zip(self.R, self.t))
        ks = tuple(Intrinsics(fx[i], fy[i], self.cx[i], self.cy[i], W, H) for i in range(self.frame_count))
        return AlignmentState(depths, poses, ks, tuple(edges), np.exp(self.log_sigma))


def _reortho(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt


@dataclass
class Gradient:
    log_depth: np.ndarray  # (N, H, W)
    twist: np.ndarray  # (N, 6) as (rho, theta)
    log_focal: np.ndarray  # (N,)
    log_sigma: np.ndarray  # (E,)

    def scaled(self, c: float) -> "Gradient":
        return Gradient(self.log_depth * c, self.twist * c, self.log_focal * c, self.log_sigma * c)

    def __add__(self, other: "Gradient") -> "Gradient":
        return Gradient(
            self.log_depth + other.log_depth,
            self.twist + other.twist,
            self.log_focal + other.log_focal,
            self.log_sigma + other.log_sigma,
        )

    @classmethod
    def zeros(cls, p: Params) -> "Gradient":
        return cls(
            np.zeros_like(p.log_depth),
            np.zeros((p.frame_count, 6)),
            np.zeros(p.frame_count),
            np.zeros_like(p.log_sigma),
        )


class PairBatch:
    """Pair predictions stacked into dense arrays; invalid pixels carry zero weight."""

    def __init__(self, pairs: list[PairPrediction], shape: tuple[int, int] | None = None):
        if not pairs:
            raise ValueError("at least one pair prediction is required")
        shape = shape or pairs[0].shape
        for p in pairs:
            if p.shape != tuple(shape):
                raise ShapeMismatchError(f"edge ({p.edge.n}, {p.edge.m}) grid", shape, p.shape)
        self.edges = tuple(p.edge for p in pairs)
        self.shape = tuple(shape)
        E, P = len(pairs), shape[0] * shape[1]
        self.n = np.array([e.n for e in self.edges], dtype=np.int64)
        self.m = np.array([e.m for e in self.edges], dtype=np.int64)
        self.views = np.stack([self.n, self.m], axis=1)
        # components-first layout keeps the 3x3 rotations as batched BLAS calls
        X = np.empty((E, 2, 3, P))
        C = np.empty((E, 2, P))
        for i, p in enumerate(pairs):
            for k, (x, c) in enumerate(((p.x_n, p.c_n), (p.x_m, p.c_m))):
                ok = x.valid.reshape(-1)
                X[i, k] = np.where(ok[:, None], x.points.reshape(P, 3), 0.0).T
                C[i, k] = np.where(ok, c.weights.reshape(P), 0.0)
        self.X = X
        self.C = C

    def __len__(self) -> int:
        return len(self.edges)

    def check_frames(self, frame_count: int, shape: tuple[int, int]) -> None:
        if tuple(shape) != self.shape:
            raise ShapeMismatchError("pair grids vs state depth grids", shape, self.shape)
        bad = (self.views < 0) | (self.views >= frame_count)
        if bad.any():
            e = self.edges[int(np.argwhere(bad)[0, 0])]
            raise ValueError(f"edge ({e.n}, {e.m}) references a frame outside [0, {frame_count})")


def _fsum(a: np.ndarray) -> float:
    return math.fsum(np.asarray(a, dtype=np.float64).ravel().tolist())


def pointmap_energy(
    p: Params,
    batch: PairBatch,
    residual: str = "3d",
    scale_gauge: bool = True,
    with_grad: bool = True,
) -> tuple[float, Gradient | None]:
    N = p.frame_count
    H, W = p.shape
    P = H * W
    views, n = batch.views, batch.n

    depth = np.exp(p.log_depth.reshape(N, P))
    pts = depth[:, None, :] * p.rays().transpose(0, 2, 1)  # (N, 3, P)
    sigma = np.exp(p.log_sigma)

    Rn, tn = p.R[n], p.t[n]
    Rv, tv = p.R[views], p.t[views]
    RvT = Rv.transpose(0, 1, 3, 2)
    # sigma * R_n X, in world orientation
    SRX = sigma[:, None, None, None] * np.matmul(Rn[:, None], batch.X)
    Wp = SRX + tn[:, None, :, None]
    Y = np.matmul(RvT, Wp - tv[..., None])
    Pv = pts[views]
    w = batch.C * p.depth_valid.reshape(N, P)[views]
    r = Pv - Y
    if residual == "depth":
        r[:, :, :2] = 0.0
    elif residual != "3d":
        raise ValueError(f"unknown residual mode {residual!r}")

    per_edge = (w * (r * r).sum(axis=2)).sum(axis=(1, 2))
    raw = _fsum(per_edge)
    gauge = math.exp(2.0 * float(np.mean(p.log_sigma))) if scale_gauge else 1.0
    energy = raw / gauge
    if not with_grad:
        return energy, None

    wr = 2.0 * w[:, :, None, :] * r
    g = Gradient.zeros(p)

    flat = (views[:, :, None] * P + np.arange(P)).ravel()
    gl = np.bincount(flat, weights=(wr * Pv).sum(axis=2).ravel(), minlength=N * P)
    g.log_depth = gl.reshape(N, H, W)

    gf = np.zeros(N)
    np.add.at(gf, views, -(wr[:, :, :2] * Pv[:, :, :2]).sum(axis=(2, 3)))
    g.log_focal = gf

    # dY/dlog(sigma) = R_v^T sigma R_n X
    Yr = np.matmul(RvT, SRX)
    g.log_sigma = -(wr * Yr).sum(axis=(1, 2, 3))

    # only the m view depends on poses; its residual moves with pi_m (+) and pi_n (-)
    G = np.matmul(Rv[:, 1], wr[:, 1])  # (E, 3, P), world orientation
    Wm = Wp[:, 1]
    g_rho = G.sum(axis=2)
    g_th = np.stack(
        [
            (Wm[:, 1] * G[:, 2] - Wm[:, 2] * G[:, 1]).sum(axis=1),
            (Wm[:, 2] * G[:, 0] - Wm[:, 0] * G[:, 2]).sum(axis=1),
            (Wm[:, 0] * G[:, 1] - Wm[:, 1] * G[:, 0]).sum(axis=1),
        ],
        axis=1,
    )
    tw = np.concatenate([g_rho, g_th], axis=1)
    gt = np.zeros((N, 6))
    np.add.at(gt, batch.m, tw)
    np.add.at(gt, batch.n, -tw)
    g.twist = gt

    if scale_gauge:
        g = g.scaled(1.0 / gauge)
        g.log_sigma = g.log_sigma - 2.0 * energy / len(batch)
    return energy, g


class CorrespondenceBatch:
    def __init__(self, corr: CorrespondenceSet, width: int):
        self.a = corr.frame_a
        self.b = corr.frame_b
        self.u = corr.pixel_a[:, 0].astype(np.float64)
        self.v = corr.pixel_a[:, 1].astype(np.float64)
        self.flat = corr.pixel_a[:, 1] * width + corr.pixel_a[:, 0]
        self.q = corr.pixel_b
        self.w = corr.weight

    def __len__(self) -> int:
        return len(self.a)


def correspondence_energy(
    p: Params, cb: CorrespondenceBatch, weight: float, with_grad: bool = True
) -> tuple[float, Gradient | None, int]:
    """Reprojection energy in pixels^2. Returns (energy, gradient, skipped count)."""
    N = p.frame_count
    H, W = p.shape
    g = Gradient.zeros(p) if with_grad else None
    if len(cb) == 0 or weight == 0:
        return 0.0, g, 0
    a, b = cb.a, cb.b
    valid = p.depth_valid.reshape(N, -1)[a, cb.flat]
    fx, fy = p.focal()
    D = np.exp(p.log_depth.reshape(N, -1)[a, cb.flat])
    ray = np.stack([(cb.u - p.cx[a]) / fx[a], (cb.v - p.cy[a]) / fy[a], np.ones(len(cb))], axis=1)
    Pa = D[:, None] * ray
    Wp = np.einsum("kij,kj->ki", p.R[a], Pa) + p.t[a]
    Y = np.einsum("kji,kj->ki", p.R[b], Wp - p.t[b])
    Z = Y[:, 2]
    ok = valid & (Z > 1e-9)
    skipped = int((~ok).sum())
    Zs = np.where(ok, Z, 1.0)
    proj = np.stack([fx[b] * Y[:, 0] / Zs + p.cx[b], fy[b] * Y[:, 1] / Zs + p.cy[b]], axis=1)
    e = np.where(ok[:, None], proj - cb.q, 0.0)
    wk = weight * cb.w
    energy = _fsum(wk * np.einsum("ki,ki->k", e, e))
    if not with_grad:
        return energy, None, skipped

    de = 2.0 * wk[:, None] * e
    h = np.stack(
        [
            de[:, 0] * fx[b] / Zs,
            de[:, 1] * fy[b] / Zs,
            -(de[:, 0] * fx[b] * Y[:, 0] + de[:, 1] * fy[b] * Y[:, 1]) / Zs**2,
        ],
        axis=1,
    )
    Rba = np.einsum("kji,kjl->kil", p.R[b], p.R[a])  # R_b^T R_a
    gl = np.zeros(N * H * W)
    np.add.at(gl, a * H * W + cb.flat, np.einsum("ki,kij,kj->k", h, Rba, Pa))
    g.log_depth = gl.reshape(N, H, W)

    dPa_df = np.stack([-Pa[:, 0], -Pa[:, 1], np.zeros(len(cb))], axis=1)
    gf = np.zeros(N)
    np.add.at(gf, a, np.einsum("ki,kij,kj->k", h, Rba, dPa_df))
    c = np.stack([p.cx[b], p.cy[b]], axis=1)
    np.add.at(gf, b, np.einsum("ki,ki->k", de, proj - c))
    g.log_focal = gf

    gW = np.einsum("kij,kj->ki", p.R[b], h)
    tw = np.concatenate([gW, np.cross(Wp, gW)], axis=1)
    gt = np.zeros((N, 6))
    np.add.at(gt, a, tw)
    np.add.at(gt, b, -tw)
    g.twist = gt
    return energy, g, skipped


def total_energy(
    state: AlignmentState, pairs: list[PairPrediction], config=None, corr=None, scale_gauge: bool | None = None
) -> float:
    """Alignment energy of ``state`` against ``pairs`` (plus correspondences if given).

    With ``scale_gauge`` (default: on unless depth is frozen) the point-map term
    is divided by the squared geometric mean of the edge scales, which makes it
    invariant to a global similarity and leaves it unchanged when prod(sigma) = 1.
    """
    from .types import OptimConfig

    config = config or OptimConfig()
    if scale_gauge is None:
        scale_gauge = not config.freeze_depth
    p = _params_for(state, pairs)
    batch = PairBatch(pairs)
    batch.check_frames(p.frame_count, p.shape)
    e, _ = pointmap_energy(p, batch, config.residual, scale_gauge=scale_gauge, with_grad=False)
    if corr is not None and config.correspondence_weight > 0:
        ec, _, _ = correspondence_energy(p, CorrespondenceBatch(corr, p.shape[1]), config.correspondence_weight, False)
        e += ec
    return e


def energy_gradient(
    state: AlignmentState, pairs: list[PairPrediction], config=None, corr=None, scale_gauge: bool | None = None
) -> Gradient:
    """Analytic gradient of :func:`total_energy` (twists in the left tangent space)."""
    from .types import OptimConfig

    config = config or OptimConfig()
    if scale_gauge is None:
        scale_gauge = not config.freeze_depth
    p = _params_for(state, pairs)
    batch = PairBatch(pairs)
    batch.check_frames(p.frame_count, p.shape)
    _, g = pointmap_energy(p, batch, config.residual, scale_gauge=scale_gauge)
    if corr is not None and config.correspondence_weight > 0:
        _, gc, _ = correspondence_energy(p, CorrespondenceBatch(corr, p.shape[1]), config.correspondence_weight)
        g = g + gc
    return g


def correspondence_residual(state: AlignmentState, corr: CorrespondenceSet, weight: float = 1.0):
    """Weighted reprojection energy of ``corr`` under ``state``; returns (energy, gradient, skipped)."""
    p = Params.from_state(state)
    H, W = p.shape
    corr.check_range(p.frame_count, W, H)
    return correspondence_energy(p, CorrespondenceBatch(corr, W), weight)


def _params_for(state: AlignmentState, pairs: list[PairPrediction]) -> Params:
    p = Params.from_state(state)
    order = {e: i for i, e in enumerate(state.edges)}
    missing = [pp.edge for pp in pairs if pp.edge not in order]
    if missing:
        e = missing[0]
        raise ValueError(f"state has no scale for edge ({e.n}, {e.m})")
    p.log_sigma = p.log_sigma[[order[pp.edge] for pp in pairs]]
    return p
