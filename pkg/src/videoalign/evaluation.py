"""Depth and trajectory metrics.

Depth is aligned with a single scale and shift shared by the whole sequence.
Trajectories are aligned with a similarity transform (Umeyama) before ATE;
RTE/RRE compare consecutive relative poses of the scale-aligned prediction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateInputError, EmptySelectionError, ShapeMismatchError
from .geometry import DepthMap, Pose, rotation_angle


@dataclass(frozen=True)
class DepthSequence:
    frames: tuple[DepthMap, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("depth sequence is empty")
        for f in frames[1:]:
            if f.shape != frames[0].shape:
                raise ShapeMismatchError("depth sequence frame", frames[0].shape, f.shape)
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def stack(self) -> tuple[np.ndarray, np.ndarray]:
        vals = np.stack([f.values for f in self.frames])
        valid = np.stack([f.valid for f in self.frames])
        return vals, valid


@dataclass(frozen=True)
class Trajectory:
    timestamps: np.ndarray
    poses: tuple[Pose, ...]

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=np.float64).reshape(-1)
        poses = tuple(self.poses)
        if len(ts) != len(poses):
            raise ShapeMismatchError("trajectory timestamps", (len(poses),), ts.shape)
        if len(ts) > 1 and not (np.diff(ts) > 0).all():
            raise ValueError("trajectory timestamps must be strictly increasing")
        ts.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    @classmethod
    def from_poses(cls, poses, dt: float = 1.0) -> "Trajectory":
        poses = tuple(poses)
        return cls(np.arange(len(poses)) * dt, poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)


@dataclass(frozen=True)
class Sim3:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    def apply_points(self, x: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(x) @ self.rotation.T + self.translation

    def apply_pose(self, p: Pose) -> Pose:
        return Pose(self.rotation @ p.rotation, self.scale * self.rotation @ p.translation + self.translation)

    def apply(self, traj: Trajectory) -> Trajectory:
        return Trajectory(traj.timestamps, tuple(self.apply_pose(p) for p in traj.poses))

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist(), "scale": self.scale}


@dataclass
class MetricsReport:
    abs_rel: float | None = None
    delta_125: float | None = None
    ate_m: float | None = None
    rte: float | None = None
    rre_deg: float | None = None
    depth_scale: float | None = None
    depth_shift: float | None = None
    sim3: dict | None = None
    flags: list[str] = field(default_factory=list)
    conventions: dict = field(
        default_factory=lambda: {
            "depth_alignment": "sequence-shared scale and shift (least squares)",
            "trajectory_alignment": "Sim(3) Umeyama",
            "ate": "RMS of aligned position residuals",
            "rte_rre": "mean over consecutive frame pairs",
        }
    )

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# depth


def _joint(pred: DepthSequence, gt: DepthSequence):
    if len(pred) != len(gt):
        raise ShapeMismatchError("depth sequence length", (len(gt),), (len(pred),))
    pv, pm = pred.stack()
    gv, gm = gt.stack()
    if pv.shape != gv.shape:
        raise ShapeMismatchError("depth sequence grid", gv.shape, pv.shape)
    mask = pm & gm
    if not mask.any():
        raise EmptySelectionError("no jointly valid pixel in the sequence")
    return pv[mask], gv[mask]


def fit_scale_shift(pred: DepthSequence, gt: DepthSequence) -> tuple[float, float, bool]:
    """Least-squares ``(s, t)`` minimizing sum (s*pred + t - gt)^2 over the whole sequence.

    Returns ``(scale, shift, degenerate)``; for constant predictions the fit
    falls back to scale only and ``degenerate`` is True.
    """
    x, y = _joint(pred, gt)
    return _scale_shift(x, y)


def _scale_shift(x: np.ndarray, y: np.ndarray) -> tuple[float, float, bool]:
    mx, my = x.mean(), y.mean()
    dx = x - mx
    sxx = float(dx @ dx)
    if sxx <= 1e-12 * max(float(x @ x), 1e-300):
        warnings.warn("constant predictions: falling back to scale-only fit", RuntimeWarning, stacklevel=3)
        return float(x @ y) / float(x @ x), 0.0, True
    s = float(dx @ (y - my)) / sxx
    return s, float(my - s * mx), False


def apply_scale_shift(seq: DepthSequence, scale: float, shift: float) -> np.ndarray:
    """Aligned depths as an (N, H, W) array, NaN where invalid.

    Kept as an array because aligned values may be non-positive.
    """
    vals, valid = seq.stack()
    return np.where(valid, scale * vals + shift, np.nan)


def depth_metrics(pred_aligned, gt: DepthSequence) -> tuple[float, float, int]:
    """Abs Rel and delta<1.25 over all jointly valid pixels of the sequence.

    ``pred_aligned`` may be a :class:`DepthSequence` or an (N, H, W) array
    (NaN = invalid). Returns ``(abs_rel, delta_125, n_nonpositive)``.
    """
    gv, gm = gt.stack()
    if isinstance(pred_aligned, DepthSequence):
        pv, pm = pred_aligned.stack()
    else:
        pv = np.asarray(pred_aligned, dtype=np.float64)
        pm = np.isfinite(pv)
    if pv.shape != gv.shape:
        raise ShapeMismatchError("aligned depth grid", gv.shape, pv.shape)
    mask = pm & gm
    if not mask.any():
        raise EmptySelectionError("no jointly valid pixel in the sequence")
    return _depth_metrics(pv[mask], gv[mask])


def _depth_metrics(p: np.ndarray, g: np.ndarray) -> tuple[float, float, int]:
    abs_rel = float(np.mean(np.abs(p - g) / g))
    pos = p > 0
    ratio = np.ones_like(p) * np.inf
    ratio[pos] = np.maximum(p[pos] / g[pos], g[pos] / p[pos])
    delta = float(np.mean(ratio < 1.25))
    return abs_rel, delta, int((~pos).sum())


def evaluate_depth(pred: DepthSequence, gt: DepthSequence) -> tuple[float, float, float, float, list[str]]:
    """Fit the shared scale/shift, then compute ``(abs_rel, delta, scale, shift, flags)``."""
    x, y = _joint(pred, gt)
    s, t, degenerate = _scale_shift(x, y)
    abs_rel, delta, nonpos = _depth_metrics(s * x + t, y)
    flags = []
    if degenerate:
        flags.append("scale_only_fit")
    if nonpos:
        flags.append(f"nonpositive_aligned_depth:{nonpos}")
    return abs_rel, delta, s, t, flags


# --------------------------------------------------------------------------
# trajectories


def umeyama(src: np.ndarray, dst: np.ndarray, with_scale: bool = True) -> Sim3:
    """Similarity minimizing sum ||s R src_i + t - dst_i||^2."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape:
        raise ShapeMismatchError("umeyama point sets", dst.shape, src.shape)
    n = len(src)
    if n < 3:
        raise DegenerateInputError(f"need at least 3 poses for alignment, got {n}")
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = float((xs * xs).sum()) / n
    if var_s <= 1e-24:
        raise DegenerateInputError("predicted positions have zero spread")
    cov = xd.T @ xs / n
    U, S, Vt = np.linalg.svd(cov)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    s = float(np.trace(np.diag(S) @ D)) / var_s if with_scale else 1.0
    t = mu_d - s * R @ mu_s
    return Sim3(R, t, s)


def align_trajectory(pred: Trajectory, gt: Trajectory, with_scale: bool = True) -> tuple[Sim3, Trajectory]:
    if len(pred) != len(gt):
        raise ShapeMismatchError("trajectory length", (len(gt),), (len(pred),))
    sim = umeyama(pred.positions(), gt.positions(), with_scale)
    return sim, sim.apply(pred)


def relative_errors(pred: Trajectory, gt: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Per-step translation norms and rotation angles (rad) of
    ``E_i = (Q_i^-1 Q_{i+1})^-1 (P_i^-1 P_{i+1})``."""
    te, re = [], []
    for i in range(len(gt) - 1):
        q = gt.poses[i].inverse().compose(gt.poses[i + 1])
        p = pred.poses[i].inverse().compose(pred.poses[i + 1])
        e = q.inverse().compose(p)
        te.append(np.linalg.norm(e.translation))
        re.append(rotation_angle(e.rotation))
    return np.array(te), np.array(re)


def pose_metrics(pred: Trajectory, gt: Trajectory, with_scale: bool = True) -> tuple[float, float, float, Sim3]:
    """Returns ``(ate, rte, rre_deg, sim3)``."""
    if len(gt) < 2:
        raise DegenerateInputError("relative metrics need at least 2 poses")
    sim, aligned = align_trajectory(pred, gt, with_scale)
    res = aligned.positions() - gt.positions()
    ate = math.sqrt(float(np.mean(np.sum(res * res, axis=1))))
    te, re = relative_errors(aligned, gt)
    return ate, float(te.mean()), math.degrees(float(re.mean())), sim


def evaluate(
    pred_depth: DepthSequence | None = None,
    gt_depth: DepthSequence | None = None,
    pred_traj: Trajectory | None = None,
    gt_traj: Trajectory | None = None,
    with_scale: bool = True,
) -> MetricsReport:
    rep = MetricsReport()
    if pred_depth is not None and gt_depth is not None:
        rep.abs_rel, rep.delta_125, rep.depth_scale, rep.depth_shift, flags = evaluate_depth(pred_depth, gt_depth)
        rep.flags.extend(flags)
    if pred_traj is not None and gt_traj is not None:
        rep.ate_m, rep.rte, rep.rre_deg, sim = pose_metrics(pred_traj, gt_traj, with_scale)
        rep.sim3 = sim.to_dict()
    return rep
