"""Pinhole cameras, rigid transforms and point-map helpers.

Poses are world-from-camera: ``x_world = R @ x_cam + t``. Twists are ordered
``(rho, theta)``, translation part first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySelectionError, ShapeMismatchError

ORTHO_TOL = 1e-9
FALLBACK_FOCAL_FACTOR = 1.2


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @classmethod
    def fallback(cls, width: int, height: int, factor: float = FALLBACK_FOCAL_FACTOR) -> "Intrinsics":
        """Fixed-focal camera used when no focal estimate is available."""
        f = factor * max(width, height)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled_focal(self, factor: float) -> "Intrinsics":
        return Intrinsics(self.fx * factor, self.fy * factor, self.cx, self.cy, self.width, self.height)


@dataclass(frozen=True)
class Pose:
    """Rigid world-from-camera transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(3)
        if R.shape != (3, 3):
            raise ShapeMismatchError("rotation", (3, 3), R.shape)
        if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class DepthMap:
    values: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim != 2:
            raise ValueError(f"depth must be a 2D grid, got ndim={vals.ndim}")
        if self.valid is None:
            valid = np.isfinite(vals) & (vals > 0)
        else:
            valid = np.array(self.valid, dtype=bool)
            if valid.shape != vals.shape:
                raise ShapeMismatchError("depth validity mask", vals.shape, valid.shape)
            bad = valid & ~(np.isfinite(vals) & (vals > 0))
            if bad.any():
                raise ValueError(f"{int(bad.sum())} valid depth entries are non-finite or non-positive")
        valid.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class PointMap:
    """H×W grid of 3D points in a declared camera frame."""

    points: np.ndarray
    valid: np.ndarray = None
    frame: int | None = None

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise ValueError(f"point map must be H×W×3, got {pts.shape}")
        if self.valid is None:
            valid = np.isfinite(pts).all(axis=2)
        else:
            valid = np.array(self.valid, dtype=bool)
            if valid.shape != pts.shape[:2]:
                raise ShapeMismatchError("point map validity mask", pts.shape[:2], valid.shape)
        valid.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.points.shape[:2]


@dataclass(frozen=True)
class ConfidenceMap:
    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 2:
            raise ValueError(f"confidence must be a 2D grid, got ndim={w.ndim}")
        if not np.isfinite(w).all() or (w < 0).any():
            raise ValueError("confidence weights must be finite and non-negative")
        object.__setattr__(self, "weights", w)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape


# --------------------------------------------------------------------------
# un/projection


def pixel_rays(k: Intrinsics) -> np.ndarray:
    """Per-pixel camera rays with unit z, shape (H, W, 3)."""
    v, u = np.mgrid[0 : k.height, 0 : k.width].astype(np.float64)
    return np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)


def unproject(depth: DepthMap, k: Intrinsics) -> PointMap:
    if depth.shape != k.shape:
        raise ShapeMismatchError("depth vs intrinsics (H, W)", k.shape, depth.shape)
    d = np.where(depth.valid, depth.values, np.nan)
    return PointMap(pixel_rays(k) * d[..., None], depth.valid)


def project(points: np.ndarray, k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Project camera-frame points to pixel coordinates.

    Returns ``(uv, z)`` where ``uv[..., 0]`` is the column coordinate.
    """
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    uv = np.stack([k.fx * points[..., 0] / z + k.cx, k.fy * points[..., 1] / z + k.cy], axis=-1)
    return uv, z


def relative_pose(source: Pose, target: Pose) -> Pose:
    """``T_{target<-source} = target^{-1} ∘ source``."""
    return target.inverse().compose(source)


def transform_to_view(pm: PointMap, source_pose: Pose, target_pose: Pose) -> PointMap:
    T = relative_pose(source_pose, target_pose)
    pts = np.where(pm.valid[..., None], pm.points, 0.0)
    out = T.apply(pts)
    out[~pm.valid] = np.nan
    return PointMap(out, pm.valid)


# --------------------------------------------------------------------------
# per-axis normalization


@dataclass(frozen=True)
class AxisNormalization:
    """Per-axis ``(min, max)`` used by :func:`axis_normalize`, shape (3, 2)."""

    bounds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bounds", _frozen(self.bounds).reshape(3, 2))

    def denormalize(self, pm: PointMap) -> PointMap:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        out = (pm.points + 1.0) * (hi - lo) / 2.0 + lo
        out[~pm.valid] = np.nan
        return PointMap(out, pm.valid, pm.frame)


def axis_normalize(pm: PointMap) -> tuple[PointMap, AxisNormalization]:
    """Map each axis of the valid points independently onto [-1, 1].

    A constant axis maps to 0.
    """
    if not pm.valid.any():
        raise EmptySelectionError("axis_normalize needs at least one valid point")
    pts = pm.points[pm.valid]
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = 2.0 * (pm.points - lo) / safe - 1.0
    out[..., span == 0] = 0.0
    out[~pm.valid] = np.nan
    return PointMap(out, pm.valid, pm.frame), AxisNormalization(np.stack([lo, hi], axis=1))


# --------------------------------------------------------------------------
# SO(3) / SE(3)


def hat(w: np.ndarray) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    th2 = float(w @ w)
    th = np.sqrt(th2)
    K = hat(w)
    if th < 1e-4:
        a = 1.0 - th2 / 6.0 + th2 * th2 / 120.0
        b = 0.5 - th2 / 24.0 + th2 * th2 / 720.0
    else:
        a = np.sin(th) / th
        b = (1.0 - np.cos(th)) / th2
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    th = np.arccos(cos)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if th < 1e-4:
        return 0.5 * (1.0 + th * th / 6.0) * vee
    if np.pi - th < 1e-6:
        # near pi: axis from the symmetric part
        B = (R + np.eye(3)) / 2.0
        i = int(np.argmax(np.diag(B)))
        axis = B[:, i] / np.sqrt(B[i, i])
        if axis @ vee < 0:
            axis = -axis
        return th * axis / np.linalg.norm(axis)
    return th / (2.0 * np.sin(th)) * vee


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, radians."""
    return float(np.linalg.norm(so3_log(R)))


def _so3_left_jacobian(w: np.ndarray) -> np.ndarray:
    th2 = float(w @ w)
    th = np.sqrt(th2)
    K = hat(w)
    if th < 1e-4:
        b = 0.5 - th2 / 24.0
        c = 1.0 / 6.0 - th2 / 120.0
    else:
        b = (1.0 - np.cos(th)) / th2
        c = (th - np.sin(th)) / (th2 * th)
    return np.eye(3) + b * K + c * (K @ K)


def se3_exp(twist: np.ndarray) -> Pose:
    twist = np.asarray(twist, dtype=np.float64).reshape(6)
    rho, w = twist[:3], twist[3:]
    return Pose(so3_exp(w), _so3_left_jacobian(w) @ rho)


def se3_log(p: Pose) -> np.ndarray:
    w = so3_log(p.rotation)
    rho = np.linalg.solve(_so3_left_jacobian(w), p.translation)
    return np.concatenate([rho, w])


def pose_retract(p: Pose, twist: np.ndarray) -> Pose:
    """Left-multiply ``p`` by the SE(3) exponential of ``twist``."""
    twist = np.asarray(twist, dtype=np.float64)
    if not np.isfinite(twist).all():
        raise ValueError("twist must be finite")
    return se3_exp(twist).compose(p)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest proper rotation (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt
