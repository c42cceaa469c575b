"""Synthetic ground-truth scenes and emulated pairwise point-map predictions.

The world is a smooth heightfield ``z = h(x, y)`` (plus optional moving
Gaussian blobs) seen by pinhole cameras looking roughly along +z. Depth is
obtained by exact ray casting, so any two frames are consistent under
reprojection up to the Newton tolerance.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from ..alignment.types import AlignmentState, CorrespondenceSet, PairPrediction
from ..evaluation import DepthSequence, Trajectory
from ..geometry import ConfidenceMap, DepthMap, Intrinsics, PointMap, Pose, pixel_rays, project, so3_exp
from ..viewgraph import Edge, ViewGraph


@dataclass(frozen=True)
class NoiseModel:
    point_sigma: float = 0.0  # meters, isotropic
    relative_sigma: float = 0.0  # fraction of the pixel's depth
    correlation: float = 0.0  # share of noise variance common to every edge seeing a frame
    edge_scale_range: float = 1.0  # per-edge scale drawn log-uniform in [1/r, r]
    edge_rotation_sigma: float = 0.0  # rad, rigid error of the m map inside each edge
    edge_translation_sigma: float = 0.0  # m
    confidence_unit: float = 0.01  # meters; confidence = 1 / (1 + sigma_local / unit)
    dynamic_weight: float = 0.1

    def __post_init__(self):
        if self.point_sigma < 0 or self.relative_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if not 0.0 <= self.correlation <= 1.0:
            raise ValueError("noise correlation must lie in [0, 1]")
        if self.edge_scale_range < 1.0:
            raise ValueError("edge_scale_range must be >= 1")


@dataclass(frozen=True)
class SceneSpec:
    frame_count: int = 5
    width: int = 64
    height: int = 48
    focal: float | None = None  # None: fallback 1.2 * max(W, H)
    path: Literal["line", "arc", "random_walk"] = "line"
    step: float = 0.05  # m per frame
    rotation_step: float = 0.01  # rad per frame (arc / random walk)
    base_depth: float = 3.0
    surface_amplitude: float = 0.25
    surface_waves: int = 4
    surface_wavelength: tuple[float, float] = (0.8, 2.5)
    blobs: int = 0
    blob_radius: float = 0.25
    blob_height: float = 0.6
    blob_speed: float = 0.03  # m per frame
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0

    def __post_init__(self):
        if self.frame_count < 2:
            raise ValueError(f"scene needs at least 2 frames, got {self.frame_count}")
        if self.path not in ("line", "arc", "random_walk"):
            raise ValueError(f"unknown camera path {self.path!r}")
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseModel(**self.noise))
        object.__setattr__(self, "surface_wavelength", tuple(self.surface_wavelength))

    def replace(self, **kw) -> "SceneSpec":
        return dataclasses.replace(self, **kw)

    def with_noise(self, **kw) -> "SceneSpec":
        return dataclasses.replace(self, noise=dataclasses.replace(self.noise, **kw))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["surface_wavelength"] = list(self.surface_wavelength)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if "noise" in d:
            d["noise"] = NoiseModel(**d["noise"])
        return cls(**d)

    def intrinsics(self) -> Intrinsics:
        if self.focal is None:
            return Intrinsics.fallback(self.width, self.height)
        return Intrinsics(self.focal, self.focal, (self.width - 1) / 2.0, (self.height - 1) / 2.0, self.width, self.height)


class _Surface:
    def __init__(self, spec: SceneSpec, rng: np.random.Generator):
        k = spec.surface_waves
        lam = rng.uniform(*spec.surface_wavelength, size=k)
        ang = rng.uniform(0, 2 * np.pi, size=k)
        self.kvec = (2 * np.pi / lam)[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        self.amp = spec.surface_amplitude * rng.uniform(0.5, 1.0, size=k) / math.sqrt(k)
        self.phase = rng.uniform(0, 2 * np.pi, size=k)
        self.base = spec.base_depth
        self.blob_centers = rng.uniform(-0.6, 0.6, size=(spec.blobs, 2))
        dirs = rng.uniform(0, 2 * np.pi, size=spec.blobs)
        self.blob_vel = spec.blob_speed * np.stack([np.cos(dirs), np.sin(dirs)], axis=1)
        self.blob_radius = spec.blob_radius
        self.blob_height = spec.blob_height

    def blob_term(self, x, y, frame: int):
        val = np.zeros_like(x)
        gx = np.zeros_like(x)
        gy = np.zeros_like(x)
        r2 = self.blob_radius**2
        for c, vel in zip(self.blob_centers, self.blob_vel):
            cx, cy = c + frame * vel
            e = -self.blob_height * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / r2)
            val += e
            gx += e * (-2 * (x - cx) / r2)
            gy += e * (-2 * (y - cy) / r2)
        return val, gx, gy

    def height(self, x, y, frame: int):
        arg = self.kvec[:, 0, None] * x.ravel()[None] + self.kvec[:, 1, None] * y.ravel()[None] + self.phase[:, None]
        h = self.base + (self.amp[:, None] * np.sin(arg)).sum(0).reshape(x.shape)
        c = self.amp[:, None] * np.cos(arg)
        gx = (c * self.kvec[:, 0, None]).sum(0).reshape(x.shape)
        gy = (c * self.kvec[:, 1, None]).sum(0).reshape(x.shape)
        b, bx, by = self.blob_term(x, y, frame)
        return h + b, gx + bx, gy + by, b

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, frame: int) -> tuple[np.ndarray, np.ndarray]:
        """Ray parameter ``lam`` with ``origin + lam*dir`` on the surface; also the blob term."""
        lam = (self.base - origin[2]) / dirs[..., 2]
        for _ in range(60):
            x = origin[0] + lam * dirs[..., 0]
            y = origin[1] + lam * dirs[..., 1]
            h, gx, gy, _ = self.height(x, y, frame)
            f = origin[2] + lam * dirs[..., 2] - h
            fp = dirs[..., 2] - gx * dirs[..., 0] - gy * dirs[..., 1]
            d = f / fp
            lam = lam - d
            if np.abs(d).max() < 1e-14 * max(1.0, float(np.abs(lam).max())):
                break
        x = origin[0] + lam * dirs[..., 0]
        y = origin[1] + lam * dirs[..., 1]
        return lam, self.height(x, y, frame)[3]


def _camera_path(spec: SceneSpec, rng: np.random.Generator) -> list[Pose]:
    N = spec.frame_count
    if spec.path == "line":
        return [Pose(np.eye(3), np.array([k * spec.step, 0.0, 0.0])) for k in range(N)]
    if spec.path == "arc":
        radius = spec.base_depth
        center = np.array([0.0, 0.0, radius])
        poses = []
        for k in range(N):
            th = k * spec.rotation_step
            R = so3_exp(np.array([0.0, -th, 0.0]))
            poses.append(Pose(R, center - R @ np.array([0.0, 0.0, radius])))
        return poses
    poses = [Pose.identity()]
    for _ in range(N - 1):
        d = rng.normal(size=3)
        d[2] *= 0.3
        d *= spec.step / np.linalg.norm(d)
        w = rng.normal(size=3)
        w *= rng.uniform(0, spec.rotation_step) / np.linalg.norm(w)
        prev = poses[-1]
        poses.append(Pose(so3_exp(w) @ prev.rotation, prev.translation + d))
    return poses


@dataclass
class SyntheticScene:
    spec: SceneSpec
    depths: tuple[DepthMap, ...]
    poses: tuple[Pose, ...]
    intrinsics: Intrinsics
    dynamic_masks: tuple[np.ndarray, ...]
    surface: _Surface = field(repr=False)

    @property
    def frame_count(self) -> int:
        return len(self.depths)

    @property
    def depth_sequence(self) -> DepthSequence:
        return DepthSequence(self.depths)

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory.from_poses(self.poses, dt=1.0 / 30.0)

    def __iter__(self):
        # unpacks as (depths, trajectory, intrinsics)
        yield self.depth_sequence
        yield self.trajectory
        yield self.intrinsics

    def render_depth_at(self, frame: int, uv: np.ndarray) -> np.ndarray:
        """Ground-truth depth at real-valued pixel coordinates (column, row)."""
        k = self.intrinsics
        uv = np.asarray(uv, dtype=np.float64)
        rays = np.stack([(uv[..., 0] - k.cx) / k.fx, (uv[..., 1] - k.cy) / k.fy, np.ones(uv.shape[:-1])], axis=-1)
        pose = self.poses[frame]
        lam, _ = self.surface.intersect(pose.translation, rays @ pose.rotation.T, frame)
        return lam

    def edge_scale(self, edge: Edge) -> float:
        r = self.spec.noise.edge_scale_range
        if r == 1.0:
            return 1.0
        rng = np.random.default_rng([self.spec.seed, 2, edge.n, edge.m])
        return float(math.exp(rng.uniform(-math.log(r), math.log(r))))

    def ground_truth_state(self, edges) -> AlignmentState:
        edges = tuple(edges)
        return AlignmentState(
            self.depths,
            self.poses,
            tuple(self.intrinsics for _ in self.depths),
            edges,
            np.array([1.0 / self.edge_scale(e) for e in edges]),
        )

    def _frame_noise(self, frame: int) -> np.ndarray:
        rng = np.random.default_rng([self.spec.seed, 3, frame])
        return rng.normal(size=(self.spec.height, self.spec.width, 3))

    def _noise_sigma(self, frame: int) -> np.ndarray:
        nm = self.spec.noise
        return nm.point_sigma + nm.relative_sigma * self.depths[frame].values

    def confidence(self, frame: int) -> np.ndarray:
        nm = self.spec.noise
        c = 1.0 / (1.0 + self._noise_sigma(frame) / nm.confidence_unit)
        return np.where(self.dynamic_masks[frame], c * nm.dynamic_weight, c)

    def render_pair(self, edge: Edge) -> PairPrediction:
        """Emulated predictor output for ``edge``: both frames' points in camera n."""
        nm = self.spec.noise
        n, m = edge.n, edge.m
        rng = np.random.default_rng([self.spec.seed, 1, n, m])
        maps = []
        for k_idx, v in enumerate((n, m)):
            pts = pixel_rays(self.intrinsics) * self.depths[v].values[..., None]
            sig = self._noise_sigma(v)
            if sig.any():
                own = rng.normal(size=pts.shape)
                shared = self._frame_noise(v)
                mix = math.sqrt(nm.correlation) * shared + math.sqrt(1.0 - nm.correlation) * own
                pts = pts + sig[..., None] * mix
            maps.append(pts)
        T = self.poses[n].inverse().compose(self.poses[m])  # n <- m
        if nm.edge_rotation_sigma > 0 or nm.edge_translation_sigma > 0:
            dR = so3_exp(rng.normal(size=3) * nm.edge_rotation_sigma)
            dt = rng.normal(size=3) * nm.edge_translation_sigma
            T = Pose(dR, dt).compose(T)
        s = self.edge_scale(edge)
        x_n = s * maps[0]
        x_m = s * T.apply(maps[1])
        return PairPrediction(
            edge,
            PointMap(x_n, frame=n),
            PointMap(x_m, frame=n),
            ConfidenceMap(self.confidence(n)),
            ConfidenceMap(self.confidence(m)),
        )

    def render_pairs(self, graph: ViewGraph | list[Edge]) -> list[PairPrediction]:
        edges = graph.edges if isinstance(graph, ViewGraph) else graph
        return [self.render_pair(e) for e in edges]

    def correspondences(self, edges, per_edge: int = 64, pixel_sigma: float = 0.0, seed: int = 0) -> CorrespondenceSet:
        """Ground-truth matches from frame n to frame m for each edge, static pixels only."""
        rng = np.random.default_rng([self.spec.seed, 4, seed])
        H, W = self.spec.height, self.spec.width
        fa, pa, fb, pb = [], [], [], []
        for e in edges:
            for a, b in ((e.n, e.m),):
                idx = rng.choice(H * W, size=min(per_edge, H * W), replace=False)
                u, v = idx % W, idx // W
                d = self.depths[a].values[v, u]
                ray = np.stack([(u - self.intrinsics.cx) / self.intrinsics.fx, (v - self.intrinsics.cy) / self.intrinsics.fy, np.ones(len(u))], 1)
                X = ray * d[:, None]
                T = self.poses[b].inverse().compose(self.poses[a])
                uv, z = project(T.apply(X), self.intrinsics)
                keep = (
                    (z > 0)
                    & (uv[:, 0] >= 0) & (uv[:, 0] <= W - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= H - 1)
                    & ~self.dynamic_masks[a][v, u]
                )
                uv = uv + rng.normal(size=uv.shape) * pixel_sigma
                fa.append(np.full(keep.sum(), a))
                fb.append(np.full(keep.sum(), b))
                pa.append(np.stack([u, v], 1)[keep])
                pb.append(uv[keep])
        if not fa:
            return CorrespondenceSet.empty()
        fa = np.concatenate(fa)
        return CorrespondenceSet(fa, np.concatenate(pa), np.concatenate(fb), np.concatenate(pb), np.ones(len(fa)))


def synth_scene(spec: SceneSpec) -> SyntheticScene:
    rng = np.random.default_rng([spec.seed, 0])
    surface = _Surface(spec, rng)
    poses = _camera_path(spec, rng)
    k = spec.intrinsics()
    rays = pixel_rays(k)
    depths, dyn = [], []
    for i, p in enumerate(poses):
        lam, blob = surface.intersect(p.translation, rays @ p.rotation.T, i)
        if not (np.isfinite(lam).all() and (lam > 0).all()):
            raise ValueError("scene produced non-positive depth; reduce surface amplitude or camera motion")
        depths.append(DepthMap(lam))
        dyn.append(np.abs(blob) > 0.01 * spec.blob_height if spec.blobs else np.zeros(lam.shape, dtype=bool))
    return SyntheticScene(spec, tuple(depths), tuple(poses), k, tuple(dyn), surface)


def perturb_state(
    state: AlignmentState,
    rng: np.random.Generator,
    rotation: float = 0.05,
    translation: float = 0.05,
    depth_jitter: float = 0.10,
) -> AlignmentState:
    """Random pose noise of exactly ``rotation`` rad and ``translation`` m per frame,
    plus a per-frame depth scale drawn uniformly in ``1 ± depth_jitter``."""
    poses = []
    for p in state.poses:
        w = rng.uniform(-1, 1, size=3)
        w *= rotation / max(np.linalg.norm(w), 1e-12)
        d = rng.uniform(-1, 1, size=3)
        d *= translation / max(np.linalg.norm(d), 1e-12)
        poses.append(Pose(so3_exp(w) @ p.rotation, p.translation + d))
    depths = []
    for dm in state.depths:
        f = 1.0 + rng.uniform(-depth_jitter, depth_jitter)
        depths.append(DepthMap(np.where(dm.valid, dm.values * f, np.nan), dm.valid))
    return AlignmentState(tuple(depths), tuple(poses), state.intrinsics, state.edges, state.edge_scales)


def mono_depths(
    scene: SyntheticScene,
    scale_range: float = 1.5,
    gamma: float = 0.0,
    ripple: float = 0.0,
    ripple_period: float = 8.0,
    seed: int = 0,
) -> tuple[DepthMap, ...]:
    """Emulated monocular depth: per-frame unknown scale plus optional distortion.

    ``D_hat = c_v * D ** (1 + gamma) * exp(ripple * sin(...))`` with c_v
    log-uniform in [1/scale_range, scale_range] and a sinusoidal ripple of
    ``ripple_period`` pixels at a random orientation and phase per frame.
    ``gamma`` and ``ripple`` are spatially nonlinear, so no smooth
    per-frame scale field undoes them exactly.
    """
    rng = np.random.default_rng([scene.spec.seed, 5, seed])
    H, W = scene.spec.height, scene.spec.width
    v, u = np.mgrid[0:H, 0:W].astype(np.float64)
    out = []
    for d in scene.depths:
        c = math.exp(rng.uniform(-math.log(scale_range), math.log(scale_range))) if scale_range > 1 else 1.0
        ang, phase = rng.uniform(0, 2 * math.pi, size=2)
        wave = np.sin(2 * math.pi * (u * math.cos(ang) + v * math.sin(ang)) / ripple_period + phase)
        out.append(DepthMap(c * d.values ** (1.0 + gamma) * np.exp(ripple * wave)))
    return tuple(out)
