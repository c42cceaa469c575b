from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from ..errors import ShapeMismatchError
from ..geometry import ConfidenceMap, DepthMap, Intrinsics, PointMap, Pose
from ..viewgraph import Edge


@dataclass(frozen=True)
class PairPrediction:
    """Two point maps and confidences for one edge, both in frame ``edge.n`` coordinates."""

    edge: Edge
    x_n: PointMap
    x_m: PointMap
    c_n: ConfidenceMap
    c_m: ConfidenceMap

    def __post_init__(self):
        shape = self.x_n.shape
        for name in ("x_m", "c_n", "c_m"):
            got = getattr(self, name).shape
            if got != shape:
                raise ShapeMismatchError(f"edge ({self.edge.n}, {self.edge.m}) grid {name}", shape, got)

    @property
    def shape(self) -> tuple[int, int]:
        return self.x_n.shape

    def with_edge(self, edge: Edge) -> "PairPrediction":
        return dataclasses.replace(self, edge=edge)

    def scaled_confidence(self, factor: float) -> "PairPrediction":
        return dataclasses.replace(
            self,
            c_n=ConfidenceMap(self.c_n.weights * factor),
            c_m=ConfidenceMap(self.c_m.weights * factor),
        )


@dataclass(frozen=True)
class AlignmentState:
    depths: tuple[DepthMap, ...]
    poses: tuple[Pose, ...]
    intrinsics: tuple[Intrinsics, ...]
    edges: tuple[Edge, ...]
    edge_scales: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(self.depths))
        object.__setattr__(self, "poses", tuple(self.poses))
        object.__setattr__(self, "intrinsics", tuple(self.intrinsics))
        object.__setattr__(self, "edges", tuple(self.edges))
        s = np.array(self.edge_scales, dtype=np.float64).reshape(-1)
        if len(s) != len(self.edges):
            raise ShapeMismatchError("edge_scales", (len(self.edges),), s.shape)
        if (s <= 0).any() or not np.isfinite(s).all():
            raise ValueError("edge scales must be positive and finite")
        s.flags.writeable = False
        object.__setattr__(self, "edge_scales", s)
        n = len(self.depths)
        if len(self.poses) != n or len(self.intrinsics) != n:
            raise ValueError("depths, poses and intrinsics must cover the same frames")
        for i, (d, k) in enumerate(zip(self.depths, self.intrinsics)):
            if d.shape != k.shape:
                raise ShapeMismatchError(f"frame {i} depth vs intrinsics", k.shape, d.shape)

    @property
    def frame_count(self) -> int:
        return len(self.depths)

    def scale_of(self, edge: Edge) -> float:
        return float(self.edge_scales[self.edges.index(edge)])


@dataclass(frozen=True)
class ScaleMapState:
    """Depth realized as ``scale_maps[v] * mono_depths[v]``."""

    scale_maps: tuple[np.ndarray, ...]
    mono_depths: tuple[DepthMap, ...]
    poses: tuple[Pose, ...]
    intrinsics: tuple[Intrinsics, ...]
    edges: tuple[Edge, ...]
    edge_scales: np.ndarray

    def __post_init__(self):
        for s in self.scale_maps:
            if not (np.isfinite(s).all() and (s > 0).all()):
                raise ValueError("scale maps must be positive and finite")

    def to_alignment_state(self) -> AlignmentState:
        depths = tuple(
            DepthMap(np.where(d.valid, s * d.values, np.nan), d.valid)
            for s, d in zip(self.scale_maps, self.mono_depths)
        )
        return AlignmentState(depths, self.poses, self.intrinsics, self.edges, self.edge_scales)


@dataclass(frozen=True)
class CorrespondenceSet:
    """Pixel matches ``(frame_a, pixel_a) <-> (frame_b, pixel_b)``.

    ``pixel_a`` are integer (column, row) indices into frame a's depth grid;
    ``pixel_b`` are real-valued (column, row) coordinates in frame b.
    """

    frame_a: np.ndarray
    pixel_a: np.ndarray
    frame_b: np.ndarray
    pixel_b: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        fa = np.asarray(self.frame_a, dtype=np.int64).reshape(-1)
        k = len(fa)
        pa = np.asarray(self.pixel_a, dtype=np.int64).reshape(k, 2)
        fb = np.asarray(self.frame_b, dtype=np.int64).reshape(k)
        pb = np.asarray(self.pixel_b, dtype=np.float64).reshape(k, 2)
        w = np.asarray(self.weight, dtype=np.float64).reshape(k)
        if (w < 0).any() or not np.isfinite(w).all():
            raise ValueError("correspondence weights must be finite and non-negative")
        for name, val in zip(("frame_a", "pixel_a", "frame_b", "pixel_b", "weight"), (fa, pa, fb, pb, w)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    def __len__(self) -> int:
        return len(self.frame_a)

    def check_range(self, frame_count: int, width: int, height: int) -> None:
        if len(self) == 0:
            return
        if self.frame_a.min() < 0 or self.frame_a.max() >= frame_count:
            raise ValueError("correspondence frame_a out of range")
        if self.frame_b.min() < 0 or self.frame_b.max() >= frame_count:
            raise ValueError("correspondence frame_b out of range")
        u, v = self.pixel_a[:, 0], self.pixel_a[:, 1]
        if u.min() < 0 or u.max() >= width or v.min() < 0 or v.max() >= height:
            raise ValueError("correspondence pixel_a out of range")

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        return cls(np.zeros(0), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)), np.zeros(0))


@dataclass(frozen=True)
class OptimConfig:
    iterations: int = 300
    learning_rate: float = 0.05
    schedule: Literal["cosine", "constant"] = "cosine"
    min_learning_rate: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-8
    # updates are skipped while every gradient entry is below this; Adam would
    # otherwise rescale round-off gradients at a stationary point into full steps
    gradient_tolerance: float = 1e-9
    clip_length: int = 10
    keyframe: Literal["first", "middle"] = "first"
    residual: Literal["3d", "depth"] = "3d"
    correspondence_weight: float = 0.01
    optimize_focal: bool = True
    freeze_depth: bool = False
    freeze_poses: bool = False
    scale_grid: tuple[int, int] | None = (4, 4)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.clip_length < 2:
            raise ValueError(f"clip length must be >= 2, got {self.clip_length}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.residual not in ("3d", "depth"):
            raise ValueError(f"unknown residual mode {self.residual!r}")
        if self.gradient_tolerance < 0:
            raise ValueError(f"gradient tolerance must be non-negative, got {self.gradient_tolerance}")
        if self.correspondence_weight < 0:
            raise ValueError("correspondence weight must be >= 0")
        if self.scale_grid is not None:
            object.__setattr__(self, "scale_grid", tuple(int(g) for g in self.scale_grid))

    def replace(self, **kw) -> "OptimConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["scale_grid"] is not None:
            d["scale_grid"] = list(d["scale_grid"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OptimConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown OptimConfig keys: {sorted(unknown)}")
        return cls(**d)
