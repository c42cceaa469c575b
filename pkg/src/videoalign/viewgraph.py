"""Pair enumeration and keyframe clip partitioning."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Literal

import numpy as np


@dataclass(frozen=True, order=True)
class Edge:
    """Ordered frame pair; ``n`` hosts both point maps."""

    n: int
    m: int

    def __post_init__(self):
        if self.n == self.m:
            raise ValueError(f"edge endpoints must differ, got ({self.n}, {self.m})")
        if self.n < 0 or self.m < 0:
            raise ValueError(f"negative frame index in edge ({self.n}, {self.m})")

    def __iter__(self):
        yield self.n
        yield self.m


@dataclass(frozen=True)
class Strategy:
    """Pair enumeration descriptor.

    kind="window": symmetric window of ``window`` neighbours with cyclic wrap,
    both orders. kind="strided": offsets ``1, 1+stride, ..., 1+stride*(window-1)``
    without wrap, both orders. kind="hierarchical": all unordered keyframe pairs
    plus all unordered pairs inside each clip of length ``clip_length``.
    """

    kind: Literal["window", "strided", "hierarchical"] = "window"
    window: int = 10
    stride: int = 2
    clip_length: int = 10
    keyframe: Literal["first", "middle"] = "first"

    def __post_init__(self):
        if self.kind not in ("window", "strided", "hierarchical"):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.window < 1 or self.stride < 1:
            raise ValueError("window and stride must be >= 1")
        if self.clip_length < 2:
            raise ValueError(f"clip length must be >= 2, got {self.clip_length}")
        if self.keyframe not in ("first", "middle"):
            raise ValueError(f"unknown keyframe rule {self.keyframe!r}")

    @classmethod
    def symmetric_window(cls, w: int) -> "Strategy":
        return cls("window", window=w)

    @classmethod
    def strided_window(cls, stride: int, w: int) -> "Strategy":
        return cls("strided", window=w, stride=stride)

    @classmethod
    def hierarchical(cls, M: int, keyframe: str = "first") -> "Strategy":
        return cls("hierarchical", clip_length=M, keyframe=keyframe)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "window": self.window,
            "stride": self.stride,
            "clip_length": self.clip_length,
            "keyframe": self.keyframe,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Strategy":
        return cls(**d)


@dataclass(frozen=True)
class ViewGraph:
    frame_count: int
    edges: tuple[Edge, ...]
    strategy: Strategy

    def __post_init__(self):
        if len(set(self.edges)) != len(self.edges):
            raise ValueError("duplicate edges in view graph")
        for e in self.edges:
            if e.n >= self.frame_count or e.m >= self.frame_count:
                raise ValueError(f"edge ({e.n}, {e.m}) out of range for {self.frame_count} frames")

    def __len__(self) -> int:
        return len(self.edges)

    def is_connected(self) -> bool:
        parent = list(range(self.frame_count))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for e in self.edges:
            parent[find(e.n)] = find(e.m)
        return len({find(i) for i in range(self.frame_count)}) == 1


@dataclass(frozen=True)
class ClipPartition:
    clips: tuple[range, ...]
    keyframes: tuple[int, ...]

    def __post_init__(self):
        covered = [i for c in self.clips for i in c]
        if covered != list(range(len(covered))):
            raise ValueError("clips must cover [0, N) contiguously and exactly once")
        for c, k in zip(self.clips, self.keyframes, strict=True):
            if k not in c:
                raise ValueError(f"keyframe {k} not inside clip {c}")

    @property
    def frame_count(self) -> int:
        return self.clips[-1].stop

    def keyframe_edges(self) -> list[Edge]:
        """One edge per unordered keyframe pair."""
        return tournament_edges(self.keyframes)

    def clip_edges(self, index: int) -> list[Edge]:
        """One edge per unordered frame pair inside a clip."""
        clip, key = self.clips[index], self.keyframes[index]
        return tournament_edges([key] + [i for i in clip if i != key])


def tournament_edges(frames) -> list[Edge]:
    """Orient every unordered pair of ``frames`` once, as a balanced tournament.

    Position a points at b when (b - a) mod K lies in the first half of the
    cycle, so each frame is the reference view of about half its pairs.
    With plain ``n < m`` ordering the last frame would never be a reference,
    and its focal length would only be constrained through resection.
    """
    frames = list(frames)
    K = len(frames)
    out = []
    for a in range(K):
        for b in range(a + 1, K):
            d = b - a
            if 2 * d < K or (2 * d == K and a % 2 == 0):
                out.append(Edge(frames[a], frames[b]))
            else:
                out.append(Edge(frames[b], frames[a]))
    return sorted(out)


def keyframe_partition(frame_count: int, M: int, keyframe: str = "first") -> ClipPartition:
    if M < 2:
        raise ValueError(f"clip length must be >= 2, got {M}")
    if frame_count < 1:
        raise ValueError(f"frame count must be >= 1, got {frame_count}")
    clips = tuple(range(s, min(s + M, frame_count)) for s in range(0, frame_count, M))
    if keyframe == "first":
        keys = tuple(c.start for c in clips)
    elif keyframe == "middle":
        keys = tuple(c.start + (len(c) - 1) // 2 for c in clips)
    else:
        raise ValueError(f"unknown keyframe rule {keyframe!r}")
    return ClipPartition(clips, keys)


def enumerate_pairs(frame_count: int, strategy: Strategy) -> ViewGraph:
    """Build the edge list for ``strategy``, sorted lexicographically by (n, m)."""
    if frame_count < 2:
        raise ValueError(f"need at least 2 frames, got {frame_count}")
    N = frame_count
    edges: set[Edge] = set()
    if strategy.kind == "window":
        for i in range(N):
            for k in range(1, strategy.window + 1):
                j = (i + k) % N
                if j != i:
                    edges.add(Edge(i, j))
                    edges.add(Edge(j, i))
    elif strategy.kind == "strided":
        offsets = [1 + strategy.stride * k for k in range(strategy.window)]
        for i in range(N):
            for d in offsets:
                if i + d < N:
                    edges.add(Edge(i, i + d))
                    edges.add(Edge(i + d, i))
    else:
        part = keyframe_partition(N, strategy.clip_length, strategy.keyframe)
        edges.update(part.keyframe_edges())
        for c in range(len(part.clips)):
            edges.update(part.clip_edges(c))
    return ViewGraph(N, tuple(sorted(edges)), strategy)


def hierarchical_pair_count(frame_count: int, M: int) -> int:
    """Closed form: C(K, 2) keyframe pairs plus C(|clip|, 2) per clip."""
    sizes = [min(M, frame_count - s) for s in range(0, frame_count, M)]
    return math.comb(len(sizes), 2) + sum(math.comb(s, 2) for s in sizes)


def training_pair_sampler(frame_count: int, seed=None, max_stride: int = 10) -> Iterator[Edge]:
    """Endless stream of training pairs ``(i, i+s)`` with s uniform in [1, max_stride].

    The stride is clamped to ``frame_count - 1`` so short clips still yield pairs.
    """
    if frame_count < 2:
        raise ValueError(f"need at least 2 frames, got {frame_count}")
    rng = np.random.default_rng(seed)
    s_max = min(max_stride, frame_count - 1)
    while True:
        s = int(rng.integers(1, s_max + 1))
        i = int(rng.integers(0, frame_count - s))
        yield Edge(i, i + s)
