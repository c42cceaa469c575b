"""Keyframe-first optimization for long videos.

Stage 1 aligns one keyframe per clip using only keyframe pairs. Stage 2
aligns each clip with its own pairs and then moves the result onto the
stage-1 keyframe by a similarity, so keyframe variables stay fixed and every
clip lands in the common frame. Pair predictions are requested stage by stage so at most
one stage's pair set is resident.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..geometry import DepthMap, Intrinsics, Pose
from ..viewgraph import ClipPartition, Edge, keyframe_partition
from .optim import OptimResult, _resolve_intrinsics, initial_state, optimize_global
from .types import AlignmentState, OptimConfig, PairPrediction

log = logging.getLogger(__name__)

PairsProvider = Callable[[Sequence[Edge]], list[PairPrediction]]


class PairAccounting:
    """Wraps a provider and records how many predictions each request materializes."""

    def __init__(self, provider: PairsProvider):
        self.provider = provider
        self.requests: list[int] = []
        self.resident = 0
        self.peak_resident = 0

    def acquire(self, edges: Sequence[Edge]) -> list[PairPrediction]:
        pairs = self.provider(list(edges))
        if [p.edge for p in pairs] != list(edges):
            raise ValueError("pairs provider returned predictions for different edges than requested")
        self.requests.append(len(pairs))
        self.resident += len(pairs)
        self.peak_resident = max(self.peak_resident, self.resident)
        return pairs

    def release(self, pairs: list[PairPrediction]) -> None:
        self.resident -= len(pairs)
        pairs.clear()

    @property
    def total(self) -> int:
        return sum(self.requests)


@dataclass
class HierarchicalResult:
    state: AlignmentState
    partition: ClipPartition
    keyframe_result: OptimResult | None
    clip_results: list[OptimResult]
    pairs_evaluated: int
    peak_resident_pairs: int
    stage_pair_counts: list[int] = field(default_factory=list)

    @property
    def energy_trace(self) -> list[float]:
        out: list[float] = []
        if self.keyframe_result is not None:
            out.extend(self.keyframe_result.energy_trace)
        for r in self.clip_results:
            out.extend(r.energy_trace)
        return out


@dataclass(frozen=True)
class KeyframeSimilarity:
    """World similarity taking a clip's own reconstruction onto the fixed keyframe."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    def apply(self, pose: Pose, depth: DepthMap) -> tuple[Pose, DepthMap]:
        p = Pose(self.rotation @ pose.rotation, self.scale * self.rotation @ pose.translation + self.translation)
        return p, DepthMap(self.scale * depth.values, depth.valid)


def keyframe_similarity(clip_pose: Pose, clip_depth: DepthMap, key_pose: Pose, key_depth: DepthMap) -> KeyframeSimilarity:
    """Similarity mapping ``clip_pose`` onto ``key_pose``; the scale is the
    geometric-mean depth ratio of the two keyframe estimates."""
    mask = clip_depth.valid & key_depth.valid
    if not mask.any():
        raise ValueError("keyframe depth estimates share no valid pixel")
    s = float(np.exp(np.mean(np.log(key_depth.values[mask]) - np.log(clip_depth.values[mask]))))
    R = key_pose.rotation @ clip_pose.rotation.T
    return KeyframeSimilarity(R, key_pose.translation - s * R @ clip_pose.translation, s)


def _local(pairs: list[PairPrediction], frames: list[int]) -> list[PairPrediction]:
    idx = {f: i for i, f in enumerate(frames)}
    return [p.with_edge(Edge(idx[p.edge.n], idx[p.edge.m])) for p in pairs]


def optimize_hierarchical(
    pairs_provider: PairsProvider,
    frame_count: int,
    config: OptimConfig | None = None,
    intrinsics=None,
) -> HierarchicalResult:
    config = config or OptimConfig()
    if frame_count < 2:
        raise ValueError(f"need at least 2 frames, got {frame_count}")
    part = keyframe_partition(frame_count, config.clip_length, config.keyframe)
    acct = PairAccounting(pairs_provider)

    if len(part.clips) == 1:
        pairs = acct.acquire(part.clip_edges(0))
        res = optimize_global(pairs, initial_state(pairs, frame_count, intrinsics), config)
        acct.release(pairs)
        return HierarchicalResult(res.state, part, None, [res], acct.total, acct.peak_resident, list(acct.requests))

    # stage 1: keyframes only
    keys = list(part.keyframes)
    kpairs = acct.acquire(part.keyframe_edges())
    shape = kpairs[0].shape
    ks_all = _resolve_intrinsics(intrinsics, frame_count, shape)
    klocal = _local(kpairs, keys)
    kinit = initial_state(klocal, len(keys), [ks_all[k] for k in keys])
    kres = optimize_global(klocal, kinit, config)
    acct.release(kpairs)
    del klocal
    log.info("keyframe clip: %d frames, %d pairs", len(keys), kres.pairs_evaluated)

    depths: list[DepthMap | None] = [None] * frame_count
    poses: list[Pose | None] = [None] * frame_count
    ks: list[Intrinsics | None] = [None] * frame_count
    for i, k in enumerate(keys):
        depths[k] = kres.state.depths[i]
        poses[k] = kres.state.poses[i]
        ks[k] = kres.state.intrinsics[i]
    all_edges: list[Edge] = list(part.keyframe_edges())
    all_scales: list[float] = list(kres.state.edge_scales)

    # stage 2: each clip on its own, then attached to its fixed keyframe
    clip_results = []
    for c, clip in enumerate(part.clips):
        key = part.keyframes[c]
        if len(clip) == 1:
            continue
        frames = [key] + [f for f in clip if f != key]
        edges = part.clip_edges(c)
        cpairs = acct.acquire(edges)
        local = _local(cpairs, frames)
        res = optimize_global(local, initial_state(local, len(frames), [ks_all[f] for f in frames]), config)
        acct.release(cpairs)
        del local
        clip_results.append(res)

        sim = keyframe_similarity(res.state.poses[0], res.state.depths[0], poses[key], depths[key])
        for i, f in enumerate(frames[1:], start=1):
            poses[f], depths[f] = sim.apply(res.state.poses[i], res.state.depths[i])
            ks[f] = res.state.intrinsics[i]
        all_edges.extend(edges)
        all_scales.extend(sim.scale * np.asarray(res.state.edge_scales))
        log.info("clip %d: frames %d-%d, %d pairs", c, clip.start, clip.stop - 1, res.pairs_evaluated)

    state = AlignmentState(tuple(depths), tuple(poses), tuple(ks), tuple(all_edges), np.array(all_scales))
    log.info("hierarchical alignment evaluated %d pairs (peak resident %d)", acct.total, acct.peak_resident)
    return HierarchicalResult(state, part, kres, clip_results, acct.total, acct.peak_resident, list(acct.requests))
