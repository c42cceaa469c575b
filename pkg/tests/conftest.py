import sys

import numpy as np
import pytest

from videoalign.alignment import AlignmentState, PairPrediction, energy_gradient, total_energy
from videoalign.geometry import ConfidenceMap, DepthMap, Intrinsics, PointMap, Pose, pose_retract, so3_exp
from videoalign.harness.synth import SceneSpec, synth_scene
from videoalign.viewgraph import Edge


def random_pose(rng, rot=0.3, trans=0.5):
    return Pose(so3_exp(rng.normal(size=3) * rot), rng.normal(size=3) * trans)


def random_instance(rng, frames=3, H=3, W=4, edges=None, invalid_frac=0.0):
    """Random state and random (inconsistent) pair predictions for gradient checks."""
    if edges is None:
        edges = [Edge(n, m) for n in range(frames) for m in range(frames) if n != m]
    ks = [Intrinsics(rng.uniform(3, 6), rng.uniform(3, 6), (W - 1) / 2, (H - 1) / 2, W, H) for _ in range(frames)]
    depths = []
    for _ in range(frames):
        valid = rng.random((H, W)) >= invalid_frac
        valid.flat[0] = True
        depths.append(DepthMap(np.where(valid, rng.uniform(1, 3, (H, W)), np.nan), valid))
    poses = [random_pose(rng) for _ in range(frames)]
    pairs = []
    for e in edges:
        xn = rng.normal(size=(H, W, 3)) + [0, 0, 2]
        xm = rng.normal(size=(H, W, 3)) + [0, 0, 2]
        pairs.append(
            PairPrediction(
                e,
                PointMap(xn),
                PointMap(xm),
                ConfidenceMap(rng.uniform(0.1, 1, (H, W))),
                ConfidenceMap(rng.uniform(0.1, 1, (H, W))),
            )
        )
    state = AlignmentState(depths, poses, ks, edges, np.exp(rng.normal(size=len(edges)) * 0.3))
    return state, pairs


def with_depth(state, i, factor_fn):
    depths = list(state.depths)
    depths[i] = factor_fn(depths[i])
    return AlignmentState(depths, state.poses, state.intrinsics, state.edges, state.edge_scales)


def perturbed(state, block, idx, h):
    """State moved by ``h`` along one coordinate of the optimizer's parameterization."""
    if block == "log_depth":
        i, r, c = idx

        def bump(d):
            v = d.values.copy()
            v[r, c] *= np.exp(h)
            return DepthMap(np.where(d.valid, v, np.nan), d.valid)

        return with_depth(state, i, bump)
    if block == "twist":
        i, j = idx
        tw = np.zeros(6)
        tw[j] = h
        poses = list(state.poses)
        poses[i] = pose_retract(poses[i], tw)
        return AlignmentState(state.depths, poses, state.intrinsics, state.edges, state.edge_scales)
    if block == "log_focal":
        ks = list(state.intrinsics)
        ks[idx] = ks[idx].scaled_focal(np.exp(h))
        return AlignmentState(state.depths, state.poses, ks, state.edges, state.edge_scales)
    if block == "log_sigma":
        s = state.edge_scales.copy()
        s[idx] *= np.exp(h)
        return AlignmentState(state.depths, state.poses, state.intrinsics, state.edges, s)
    raise KeyError(block)


def block_indices(state, block):
    if block == "log_depth":
        return [(i, r, c) for i, d in enumerate(state.depths) for r, c in zip(*np.nonzero(d.valid))]
    if block == "twist":
        return [(i, j) for i in range(state.frame_count) for j in range(6)]
    if block == "log_focal":
        return list(range(state.frame_count))
    return list(range(len(state.edges)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene():
    return synth_scene(SceneSpec(frame_count=4, width=16, height=12, seed=3))


H_FD = 1e-5


def fd_check(state, pairs, config, scale_gauge=None):
    """Largest relative error between analytic and central-difference gradients, per block."""
    g = energy_gradient(state, pairs, config, scale_gauge=scale_gauge)
    worst = {}
    for block in ("log_depth", "twist", "log_focal", "log_sigma"):
        ga = getattr(g, block)
        errs = []
        floor = 1e-3 * np.abs(ga).max()
        for idx in block_indices(state, block):
            ep = total_energy(perturbed(state, block, idx, H_FD), pairs, config, scale_gauge=scale_gauge)
            em = total_energy(perturbed(state, block, idx, -H_FD), pairs, config, scale_gauge=scale_gauge)
            fd = (ep - em) / (2 * H_FD)
            a = ga[idx]
            errs.append(abs(a - fd) / max(abs(a), abs(fd), floor, 1e-12))
        worst[block] = max(errs)
    return worst


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    results = getattr(acc, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
