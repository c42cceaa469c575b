import numpy as np
import pytest

from videoalign.alignment import (
    AlignmentState,
    CorrespondenceSet,
    OptimConfig,
    correspondence_residual,
    optimize_global,
    total_energy,
)
from videoalign.geometry import DepthMap
from videoalign.harness.synth import perturb_state
from videoalign.viewgraph import Edge, Strategy, enumerate_pairs

from conftest import block_indices, perturbed

EDGES = [Edge(0, 1), Edge(1, 2), Edge(2, 0), Edge(3, 1)]


def corr_energy(state, corr):
    return correspondence_residual(state, corr)[0]


def test_ground_truth_residual_is_zero(small_scene):
    corr = small_scene.correspondences(EDGES, per_edge=20)
    e, g, skipped = correspondence_residual(small_scene.ground_truth_state(EDGES), corr)
    assert len(corr) > 40 and skipped == 0
    assert e < 1e-18
    assert np.abs(g.twist).max() < 1e-8


def test_residual_is_weighted_pixel_error(small_scene):
    gt = small_scene.ground_truth_state(EDGES)
    c = small_scene.correspondences(EDGES[:1], per_edge=5)
    shifted = CorrespondenceSet(c.frame_a, c.pixel_a, c.frame_b, c.pixel_b + [0.5, 0.0], 2 * c.weight)
    e, _, _ = correspondence_residual(gt, shifted, weight=0.1)
    assert e == pytest.approx(0.1 * float((2 * c.weight * 0.25).sum()), rel=1e-9)


def test_gradient_matches_finite_differences(small_scene):
    rng = np.random.default_rng(0)
    corr = small_scene.correspondences(EDGES, per_edge=6)
    for trial in range(3):
        state = perturb_state(small_scene.ground_truth_state(EDGES), rng, 0.02, 0.02, 0.05)
        _, g, skipped = correspondence_residual(state, corr)
        assert skipped == 0
        h = 1e-5
        for block in ("log_depth", "twist", "log_focal"):
            ga = getattr(g, block)
            floor = 1e-3 * np.abs(ga).max()
            for idx in block_indices(state, block):
                fd = (corr_energy(perturbed(state, block, idx, h), corr) - corr_energy(perturbed(state, block, idx, -h), corr)) / (2 * h)
                a = ga[idx]
                assert abs(a - fd) / max(abs(a), abs(fd), floor, 1e-12) < 1e-5, (block, idx)
        assert not g.log_sigma.any()


def test_invalid_depth_pixels_are_skipped(small_scene):
    gt = small_scene.ground_truth_state(EDGES)
    corr = small_scene.correspondences(EDGES, per_edge=20)
    d0 = gt.depths[0]
    valid = d0.valid.copy()
    valid[:, : small_scene.spec.width // 2] = False
    depths = (DepthMap(np.where(valid, d0.values, np.nan), valid),) + tuple(gt.depths[1:])
    st = AlignmentState(depths, gt.poses, gt.intrinsics, gt.edges, gt.edge_scales)
    expected = int(((corr.frame_a == 0) & (corr.pixel_a[:, 0] < small_scene.spec.width // 2)).sum())
    e, _, skipped = correspondence_residual(st, corr)
    assert expected > 0 and skipped == expected
    assert e < 1e-18


def test_out_of_range_rejected(small_scene):
    gt = small_scene.ground_truth_state(EDGES)
    bad = CorrespondenceSet([0], [[99, 0]], [1], [[1.0, 1.0]], [1.0])
    with pytest.raises(ValueError, match="pixel_a"):
        correspondence_residual(gt, bad)
    with pytest.raises(ValueError):
        CorrespondenceSet([0], [[1, 1]], [1], [[1.0, 1.0]], [-1.0])


def test_total_energy_adds_weighted_term(small_scene):
    g = enumerate_pairs(4, Strategy.symmetric_window(1))
    pairs = small_scene.render_pairs(g)
    state = perturb_state(small_scene.ground_truth_state(g.edges), np.random.default_rng(1))
    corr = small_scene.correspondences(g.edges, per_edge=8)
    cfg = OptimConfig(correspondence_weight=0.3)
    base = total_energy(state, pairs, cfg)
    assert total_energy(state, pairs, cfg, corr=corr) == pytest.approx(base + corr_energy(state, corr) * 0.3, rel=1e-12)


def test_zero_weight_gives_identical_trajectory(small_scene):
    g = enumerate_pairs(4, Strategy.symmetric_window(1))
    pairs = small_scene.render_pairs(g)
    init = perturb_state(small_scene.ground_truth_state(g.edges), np.random.default_rng(2))
    corr = small_scene.correspondences(g.edges, per_edge=8)
    cfg = OptimConfig(iterations=40, correspondence_weight=0.0)
    a = optimize_global(pairs, init, cfg)
    b = optimize_global(pairs, init, cfg, corr=corr)
    assert a.energy_trace == b.energy_trace
    for p, q in zip(a.state.poses, b.state.poses):
        np.testing.assert_array_equal(p.matrix(), q.matrix())


def test_empty_set_is_noop(small_scene):
    gt = small_scene.ground_truth_state(EDGES)
    e, g, skipped = correspondence_residual(gt, CorrespondenceSet.empty())
    assert e == 0.0 and skipped == 0 and not g.twist.any()
