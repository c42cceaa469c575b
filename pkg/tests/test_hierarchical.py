import numpy as np
import pytest

from videoalign.alignment import OptimConfig, initial_state, optimize_global, optimize_hierarchical
from videoalign.alignment.hierarchical import keyframe_similarity
from videoalign.evaluation import DepthSequence, Trajectory, evaluate_depth, pose_metrics
from videoalign.geometry import DepthMap, Pose, so3_exp
from videoalign.harness.synth import SceneSpec, synth_scene
from videoalign.viewgraph import Strategy, enumerate_pairs


class CountingProvider:
    def __init__(self, scene):
        self.scene = scene
        self.calls = []

    def __call__(self, edges):
        self.calls.append(list(edges))
        return self.scene.render_pairs(edges)


@pytest.fixture(scope="module")
def long_run():
    sc = synth_scene(SceneSpec(frame_count=30, width=16, height=12, seed=4))
    provider = CountingProvider(sc)
    return sc, provider, optimize_hierarchical(provider, 30, OptimConfig(clip_length=10))


def test_pair_budget(long_run):
    _, provider, res = long_run
    assert res.pairs_evaluated == 138
    assert sum(len(c) for c in provider.calls) == 138
    assert res.stage_pair_counts == [3, 45, 45, 45]
    assert res.peak_resident_pairs == 45
    requested = {e for c in provider.calls for e in c}
    assert requested == set(enumerate_pairs(30, Strategy.hierarchical(10)).edges)


def test_merged_state_covers_all_frames(long_run):
    _, _, res = long_run
    assert res.state.frame_count == 30
    assert len(res.state.edges) == 138
    assert len(res.clip_results) == 3 and res.keyframe_result is not None
    assert len(res.energy_trace) == 4 * 301


def test_noiseless_recovery(long_run):
    sc, _, res = long_run
    abs_rel = evaluate_depth(DepthSequence(res.state.depths), sc.depth_sequence)[0]
    ate = pose_metrics(Trajectory.from_poses(res.state.poses), sc.trajectory)[0]
    assert abs_rel < 1e-4
    assert ate < 1e-3


def test_keyframes_keep_stage_one_values(long_run):
    _, _, res = long_run
    for i, k in enumerate(res.partition.keyframes):
        np.testing.assert_array_equal(res.state.poses[k].matrix(), res.keyframe_result.state.poses[i].matrix())
        np.testing.assert_array_equal(res.state.depths[k].values, res.keyframe_result.state.depths[i].values)


def test_single_clip_matches_global(small_scene):
    cfg = OptimConfig(iterations=40, clip_length=10)
    res = optimize_hierarchical(small_scene.render_pairs, 4, cfg)
    pairs = small_scene.render_pairs(enumerate_pairs(4, Strategy.hierarchical(10)))
    ref = optimize_global(pairs, initial_state(pairs, 4), cfg)
    assert res.keyframe_result is None
    assert res.energy_trace == ref.energy_trace
    for a, b in zip(res.state.depths, ref.state.depths):
        np.testing.assert_array_equal(a.values, b.values)
    assert res.pairs_evaluated == 6


def test_short_trailing_clip():
    sc = synth_scene(SceneSpec(frame_count=11, width=12, height=9, seed=1))
    res = optimize_hierarchical(sc.render_pairs, 11, OptimConfig(iterations=20, clip_length=5))
    # clips 0-4, 5-9, 10; the singleton clip has no pairs of its own
    assert res.stage_pair_counts == [3, 10, 10]
    assert all(d is not None for d in res.state.depths)


def test_too_few_frames(small_scene):
    with pytest.raises(ValueError):
        optimize_hierarchical(small_scene.render_pairs, 1)


def test_provider_must_return_requested_edges(small_scene):
    with pytest.raises(ValueError, match="different edges"):
        optimize_hierarchical(lambda edges: small_scene.render_pairs(list(edges)[::-1]), 4)


def test_keyframe_similarity_inverts_known_similarity(rng):
    clip_pose = Pose(so3_exp(rng.normal(size=3)), rng.normal(size=3))
    R0, t0, s0 = so3_exp(rng.normal(size=3)), rng.normal(size=3), 2.5
    key_pose = Pose(R0 @ clip_pose.rotation, s0 * R0 @ clip_pose.translation + t0)
    d = rng.uniform(1, 3, (4, 5))
    sim = keyframe_similarity(clip_pose, DepthMap(d), key_pose, DepthMap(s0 * d))
    assert sim.scale == pytest.approx(s0, rel=1e-12)
    np.testing.assert_allclose(sim.rotation, R0, atol=1e-12)
    np.testing.assert_allclose(sim.translation, t0, atol=1e-12)
    other = Pose(so3_exp(rng.normal(size=3)), rng.normal(size=3))
    moved, depth = sim.apply(other, DepthMap(d))
    np.testing.assert_allclose(moved.translation, s0 * R0 @ other.translation + t0, atol=1e-12)
    np.testing.assert_allclose(depth.values, s0 * d)
