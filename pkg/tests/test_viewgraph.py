import math
from collections import Counter
from itertools import islice

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from videoalign.viewgraph import (
    Edge,
    Strategy,
    ViewGraph,
    enumerate_pairs,
    hierarchical_pair_count,
    keyframe_partition,
    tournament_edges,
    training_pair_sampler,
)


def test_edge_validation():
    with pytest.raises(ValueError):
        Edge(2, 2)
    with pytest.raises(ValueError):
        Edge(-1, 0)


def test_pair_counts_from_closed_forms():
    assert len(enumerate_pairs(30, Strategy.symmetric_window(10)).edges) == 600
    assert len(enumerate_pairs(30, Strategy.strided_window(2, 5)).edges) == 250
    assert len(enumerate_pairs(30, Strategy.hierarchical(10)).edges) == 138


def test_two_frame_window():
    g = enumerate_pairs(2, Strategy.symmetric_window(1))
    assert set(g.edges) == {Edge(0, 1), Edge(1, 0)}


def test_too_few_frames():
    with pytest.raises(ValueError):
        enumerate_pairs(1, Strategy.symmetric_window(1))


def test_window_count_formula():
    for N, w in [(25, 5), (30, 10), (41, 3)]:
        assert N > 2 * w
        assert len(enumerate_pairs(N, Strategy.symmetric_window(w)).edges) == 2 * w * N


def test_window_wraps_cyclically():
    edges = set(enumerate_pairs(30, Strategy.symmetric_window(10)).edges)
    assert Edge(29, 0) in edges and Edge(0, 29) in edges and Edge(25, 5) in edges


def test_strided_offsets():
    edges = set(enumerate_pairs(30, Strategy.strided_window(2, 5)).edges)
    diffs = Counter(e.m - e.n for e in edges)
    assert set(diffs) == {1, 3, 5, 7, 9, -1, -3, -5, -7, -9}
    assert diffs[9] == 21


def test_sorted_and_deterministic():
    for s in (Strategy.symmetric_window(4), Strategy.strided_window(3, 3), Strategy.hierarchical(5)):
        a = enumerate_pairs(17, s).edges
        assert list(a) == sorted(a)
        assert a == enumerate_pairs(17, s).edges


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.integers(2, 12), st.integers(1, 6), st.integers(1, 4))
def test_every_strategy_is_connected(N, M, w, stride):
    for s in (Strategy.symmetric_window(w), Strategy.strided_window(stride, w), Strategy.hierarchical(M)):
        assert enumerate_pairs(N, s).is_connected()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 80), st.integers(2, 20))
def test_hierarchical_count_closed_form(N, M):
    K = math.ceil(N / M)
    sizes = [min(M, N - s) for s in range(0, N, M)]
    expected = K * (K - 1) // 2 + sum(s * (s - 1) // 2 for s in sizes)
    assert hierarchical_pair_count(N, M) == expected
    assert len(enumerate_pairs(N, Strategy.hierarchical(M)).edges) == expected


def test_keyframe_partition_examples():
    p = keyframe_partition(30, 10)
    assert len(p.clips) == 3 and p.keyframes == (0, 10, 20)
    assert len(keyframe_partition(10, 10).clips) == 1
    assert [len(c) for c in keyframe_partition(25, 10).clips] == [10, 10, 5]
    assert keyframe_partition(25, 10, keyframe="middle").keyframes == (4, 14, 22)
    with pytest.raises(ValueError):
        keyframe_partition(10, 1)


def test_single_clip_when_clip_longer_than_video():
    assert len(keyframe_partition(7, 10).clips) == 1
    assert len(enumerate_pairs(7, Strategy.hierarchical(10)).edges) == 21


def test_tournament_every_frame_is_reference():
    for K in range(2, 13):
        edges = tournament_edges(range(K))
        assert len(edges) == K * (K - 1) // 2
        assert {frozenset((e.n, e.m)) for e in edges} == {frozenset((a, b)) for a in range(K) for b in range(a + 1, K)}
        out = Counter(e.n for e in edges)
        if K > 2:
            assert set(out) == set(range(K))
            assert max(out.values()) - min(out.values()) <= 1


def test_viewgraph_rejects_duplicates_and_range():
    with pytest.raises(ValueError):
        ViewGraph(3, (Edge(0, 1), Edge(0, 1)), Strategy())
    with pytest.raises(ValueError):
        ViewGraph(3, (Edge(0, 3),), Strategy())


def test_strategy_dict_roundtrip():
    s = Strategy.strided_window(3, 4)
    assert Strategy.from_dict(s.to_dict()) == s


def test_sampler_two_frames():
    assert set(islice(training_pair_sampler(2, seed=0), 50)) == {Edge(0, 1)}


def test_sampler_deterministic_and_in_range():
    a = list(islice(training_pair_sampler(40, seed=5), 500))
    b = list(islice(training_pair_sampler(40, seed=5), 500))
    assert a == b
    assert all(1 <= e.m - e.n <= 10 and e.m < 40 for e in a)


def test_sampler_stride_histogram_uniform():
    n = 100_000
    strides = np.fromiter((e.m - e.n for e in islice(training_pair_sampler(100, seed=1), n)), dtype=int)
    counts = np.bincount(strides, minlength=11)[1:]
    expected = n / 10
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    # chi-square with 9 dof: mean 9, sd sqrt(18); 3 sigma bound
    assert chi2 < 9 + 3 * math.sqrt(18)
