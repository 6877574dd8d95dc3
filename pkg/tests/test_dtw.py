import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_dtw
from semg2v.dtw import (AlignmentError, AlignmentPath, distance_matrix, dtw_basic, dtw_refined,
                        durations_from_targets, path_to_durations, path_to_targets)


def test_identity_alignment():
    x = np.random.default_rng(0).normal(size=(7, 4))
    p = dtw_basic(x, x)
    assert p.total_cost == 0
    assert [tuple(r) for r in p.pairs] == [(k, k) for k in range(7)]


def test_worked_example():
    X, x = np.array([0.0, 2.0, 4.0]), np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    best, paths = brute_force_dtw(np.abs(X[:, None] - x[None, :]))
    assert best == 2.0
    p = dtw_basic(X, x)
    assert p.total_cost == 2.0
    assert [tuple(r) for r in p.pairs] == [(0, 0), (0, 1), (1, 2), (1, 3), (2, 4)]
    assert [tuple(r) for r in p.pairs] in [[tuple(q) for q in path] for path in paths]
    assert list(path_to_targets(p, 5)) == [0, 0, 1, 1, 2]
    assert list(path_to_durations(p, 3, 5)) == [2, 2, 1]


def test_single_source_frame():
    p = dtw_basic(np.zeros((1, 2)), np.ones((6, 2)))
    assert [tuple(r) for r in p.pairs] == [(0, j) for j in range(6)]


def test_refined_reduces_to_basic():
    rng = np.random.default_rng(1)
    X, x = rng.normal(size=(5, 3)), rng.normal(size=(8, 3))
    a = dtw_basic(X, x)
    b = dtw_refined(X, x, rng.normal(size=(5, 2)), rng.normal(size=(8, 2)), 0.0)
    assert np.array_equal(a.pairs, b.pairs) and a.total_cost == b.total_cost
    c = dtw_refined(X, x, np.ones((5, 2)), np.ones((8, 2)), 10.0)
    assert np.array_equal(a.pairs, c.pairs)


def test_refined_follows_mel_cost():
    X, x = np.zeros((3, 1)), np.ones((5, 1))
    pred = np.array([[0.0], [10.0], [20.0]])
    target = np.array([[0.0], [10.0], [10.0], [20.0], [20.0]])
    cost = distance_matrix(X, x) + 10 * distance_matrix(pred, target)
    best, paths = brute_force_dtw(cost)
    expected = [(0, 0), (1, 1), (1, 2), (2, 3), (2, 4)]
    assert paths == [expected]
    p = dtw_refined(X, x, pred, target, 10.0)
    assert [tuple(r) for r in p.pairs] == expected
    assert p.total_cost == pytest.approx(best)


def test_refined_frame_count_errors():
    with pytest.raises(AlignmentError):
        dtw_refined(np.zeros((3, 1)), np.zeros((4, 1)), np.zeros((2, 1)), np.zeros((4, 1)), 1.0)
    with pytest.raises(AlignmentError):
        dtw_refined(np.zeros((3, 1)), np.zeros((4, 1)), np.zeros((3, 1)), np.zeros((5, 1)), 1.0)


def test_input_errors():
    with pytest.raises(AlignmentError):
        dtw_basic(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(AlignmentError):
        dtw_basic(np.zeros((3, 2)), np.zeros((3, 4)))


def test_duration_definitions():
    assert list(durations_from_targets([1, 1, 1], 3)) == [0, 3, 0]
    diag = AlignmentPath([(k, k) for k in range(4)], 0.0)
    assert list(path_to_durations(diag, 4, 4)) == [1, 1, 1, 1]
    # vertical run: source frames 0..2 all paired with target frame 0
    p = AlignmentPath([(0, 0), (1, 0), (2, 0), (2, 1)], 0.0)
    assert list(path_to_durations(p, 3, 2)) == [0, 0, 2]


def test_malformed_path():
    with pytest.raises(AlignmentError):
        path_to_durations(AlignmentPath([(0, 0), (2, 1)], 0.0), 3, 2)
    with pytest.raises(AlignmentError):
        path_to_durations(AlignmentPath([(0, 1), (1, 1)], 0.0), 2, 2)


small = st.tuples(st.integers(1, 6), st.integers(1, 8), st.integers(0, 2 ** 31 - 1))


@settings(max_examples=60, deadline=None)
@given(small)
def test_dp_matches_enumeration(args):
    N, M, seed = args
    rng = np.random.default_rng(seed)
    X, x = rng.integers(-5, 6, size=N).astype(float), rng.integers(-5, 6, size=M).astype(float)
    p = dtw_basic(X, x)
    best, paths = brute_force_dtw(np.abs(X[:, None] - x[None, :]))
    assert p.total_cost == best
    assert [tuple(r) for r in p.pairs] in [[tuple(q) for q in path] for path in paths]
    A = path_to_targets(p, M)
    assert np.all(np.diff(A) >= 0)
    assert path_to_durations(p, N, M).sum() == M
