import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pkmkit.errors import NonFiniteEntry
from pkmkit.linalg import left_null_space, minors_indicator, null_space, pinv, rank_with_tolerance

matrices = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
                  elements=st.floats(-10, 10, allow_nan=False, allow_infinity=False))


def test_rank_of_constructed_matrix():
    rng = np.random.default_rng(0)
    U, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    V, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    s = np.array([3.0, 1.0, 1e-3, 1e-12])
    M = U[:, :4] @ np.diag(s) @ V.T
    info = rank_with_tolerance(M)
    assert info.rank == 3
    assert info.tol == pytest.approx(6 * 3.0 * 1e-10)
    assert info.gap_ratio == pytest.approx(1e-3 / 1e-12, rel=1e-2)
    assert not info.uncertain


def test_uncertain_when_gap_is_small():
    M = np.diag([1.0, 5e-9, 1e-9])
    info = rank_with_tolerance(M, rtol=1e-9)
    assert info.uncertain


def test_zero_and_empty():
    assert rank_with_tolerance(np.zeros((3, 2))).rank == 0
    assert rank_with_tolerance(np.zeros((0, 3))).rank == 0


def test_non_finite_rejected():
    with pytest.raises(NonFiniteEntry):
        rank_with_tolerance(np.array([[1.0, np.nan]]))


@settings(max_examples=60, deadline=None)
@given(matrices)
def test_null_spaces_are_orthonormal_and_annihilating(M):
    N = null_space(M)
    r = rank_with_tolerance(M).rank
    assert N.shape == (M.shape[1], M.shape[1] - r)
    assert np.allclose(N.T @ N, np.eye(N.shape[1]), atol=1e-10)
    scale = max(1.0, np.abs(M).max())
    if N.size:
        assert np.abs(M @ N).max() <= 1e-8 * scale
    L = left_null_space(M)
    if L.size:
        assert np.abs(L @ M).max() <= 1e-8 * scale


@settings(max_examples=60, deadline=None)
@given(matrices)
def test_pinv_penrose_conditions(M):
    P = pinv(M)
    scale = max(1.0, np.abs(M).max())
    assert np.allclose(M @ P @ M, M, atol=1e-7 * scale)
    assert np.allclose(P @ M @ P, P, atol=1e-7 * max(1.0, np.abs(P).max()))


def test_minors_indicator_brute_force():
    rng = np.random.default_rng(1)
    M = rng.normal(size=(3, 4))
    v = minors_indicator(M, 2)
    expected = []
    for r in [(0, 1), (0, 2), (1, 2)]:
        for c in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]:
            expected.append(np.linalg.det(M[np.ix_(r, c)]))
    assert np.allclose(v, np.array(expected) / np.linalg.norm(M, 2) ** 2)


def test_minors_indicator_flips_across_rank_drop():
    """det of [[1, t], [t, 1]] changes sign at t = 1, where the rank drops."""
    a = minors_indicator(np.array([[1.0, 0.9], [0.9, 1.0]]), 2)
    b = minors_indicator(np.array([[1.0, 1.1], [1.1, 1.0]]), 2)
    assert a @ b < 0
    assert np.allclose(minors_indicator(np.array([[1.0, 1.0], [1.0, 1.0]]), 2), 0)


def test_minors_indicator_stacks():
    rng = np.random.default_rng(2)
    Ms = rng.normal(size=(7, 3, 5))
    stacked = minors_indicator(Ms, 3)
    assert np.allclose(stacked, np.array([minors_indicator(M, 3) for M in Ms]))


def test_minors_indicator_invariant_to_scale():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(3, 3))
    assert np.allclose(minors_indicator(M, 2), minors_indicator(5.0 * M, 2))
