import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cornerquant.errors import InvalidInputError, NumericalError
from cornerquant.tensor_core import (
    hadamard_matrix,
    hadamard_transform,
    is_power_of_two,
    orthogonality_residual,
    random_hadamard,
    random_orthogonal,
    svd,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def check_svd(a, res, rtol=1e-8):
    n = a.shape[0]
    assert res.u.shape == res.vt.shape == (n, n)
    assert orthogonality_residual(res.u) <= 1e-9
    assert orthogonality_residual(res.vt.T) <= 1e-9
    assert np.all(res.sigma >= 0)
    assert np.all(np.diff(res.sigma) <= 0)
    scale = max(np.max(np.abs(a)), 1e-300)
    assert np.max(np.abs(res.reconstruct() - a)) <= rtol * scale


def test_svd_identity():
    res = svd(np.eye(4))
    np.testing.assert_array_equal(res.sigma, np.ones(4))
    np.testing.assert_allclose(res.u, np.eye(4), atol=1e-15)
    np.testing.assert_allclose(res.vt, np.eye(4), atol=1e-15)


def test_svd_diagonal():
    res = svd(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(res.sigma, [3, 1])
    np.testing.assert_allclose(res.u, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(res.vt, np.eye(2), atol=1e-15)


def test_svd_nilpotent_hand_oracle():
    # AᵀA = diag(0, 1): v₁ = e₂ with σ₁ = 1, and A v₁ = e₁ gives u₁.
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    res = svd(a)
    np.testing.assert_allclose(res.sigma, [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(np.abs(res.u[:, 0]), [1, 0], atol=1e-15)
    np.testing.assert_allclose(np.abs(res.vt[0]), [0, 1], atol=1e-15)
    assert res.u[:, 0] @ a @ res.vt[0] == pytest.approx(1.0)
    check_svd(a, res)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 16, 33, 64])
def test_svd_random_against_numpy(n):
    a = np.random.default_rng(n).standard_normal((n, n))
    res = svd(a)
    check_svd(a, res)
    np.testing.assert_allclose(res.sigma, np.linalg.svd(a, compute_uv=False), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("rank", [0, 1, 3, 7])
def test_svd_rank_deficient(rank):
    g = np.random.default_rng(rank)
    a = g.standard_normal((8, rank)) @ g.standard_normal((rank, 8))
    res = svd(a)
    check_svd(a, res, rtol=1e-8)
    assert np.all(res.sigma[rank:] <= 1e-12 * max(1.0, res.sigma[0]))


def test_svd_repeated_singular_values():
    q = random_orthogonal(6, 1)
    a = q @ np.diag([2, 2, 2, 1, 1, 0.5]) @ random_orthogonal(6, 2).T
    check_svd(a, svd(a))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 9)).map(lambda s: (s[0], s[0])), elements=finite))
def test_svd_property_reconstruction(a):
    check_svd(a, svd(a))


def test_svd_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        svd(np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(InvalidInputError):
        svd(np.ones((2, 3)))


def test_svd_sweep_cap():
    a = np.random.default_rng(0).standard_normal((8, 8))
    with pytest.raises(NumericalError):
        svd(a, max_sweeps=1)


def test_random_orthogonal_examples():
    assert abs(random_orthogonal(1, 5)[0, 0]) == pytest.approx(1.0)
    q = random_orthogonal(8, 7)
    assert orthogonality_residual(q) <= 1e-9
    np.testing.assert_array_equal(q, random_orthogonal(8, 7))
    assert not np.array_equal(q, random_orthogonal(8, 8))
    with pytest.raises(InvalidInputError):
        random_orthogonal(0, 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 32), st.integers(0, 2**32 - 1), st.integers(0, 2**16))
def test_orthogonal_preserves_norm(dim, seed, xseed):
    q = random_orthogonal(dim, seed)
    x = np.random.default_rng(xseed).standard_normal(dim)
    assert np.linalg.norm(q @ x) == pytest.approx(np.linalg.norm(x), rel=1e-10)


def test_hadamard_examples():
    np.testing.assert_allclose(hadamard_transform(np.array([1.0, 0.0])), [2**-0.5, 2**-0.5])
    e1 = np.eye(4)[0]
    np.testing.assert_allclose(hadamard_transform(hadamard_transform(e1)), e1, atol=1e-15)
    x = np.random.default_rng(0).standard_normal(8)
    assert np.linalg.norm(hadamard_transform(x)) == pytest.approx(np.linalg.norm(x), rel=1e-12)
    with pytest.raises(InvalidInputError):
        hadamard_transform(np.ones(6))


def test_hadamard_matches_sylvester_construction():
    h = np.array([[1.0]])
    for _ in range(5):
        h = np.block([[h, h], [h, -h]])
    np.testing.assert_allclose(hadamard_matrix(32), h / np.sqrt(32), atol=1e-15)
    x = np.random.default_rng(1).standard_normal((3, 32))
    np.testing.assert_allclose(hadamard_transform(x), x @ h.T / np.sqrt(32), atol=1e-13)
    np.testing.assert_allclose(hadamard_transform(x, normalize=False), x @ h.T, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 8), st.integers(0, 2**16))
def test_hadamard_involution(logd, seed):
    x = np.random.default_rng(seed).standard_normal(2**logd)
    np.testing.assert_allclose(hadamard_transform(hadamard_transform(x)), x, atol=1e-10)


def test_random_hadamard_examples():
    np.testing.assert_allclose(random_hadamard(2, signs=np.ones(2)), np.array([[1, 1], [1, -1]]) / np.sqrt(2))
    a = random_hadamard(16, 3)
    assert orthogonality_residual(a) <= 1e-9
    assert not np.array_equal(a, random_hadamard(16, 4))
    np.testing.assert_array_equal(a, random_hadamard(16, 3))
    with pytest.raises(InvalidInputError):
        random_hadamard(12, 0)


def test_is_power_of_two():
    assert [n for n in range(20) if is_power_of_two(n)] == [1, 2, 4, 8, 16]
