import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cornerquant.corner_geometry import NormalizedBatch, corner_objective, corner_targets
from cornerquant.errors import EmptyAccumulatorError, InvalidInputError
from cornerquant.procrustes import (
    BlockDiagonalRotation,
    ProcrustesAccumulator,
    accumulate,
    alternate,
    opu,
    opu_blockdiag,
)
from cornerquant.tensor_core import hadamard_matrix, orthogonality_residual, random_orthogonal


def heavy(n, d, seed):
    return np.random.default_rng(seed).standard_t(3, size=(n, d))


def test_two_by_two_hand_oracle():
    # X̃ = [[0, 1]], Z = [[1, 0]]: C = ZᵀX̃ = [[0, 1], [0, 0]], whose polar factor swaps the axes.
    acc = ProcrustesAccumulator(2, c=np.array([[0.0, 1.0], [0.0, 0.0]]), n_samples=1)
    r = opu(acc)
    np.testing.assert_allclose(r, [[0, 1], [1, 0]], atol=1e-15)
    np.testing.assert_allclose(np.array([[0.0, 1.0]]) @ r.T, [[1.0, 0.0]], atol=1e-15)


def test_targets_already_met_gives_identity():
    # rows that are their own targets make C = Σ zzᵀ symmetric positive definite
    h = hadamard_matrix(8)
    acc = accumulate(ProcrustesAccumulator(8), np.eye(8), np.vstack([h, h[:3]]))
    np.testing.assert_allclose(opu(acc), np.eye(8), atol=1e-12)


def test_empty_accumulator():
    acc = ProcrustesAccumulator(4)
    accumulate(acc, np.eye(4), np.zeros((0, 4)))
    assert acc.n_samples == 0 and not acc.c.any()
    with pytest.raises(EmptyAccumulatorError):
        opu(acc)
    # rows of norm zero are dropped and leave the accumulator empty too
    accumulate(acc, np.eye(4), np.zeros((3, 4)))
    assert acc.n_samples == 0


def test_dim_mismatch():
    acc = ProcrustesAccumulator(4)
    with pytest.raises(InvalidInputError):
        acc.add(np.eye(4), np.ones((2, 3)))
    with pytest.raises(InvalidInputError):
        acc.add(np.eye(3), np.ones((2, 4)))


def test_single_corner_row_contribution():
    z = np.array([[1.0, -1.0, 1.0, 1.0]]) / 2
    acc = accumulate(ProcrustesAccumulator(4), np.eye(4), z)
    np.testing.assert_allclose(acc.c, z.T @ z)
    assert np.trace(acc.c) == pytest.approx(1.0)


def test_reset():
    acc = accumulate(ProcrustesAccumulator(4), np.eye(4), heavy(5, 4, 0))
    acc.reset()
    assert acc.n_samples == 0 and not acc.c.any() and acc.l1_sum == 0.0


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([2, 4, 8, 16]), st.integers(1, 30), st.integers(1, 30), st.integers(0, 2**31))
def test_streaming_equivalence(d, n1, n2, seed):
    r = random_orthogonal(d, seed)
    a, b = heavy(n1, d, seed), heavy(n2, d, seed + 1)
    split = accumulate(accumulate(ProcrustesAccumulator(d), r, a), r, b)
    whole = accumulate(ProcrustesAccumulator(d), r, np.vstack([a, b]))
    assert split.n_samples == whole.n_samples
    np.testing.assert_allclose(split.c, whole.c, rtol=0, atol=1e-12)
    # the optimum value is unique; the maximizer only when C has full rank
    sv = np.linalg.svd(whole.c, compute_uv=False)
    for acc in (split, whole):
        assert np.sum(opu(acc) * whole.c) == pytest.approx(sv.sum(), rel=1e-10)
    if sv[-1] > 1e-6 * sv[0]:
        np.testing.assert_allclose(opu(split), opu(whole), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([2, 3, 4, 8, 16, 32]), st.integers(0, 2**31))
def test_opu_is_orthogonal_and_optimal(d, seed):
    acc = accumulate(ProcrustesAccumulator(d), random_orthogonal(d, seed), heavy(64, d, seed))
    r = opu(acc)
    assert orthogonality_residual(r) <= 1e-9
    best = float(np.sum(r * acc.c))
    for k in range(20):
        q = random_orthogonal(d, [seed, k])
        assert np.sum(q * acc.c) <= best + 1e-9
    # nuclear norm is the maximum of ⟨R, C⟩ over O(d)
    assert best == pytest.approx(np.linalg.svd(acc.c, compute_uv=False).sum(), rel=1e-10)


def test_opu_angle_grid_d2():
    acc = accumulate(ProcrustesAccumulator(2), np.eye(2), heavy(50, 2, 9))
    r = opu(acc)
    th = np.linspace(0, 2 * np.pi, 20001)
    c, s = np.cos(th), np.sin(th)
    C = acc.c
    rot = c * (C[0, 0] + C[1, 1]) + s * (C[1, 0] - C[0, 1])
    ref = c * (C[0, 0] - C[1, 1]) + s * (C[1, 0] + C[0, 1])
    assert np.sum(r * C) >= max(rot.max(), ref.max()) - 1e-9


def test_objective_after_opu_never_exceeds_before():
    for seed in range(20):
        b = NormalizedBatch.from_raw(heavy(100, 8, seed))
        r0 = random_orthogonal(8, seed)
        acc = accumulate(ProcrustesAccumulator(8), r0, b.xt)
        before = corner_objective(r0, b)
        assert acc.objective_before() == pytest.approx(before, abs=1e-9)
        r1 = opu(acc)
        bound = acc.objective_bound(r1)
        assert bound <= before + 1e-9
        assert corner_objective(r1, b) <= bound + 1e-9
        # bound is exactly the distance to the old targets
        z = corner_targets(b.xt @ r0.T)
        assert bound == pytest.approx(np.sum((b.xt @ r1.T - z) ** 2), abs=1e-9)


def test_blockdiag_examples():
    accs = [accumulate(ProcrustesAccumulator(4), np.eye(4), heavy(30, 4, 1))]
    np.testing.assert_allclose(opu_blockdiag(accs).blocks[0], opu(accs[0]))
    same = [accumulate(ProcrustesAccumulator(4), np.eye(4), heavy(30, 4, 2)) for _ in range(2)]
    out = opu_blockdiag(same)
    np.testing.assert_array_equal(out.blocks[0], out.blocks[1])
    with pytest.raises(EmptyAccumulatorError, match="block 1"):
        opu_blockdiag([accs[0], ProcrustesAccumulator(4)])


def test_blockdiag_apply_matches_slices_and_dense():
    blocks = np.stack([random_orthogonal(16, h) for h in range(4)])
    bd = BlockDiagonalRotation(blocks)
    x = heavy(10, 64, 3)
    want = np.hstack([x[:, h * 16:(h + 1) * 16] @ blocks[h].T for h in range(4)])
    np.testing.assert_allclose(bd.apply(x), want, atol=1e-13)
    np.testing.assert_allclose(bd.apply(x), x @ bd.dense().T, atol=1e-13)
    np.testing.assert_allclose(bd.apply_inverse(bd.apply(x)), x, atol=1e-12)
    assert orthogonality_residual(bd.dense()) <= 1e-12
    assert bd.dim == 64 and bd.n_blocks == 4 and bd.block_dim == 16
    np.testing.assert_array_equal(BlockDiagonalRotation.identity(2, 3).dense(), np.eye(6))


def test_alternate_examples():
    h = hadamard_matrix(8)
    r = alternate(np.eye(8), NormalizedBatch(h), steps=5)
    np.testing.assert_allclose(r, np.eye(8), atol=1e-12)
    b = NormalizedBatch.from_raw(heavy(40, 8, 4))
    r0 = random_orthogonal(8, 4)
    one = alternate(r0, b, 1)
    np.testing.assert_allclose(one, opu(accumulate(ProcrustesAccumulator(8), r0, b.xt)), atol=1e-14)
    with pytest.raises(InvalidInputError):
        alternate(r0, b, 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_alternate_monotone(seed):
    b = NormalizedBatch.from_raw(heavy(256, 8, seed))
    hist = []
    alternate(random_orthogonal(8, seed), b, 20, hist)
    assert len(hist) == 21
    assert np.all(np.diff(hist) <= 1e-9)
