import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hodlr3d.kernels import LAPLACE3D, eval_block
from hodlr3d.lowrank import (
    STUDY_CLASSES,
    LowRankBlock,
    aca_builtin,
    aca_compress,
    kernel_oracle,
    lr_apply,
    numerical_rank,
    rank_study,
    reconstruct,
    study_geometry,
)


def _separated(n, m, seed, gap=2.0):
    rng = np.random.Generator(np.random.PCG64(seed))
    X = rng.uniform(0, 1, (n, 3))
    Y = rng.uniform(0, 1, (m, 3)) + [gap, 0.0, 0.0]
    return np.vstack([X, Y])


def _matrix_oracle(M):
    return lambda r, c: M[np.ix_(np.atleast_1d(r), np.atleast_1d(c))]


def test_lowrank_block_validation():
    with pytest.raises(ValueError):
        LowRankBlock(np.arange(2), np.arange(3), np.eye(2))
    b = LowRankBlock(np.arange(2), np.arange(2), np.array([[2.0, 1.0], [0.5, 3.0]]))
    assert b.rank == 2 and b.n_floats == 4
    assert np.allclose(b.L @ b.R, [[2.0, 1.0], [1.0, 3.5]])
    with pytest.raises(ValueError):
        b.lu[0, 0] = 1.0


def test_lowrank_block_solve():
    b = LowRankBlock(np.arange(2), np.arange(2), np.array([[2.0, 1.0], [0.5, 3.0]]))
    A = b.L @ b.R
    z = np.array([1.0, -2.0])
    assert np.allclose(A @ b.solve(z), z)
    assert np.allclose(A.T @ b.solve(z, trans=True), z)


def test_reference_matches_compiled_engine():
    pts = _separated(120, 90, 1)
    X, Y = np.arange(120), np.arange(120, 210)
    ref = aca_compress(kernel_oracle(LAPLACE3D, pts), X, Y, 1e-9)
    fast = aca_builtin(LAPLACE3D, pts, 0, 120, 120, 210, 1e-9)
    assert np.array_equal(ref.rows, fast.rows)
    assert np.array_equal(ref.cols, fast.cols)
    entry = kernel_oracle(LAPLACE3D, pts)
    a = reconstruct(ref, entry, X, Y)
    b = reconstruct(fast, entry, X, Y)
    assert np.linalg.norm(a - b) <= 1e-12 * np.linalg.norm(a)


def test_aca_against_svd_oracle():
    pts = _separated(200, 150, 2)
    X, Y = np.arange(200), np.arange(200, 350)
    entry = kernel_oracle(LAPLACE3D, pts)
    K = entry(X, Y)
    for eps in (1e-4, 1e-7, 1e-10):
        blk = aca_compress(entry, X, Y, eps)
        err = np.linalg.norm(reconstruct(blk, entry, X, Y) - K) / np.linalg.norm(K)
        assert err <= 10 * eps
        # ACA is quasi-optimal: never far above the SVD rank at the same accuracy
        assert blk.rank <= 2 * numerical_rank(K, eps) + 5


def test_lr_apply_matches_reconstruction(rng):
    pts = _separated(60, 70, 3)
    X, Y = np.arange(60), np.arange(60, 130)
    entry = kernel_oracle(LAPLACE3D, pts)
    blk = aca_compress(entry, X, Y, 1e-8)
    x = rng.standard_normal(70)
    assert np.allclose(lr_apply(blk, entry, X, Y, x), reconstruct(blk, entry, X, Y) @ x)
    with pytest.raises(ValueError):
        lr_apply(blk, entry, X, Y, np.ones(3))


def test_pivots_interpolate_exactly():
    pts = _separated(50, 40, 4)
    X, Y = np.arange(50), np.arange(50, 90)
    entry = kernel_oracle(LAPLACE3D, pts)
    blk = aca_compress(entry, X, Y, 1e-6)
    approx = reconstruct(blk, entry, X, Y)
    # skeleton approximations reproduce pivot rows and columns
    ri = np.searchsorted(X, blk.rows)
    ci = np.searchsorted(Y, blk.cols)
    K = entry(X, Y)
    assert np.allclose(approx[ri], K[ri], rtol=1e-9, atol=1e-12)
    assert np.allclose(approx[:, ci], K[:, ci], rtol=1e-9, atol=1e-12)


def test_zero_block_gives_rank_zero():
    M = np.zeros((5, 4))
    blk = aca_compress(_matrix_oracle(M), np.arange(5), np.arange(4), 1e-8)
    assert blk.rank == 0
    assert np.array_equal(reconstruct(blk, _matrix_oracle(M), np.arange(5), np.arange(4)), M)
    assert numerical_rank(M, 1e-8) == 0


def test_zero_first_row_moves_to_next_row():
    M = np.zeros((4, 4))
    M[2] = [1.0, 2.0, 3.0, 4.0]
    blk = aca_compress(_matrix_oracle(M), np.arange(4), np.arange(4), 1e-10)
    assert blk.rank == 1 and blk.rows.tolist() == [2]


def test_aca_rejects_bad_arguments():
    e = _matrix_oracle(np.ones((2, 2)))
    with pytest.raises(ValueError):
        aca_compress(e, [0, 1], [0, 1], 0.0)
    with pytest.raises(ValueError):
        aca_compress(e, [], [0, 1], 1e-3)


def test_max_rank_cap():
    pts = _separated(80, 80, 5, gap=1.05)
    blk = aca_builtin(LAPLACE3D, pts, 0, 80, 80, 160, 1e-14, max_rank=7)
    assert blk.rank == 7


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(10, 40), st.integers(10, 40), st.integers(0, 10 ** 6))
def test_exact_rank_recovery(k, m, n, seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    M = rng.standard_normal((m, k)) @ rng.standard_normal((k, n))
    blk = aca_compress(_matrix_oracle(M), np.arange(m), np.arange(n), 1e-10)
    assert blk.rank == min(k, m, n)
    approx = reconstruct(blk, _matrix_oracle(M), np.arange(m), np.arange(n))
    assert np.linalg.norm(approx - M) <= 1e-8 * np.linalg.norm(M)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.floats(1e-12, 1e-2), st.integers(0, 10 ** 6))
def test_numerical_rank_definition(m, n, eps, seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    s = np.sort(10.0 ** rng.uniform(-14, 0, min(m, n)))[::-1]
    U, _ = np.linalg.qr(rng.standard_normal((m, m)))
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    M = U[:, :s.size] @ np.diag(s) @ V[:, :s.size].T
    sv = np.linalg.svd(M, compute_uv=False)
    expect = max(k for k in range(sv.size + 1) if k == 0 or sv[k - 1] / sv[0] > eps)
    assert numerical_rank(M, eps) == expect


def test_study_geometry_cubes():
    geo = study_geometry(100, 0)
    assert set(geo) == {"X", *STUDY_CLASSES}
    assert np.all((geo["W"][:, 0] >= -2) & (geo["W"][:, 0] <= -1))
    assert np.all(geo["V"] >= 1)


def test_rank_study_small(tmp_path):
    res = rank_study(LAPLACE3D, [32, 64], eps=1e-10, seed=1)
    assert res.ns == [32, 64]
    for c in STUDY_CLASSES:
        assert len(res.ranks[c]) == 2
    # farther neighbours are cheaper
    assert res.ranks["W"][1] < res.ranks["F"][1]
    geo = study_geometry(64, 1)
    assert res.ranks["E"][1] == numerical_rank(eval_block(LAPLACE3D, geo["X"], geo["E"]), 1e-10)
    res.to_csv(tmp_path / "r.csv", tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert sum(1 for ln in lines if not ln.startswith("#")) == 5
    with pytest.raises(ValueError):
        rank_study(LAPLACE3D, 4)
