import numpy as np
import pytest

from hodlr3d.exceptions import NotConvergedWarning, UnsupportedKernelError
from hodlr3d.solver import (
    cell_self_integral,
    dense_ie_solve,
    discretize_ie,
    gmres,
    ie_experiment,
    solve_sweep,
)

# integral of 1/|y| over the unit cube centred at the origin
UNIT_CELL = 3.0 * np.log(2.0 + np.sqrt(3.0)) - np.pi / 2.0


def test_self_integral_closed_form():
    assert cell_self_integral(1.0) == pytest.approx(UNIT_CELL, rel=1e-13)
    assert cell_self_integral(0.25) == pytest.approx(UNIT_CELL / 16.0, rel=1e-13)
    with pytest.raises(ValueError):
        cell_self_integral(0.0)


def test_self_integral_monte_carlo():
    rng = np.random.Generator(np.random.PCG64(0))
    y = rng.uniform(-0.5, 0.5, (400_000, 3))
    mc = np.mean(1.0 / np.linalg.norm(y, axis=1))
    assert mc == pytest.approx(cell_self_integral(1.0), rel=1e-2)


def test_gmres_matches_direct_solve(rng):
    A = np.eye(40) + 0.1 * rng.standard_normal((40, 40))
    f = rng.standard_normal(40)
    res = gmres(lambda v: A @ v, f, tol=1e-12)
    assert res.converged and res.iters <= 40
    assert np.allclose(res.x, np.linalg.solve(A, f), rtol=1e-9, atol=1e-10)
    assert res.residuals[0] == 1.0 and res.residuals[-1] < 1e-12


def test_gmres_identity_and_tiny_system():
    res = gmres(lambda v: v, np.array([1.0, 2.0, 3.0]))
    assert res.iters == 1 and np.allclose(res.x, [1.0, 2.0, 3.0])
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    res = gmres(lambda v: A @ v, np.array([3.0, 4.0]))
    assert np.allclose(res.x, [1.0, 1.0])


def test_gmres_restart_and_initial_guess(rng):
    A = np.diag(np.linspace(1, 10, 60)) + 0.05 * rng.standard_normal((60, 60))
    f = rng.standard_normal(60)
    res = gmres(lambda v: A @ v, f, tol=1e-10, restart=10, maxit=500,
                x0=np.ones(60))
    assert res.converged
    assert np.linalg.norm(A @ res.x - f) <= 1e-9 * np.linalg.norm(f)


def test_gmres_zero_rhs():
    res = gmres(lambda v: v, np.zeros(5))
    assert res.converged and res.iters == 0 and not res.x.any()


def test_gmres_not_converged_warns(rng):
    A = rng.standard_normal((30, 30))
    with pytest.warns(NotConvergedWarning):
        res = gmres(lambda v: A @ v, rng.standard_normal(30), tol=1e-12, maxit=3)
    assert not res.converged and res.iters == 3
    with pytest.raises(ValueError):
        gmres(lambda v: v, np.ones(2), tol=0.0)


def test_operator_matches_dense_assembly():
    op = discretize_ie(6, n_max=30)
    assert op.N == 216 and op.weight == pytest.approx((2 / 6) ** 3)
    x = np.random.Generator(np.random.PCG64(2)).standard_normal(216)
    D = op.dense()
    assert np.linalg.norm(op.apply(x) - D @ x) <= 1e-6 * np.linalg.norm(D @ x)
    assert np.allclose(op.apply_exact(x), D @ x, rtol=1e-12)
    assert np.allclose(np.diag(D), 1.0 + cell_self_integral(2 / 6))


def test_discretize_rejects_other_kernels():
    with pytest.raises(UnsupportedKernelError):
        discretize_ie(4, kernel="r4")
    with pytest.raises(ValueError):
        discretize_ie(1)


def test_ie_experiment_small():
    row = ie_experiment(8, n_max=60)
    assert row["N"] == 512 and row["converged"] == 1
    assert row["residual"] < 1e-9
    assert row["fwd_error"] <= 1e-5
    assert dense_ie_solve(8) <= 1e-12


def test_solve_sweep_csv(tmp_path):
    out = tmp_path / "solve.csv"
    rows = solve_sweep([4], ["hodlr3d", "hstrong"], out=out)
    assert [r["variant"] for r in rows] == ["hodlr3d", "hstrong"]
    assert "fwd_error" in out.read_text()
