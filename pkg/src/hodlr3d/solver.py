"""Second-kind integral equation on the cube and a plain GMRES.

The equation ``sigma(x) + int_B K(x, y) sigma(y) dy = f(x)`` on
``B = [-1, 1]^3`` is discretised by piecewise-constant collocation on an
``n x n x n`` grid: off-diagonal entries use the midpoint rule
``w K(x_i, x_j)`` with ``w = h^3``, and the diagonal is ``1 + I_cell`` with
``I_cell`` the exact integral of ``1/r`` over one cell about its centre.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.integrate
import scipy.linalg

from ._io import write_csv
from .exceptions import NotConvergedWarning, UnsupportedKernelError
from .hmatrix import HierarchicalMatrix
from .kernels import LAPLACE3D, eval_block, generate_points, get_kernel

__all__ = [
    "IEOperator",
    "GmresResult",
    "cell_self_integral",
    "discretize_ie",
    "gmres",
    "ie_experiment",
    "dense_ie_solve",
    "SOLVE_COLUMNS",
]

SOLVE_COLUMNS = ("variant", "n", "N", "epsilon", "iters", "solve_s", "fwd_error", "seed")


@lru_cache(maxsize=None)
def _unit_self_integral(tol: float = 1e-13) -> float:
    # cube of side 1 split into 6 pyramids with apex at the centre; each
    # contributes (a/2) * int_face dA / sqrt(a^2 + u^2 + v^2), a = 1/2
    a = 0.5
    quarter, _ = scipy.integrate.dblquad(
        lambda v, u: 1.0 / np.sqrt(a * a + u * u + v * v),
        0.0, a, 0.0, a, epsabs=tol, epsrel=tol,
    )
    return 6.0 * (a / 2.0) * 4.0 * quarter


def cell_self_integral(h: float) -> float:
    """``int 1/|y - c| dy`` over a cube of side ``h`` centred at ``c``.

    The integrand is homogeneous of degree -1, so the value scales as h^2.
    """
    if h <= 0:
        raise ValueError("cell side must be positive")
    return _unit_self_integral() * h * h


@dataclass
class IEOperator:
    """``A = diag * I + w * K_offdiag`` on a tensor grid."""

    n: int
    points: np.ndarray
    weight: float
    diag: float
    rep: HierarchicalMatrix

    @property
    def N(self):
        return self.points.shape[0]

    @property
    def shape(self):
        return (self.N, self.N)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return self.diag * x + self.weight * self.rep.matvec(x)

    __call__ = apply

    def apply_exact(self, x):
        """Product with the uncompressed operator by direct summation."""
        x = np.asarray(x, dtype=float)
        k = self.rep.exact_rows(np.arange(self.N), x)
        return self.diag * x + self.weight * k

    def dense(self):
        ids = np.arange(self.N)
        K = eval_block(self.rep.kernel_, self.points, self.points, ids, ids)
        return self.diag * np.eye(self.N) + self.weight * K


def discretize_ie(n: int, kernel=LAPLACE3D, eps: float = 1e-7, variant: str = "hodlr3d",
                  n_max: int = 216, **kwargs) -> IEOperator:
    """Collocation matrix of the integral equation with a compressed kernel part."""
    n = int(n)
    if n < 2:
        raise ValueError("grid size n must be >= 2")
    kernel = get_kernel(kernel)
    if kernel is not LAPLACE3D:
        raise UnsupportedKernelError(
            f"self-cell quadrature is only wired for laplace3d, got {kernel.name}"
        )
    pts = generate_points("tensor-grid", n ** 3).points
    h = 2.0 / n
    rep = HierarchicalMatrix(kernel=kernel, variant=variant, n_max=n_max, eps=eps,
                             **kwargs).fit(pts)
    return IEOperator(n, pts, h ** 3, 1.0 + cell_self_integral(h), rep)


@dataclass
class GmresResult:
    x: np.ndarray
    iters: int
    residuals: list = field(default_factory=list)
    converged: bool = False


def gmres(apply, f, tol: float = 1e-10, restart=None, maxit=None, x0=None) -> GmresResult:
    """GMRES with modified Gram-Schmidt Arnoldi and Givens rotations.

    Unrestarted unless ``restart`` is given. ``residuals`` holds the
    relative residual ``|f - A x| / |f|`` estimated after each iteration
    (the first entry is the initial one). Hitting ``maxit`` returns the
    last iterate with ``converged=False`` and a warning.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    f = np.asarray(f, dtype=float)
    n = f.size
    maxit = n if maxit is None else int(maxit)
    restart = maxit if restart is None else int(restart)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    fnorm = np.linalg.norm(f)
    if fnorm == 0.0:
        return GmresResult(np.zeros(n), 0, [0.0], True)
    r = f - apply(x) if x0 is not None else f.copy()
    beta = np.linalg.norm(r)
    residuals = [beta / fnorm]
    iters = 0
    while residuals[-1] >= tol and iters < maxit:
        m = min(restart, maxit - iters)
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        for k in range(m):
            w = apply(V[k])
            for j in range(k + 1):
                H[j, k] = w @ V[j]
                w = w - H[j, k] * V[j]
            H[k + 1, k] = np.linalg.norm(w)
            if H[k + 1, k] > 0.0:
                V[k + 1] = w / H[k + 1, k]
            for j in range(k):
                a, b = H[j, k], H[j + 1, k]
                H[j, k] = cs[j] * a + sn[j] * b
                H[j + 1, k] = -sn[j] * a + cs[j] * b
            a, b = H[k, k], H[k + 1, k]
            den = np.hypot(a, b)
            cs[k], sn[k] = a / den, b / den
            H[k, k] = den
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            iters += 1
            residuals.append(abs(g[k + 1]) / fnorm)
            if residuals[-1] < tol or H[k, k] == 0.0:
                break
        kk = k + 1
        y = scipy.linalg.solve_triangular(H[:kk, :kk], g[:kk])
        x = x + V[:kk].T @ y
        if residuals[-1] < tol:
            break
        r = f - apply(x)
        beta = np.linalg.norm(r)
        residuals[-1] = beta / fnorm
        if beta == 0.0:
            break
    converged = residuals[-1] < tol
    if not converged:
        warnings.warn(f"GMRES stopped at {iters} iterations with relative residual "
                      f"{residuals[-1]:.2e}", NotConvergedWarning, stacklevel=2)
    return GmresResult(x, iters, residuals, converged)


def _manufactured(N, seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal(N)


def ie_experiment(n: int, kernel=LAPLACE3D, eps: float = 1e-7, variant: str = "hodlr3d",
                  seed: int = 0, n_max: int = 216, tol: float = 1e-10, maxit=None):
    """Manufactured-solution run: ``f = A sigma`` exactly, solve, compare."""
    t0 = time.perf_counter()
    op = discretize_ie(n, kernel, eps, variant, n_max)
    init_s = time.perf_counter() - t0
    sigma = _manufactured(op.N, seed)
    f = op.apply_exact(sigma)
    t0 = time.perf_counter()
    res = gmres(op.apply, f, tol=tol, maxit=maxit)
    solve_s = time.perf_counter() - t0
    true_res = np.linalg.norm(op.apply(res.x) - f) / np.linalg.norm(f)
    return {
        "variant": variant, "n": n, "N": op.N, "epsilon": eps, "iters": res.iters,
        "solve_s": solve_s, "fwd_error": float(np.linalg.norm(res.x - sigma)
                                               / np.linalg.norm(sigma)),
        "seed": seed, "init_s": init_s, "residual": float(true_res),
        "converged": int(res.converged),
    }


def dense_ie_solve(n: int, seed: int = 0):
    """Forward error of a dense LU solve of the same manufactured problem."""
    pts = generate_points("tensor-grid", n ** 3).points
    h = 2.0 / n
    ids = np.arange(pts.shape[0])
    A = h ** 3 * eval_block(LAPLACE3D, pts, pts, ids, ids)
    A[ids, ids] = 1.0 + cell_self_integral(h)
    sigma = _manufactured(pts.shape[0], seed)
    x = scipy.linalg.solve(A, A @ sigma, assume_a="sym")
    return float(np.linalg.norm(x - sigma) / np.linalg.norm(sigma))


def solve_sweep(ns, variants, eps=1e-7, seed=0, n_max=216, out=None, config=None):
    rows = [ie_experiment(n, LAPLACE3D, eps, v, seed, n_max) for n in ns for v in variants]
    if out is not None:
        write_csv(out, SOLVE_COLUMNS, rows, config)
    return rows
