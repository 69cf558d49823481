"""Adaptive cross approximation and numerical-rank tools.

A compressed block keeps only its pivots and the LU factors of the pivot
submatrix ``K(sigma, tau)``. The approximant is

    K(X, Y) ~ K(X, tau) R^{-1} L^{-1} K(sigma, Y)

and both outer factors are regenerated from the kernel on demand.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np
import scipy.linalg

from . import _engine
from ._io import write_csv
from .kernels import eval_block, get_kernel

__all__ = [
    "LowRankBlock",
    "RankStudyResult",
    "aca_compress",
    "aca_builtin",
    "lr_apply",
    "reconstruct",
    "numerical_rank",
    "kernel_oracle",
    "rank_study",
    "study_geometry",
    "STUDY_CLASSES",
]

PIVOT_TOL = _engine.PIVOT_TOL


@dataclass(frozen=True, eq=False)
class LowRankBlock:
    """Pivot-based factorisation of one kernel block.

    ``rows``/``cols`` hold the pivot indices (members of X and Y). ``lu``
    packs the unit-lower factor strictly below the diagonal and the upper
    factor on and above it.
    """

    rows: np.ndarray
    cols: np.ndarray
    lu: np.ndarray

    def __post_init__(self):
        for name in ("rows", "cols", "lu"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        r = self.rows.size
        if self.cols.size != r or self.lu.shape != (r, r):
            raise ValueError("pivot counts and factor shape disagree")

    @property
    def rank(self) -> int:
        return int(self.rows.size)

    @property
    def L(self):
        return np.tril(self.lu, -1) + np.eye(self.rank)

    @property
    def R(self):
        return np.triu(self.lu)

    @property
    def n_floats(self) -> int:
        return self.rank * self.rank

    def solve(self, z, trans=False):
        """(LR)^{-1} z, or (LR)^{-T} z."""
        z = np.asarray(z, dtype=float)
        if self.rank == 0:
            return z.copy()
        if trans:
            w = scipy.linalg.solve_triangular(self.lu, z, trans="T", lower=False)
            return scipy.linalg.solve_triangular(
                self.lu, w, trans="T", lower=True, unit_diagonal=True
            )
        w = scipy.linalg.solve_triangular(self.lu, z, lower=True, unit_diagonal=True)
        return scipy.linalg.solve_triangular(self.lu, w, lower=False)


def kernel_oracle(kernel, pts) -> Callable:
    """Vectorised entry oracle ``entry(rows, cols) -> K[rows][:, cols]``."""
    kernel = get_kernel(kernel)
    pts = np.asarray(pts, dtype=float)

    def entry(rows, cols):
        rows = np.atleast_1d(rows)
        cols = np.atleast_1d(cols)
        return eval_block(kernel, pts[rows], pts[cols], rows, cols)

    return entry


def aca_compress(entry, X, Y, eps: float, max_rank=None) -> LowRankBlock:
    """Partially pivoted ACA of ``K(X, Y)`` from an entry oracle.

    ``entry(rows, cols)`` must return the submatrix for index arrays. The
    loop stops when a new cross satisfies ``|u||v| <= eps * |S|_F`` (that
    cross is dropped), when the rank cap is hit, or when every residual row
    is numerically zero.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    X = np.asarray(X, dtype=np.int64)
    Y = np.asarray(Y, dtype=np.int64)
    if X.size == 0 or Y.size == 0:
        raise ValueError("X and Y must be non-empty")
    m, n = X.size, Y.size
    cap = min(m, n) if max_rank is None else min(m, n, int(max_rank))
    U, V = [], []
    sigma, tau = [], []
    row_used = np.zeros(m, dtype=bool)
    col_used = np.zeros(n, dtype=bool)
    nrm2 = 0.0
    i = 0
    while len(U) < cap:
        row_used[i] = True
        row = np.asarray(entry(X[i:i + 1], Y), dtype=float).reshape(n)
        for u, v in zip(U, V):
            row = row - u[i] * v
        masked = np.where(col_used, -1.0, np.abs(row))
        j = int(np.argmax(masked))
        piv = row[j]
        if abs(piv) < PIVOT_TOL:
            free = np.flatnonzero(~row_used)
            if free.size == 0:
                break
            i = int(free[0])
            continue
        v_new = row / piv
        col = np.asarray(entry(X, Y[j:j + 1]), dtype=float).reshape(m)
        for u, v in zip(U, V):
            col = col - v[j] * u
        uu = col @ col
        vv = v_new @ v_new
        cross = sum((u @ col) * (v @ v_new) for u, v in zip(U, V))
        new_nrm2 = nrm2 + uu * vv + 2.0 * cross
        if U and np.sqrt(uu * vv) <= eps * np.sqrt(abs(new_nrm2)):
            break
        if uu == 0.0:
            break
        U.append(col)
        V.append(v_new)
        sigma.append(i)
        tau.append(j)
        col_used[j] = True
        nrm2 = new_nrm2
        masked = np.where(row_used, -1.0, np.abs(col))
        if row_used.all():
            break
        i = int(np.argmax(masked))
    k = len(U)
    lu = np.empty((k, k))
    for p in range(k):
        for q in range(k):
            if q < p:
                lu[p, q] = U[q][sigma[p]] / U[q][sigma[q]]
            else:
                lu[p, q] = U[p][sigma[p]] * V[p][tau[q]]
    return LowRankBlock(X[sigma], Y[tau], lu)


def aca_builtin(kernel, sorted_pts, xs, xe, ys, ye, eps, max_rank=None) -> LowRankBlock:
    """Compiled ACA for a built-in kernel on contiguous ranges of ``sorted_pts``."""
    kernel = get_kernel(kernel)
    if not kernel.is_builtin or kernel.diagonal != 0.0:
        raise ValueError("compiled ACA needs a built-in kernel")
    cap = min(xe - xs, ye - ys) if max_rank is None else int(max_rank)
    try:
        s, t, lu = _engine.aca(kernel.code, sorted_pts, xs, xe, ys, ye, float(eps), cap)
    except ValueError as exc:
        from .exceptions import DegenerateGeometryError
        raise DegenerateGeometryError(str(exc)) from None
    return LowRankBlock(s + xs, t + ys, lu)


def lr_apply(block: LowRankBlock, entry, X, Y, x) -> np.ndarray:
    """``K(X, tau) R^{-1} L^{-1} K(sigma, Y) x`` with regenerated factors."""
    X = np.asarray(X, dtype=np.int64)
    Y = np.asarray(Y, dtype=np.int64)
    x = np.asarray(x, dtype=float)
    if x.shape != (Y.size,):
        raise ValueError(f"x has shape {x.shape}, expected ({Y.size},)")
    if block.rank == 0:
        return np.zeros(X.size)
    z = np.asarray(entry(block.rows, Y), dtype=float) @ x
    z = block.solve(z)
    return np.asarray(entry(X, block.cols), dtype=float) @ z


def reconstruct(block: LowRankBlock, entry, X, Y) -> np.ndarray:
    """Dense approximant of ``K(X, Y)``; for checks on small blocks."""
    X = np.asarray(X, dtype=np.int64)
    Y = np.asarray(Y, dtype=np.int64)
    if block.rank == 0:
        return np.zeros((X.size, Y.size))
    right = block.solve(np.asarray(entry(block.rows, Y), dtype=float))
    return np.asarray(entry(X, block.cols), dtype=float) @ right


def numerical_rank(M, eps: float) -> int:
    """Largest ``k`` with ``s_k / s_1 > eps``; 0 for the zero matrix."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        raise ValueError("matrix must be non-empty")
    s = scipy.linalg.svdvals(M)
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s / s[0] > eps))


# unit cubes around X = [0, 1]^3, lower corners
STUDY_CLASSES = ("W", "F", "E", "V")
_CORNERS = {
    "X": (0.0, 0.0, 0.0),
    "W": (-2.0, 0.0, 0.0),
    "F": (-1.0, 0.0, 0.0),
    "E": (1.0, 0.0, 1.0),
    "V": (1.0, 1.0, 1.0),
}


def study_geometry(n_per_cube: int, seed: int = 0) -> Dict[str, np.ndarray]:
    """Uniform random points in the five study cubes."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return {
        name: rng.uniform(0.0, 1.0, size=(n_per_cube, 3)) + np.asarray(c)
        for name, c in _CORNERS.items()
    }


@dataclass
class RankStudyResult:
    """Numerical ranks per class and N, with fitted log-log slopes."""

    kernel: str
    epsilon: float
    seed: int
    ns: list = field(default_factory=list)
    ranks: Dict[str, list] = field(default_factory=dict)
    decay_index: Dict[str, list] = field(default_factory=dict)

    @property
    def slopes(self) -> Dict[str, float]:
        out = {}
        if len(self.ns) < 2:
            return {c: float("nan") for c in self.ranks}
        logn = np.log(self.ns)
        for c, r in self.ranks.items():
            out[c] = float(np.polyfit(logn, np.log(np.maximum(r, 1)), 1)[0])
        return out

    def rows(self):
        for c in STUDY_CLASSES:
            for n, r in zip(self.ns, self.ranks[c]):
                yield {"kernel": self.kernel, "class": c, "N": n, "rank": r,
                       "epsilon": self.epsilon, "seed": self.seed}

    def to_csv(self, path_or_file, slopes_path=None):
        write_csv(path_or_file, ("kernel", "class", "N", "rank", "epsilon", "seed"),
                  self.rows())
        if slopes_path is not None:
            srows = ({"kernel": self.kernel, "class": c, "slope": s,
                      "epsilon": self.epsilon, "seed": self.seed}
                     for c, s in self.slopes.items())
            write_csv(slopes_path, ("kernel", "class", "slope", "epsilon", "seed"), srows)


def _decay_index(s, level=1e-6):
    """First index where ``s_i / s_1`` drops below ``level``."""
    if s[0] == 0.0:
        return 0
    below = np.flatnonzero(s / s[0] < level)
    return int(below[0]) if below.size else int(s.size)


def rank_study(kernel, n_per_cube, eps: float = 1e-14, seed: int = 0) -> RankStudyResult:
    """Numerical ranks of K(X, W), K(X, F), K(X, E), K(X, V).

    ``n_per_cube`` is one count or a sweep; slopes are least-squares fits of
    log(rank) against log(N) over the sweep.
    """
    kernel = get_kernel(kernel)
    ns = [int(n_per_cube)] if np.isscalar(n_per_cube) else [int(n) for n in n_per_cube]
    if min(ns) < 8:
        raise ValueError("need at least 8 points per cube")
    res = RankStudyResult(kernel.name, float(eps), int(seed), ns=ns,
                          ranks={c: [] for c in STUDY_CLASSES},
                          decay_index={c: [] for c in STUDY_CLASSES})
    for n in ns:
        geo = study_geometry(n, seed)
        for c in STUDY_CLASSES:
            s = scipy.linalg.svdvals(eval_block(kernel, geo["X"], geo[c]))
            r = 0 if s[0] == 0.0 else int(np.count_nonzero(s / s[0] > eps))
            res.ranks[c].append(r)
            res.decay_index[c].append(_decay_index(s))
    return res

