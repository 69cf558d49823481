"""Hierarchical representation of a kernel matrix and its fast matvec.

:class:`HierarchicalMatrix` follows the scikit-learn estimator pattern:
hyper-parameters go to the constructor, ``fit(points)`` builds the tree,
the interaction lists and every low-rank block, and ``matvec`` applies the
approximant.

Internally every block is a row of an integer table over the tree-ordered
points, so the compiled engine can sweep all blocks in one call::

    (xs, xe, ys, ye, kind, rank, piv_off, lu_index, trans, dense_index)

``kind`` is 0 for a dense block generated on the fly, 1 for a cached
dense block and 2 for a low-rank block.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator
from sklearn.base import BaseEstimator

from . import _engine
from ._io import write_csv
from ._validation import (
    check_is_fitted,
    check_points,
    check_positive,
    check_variant,
    check_vector,
)
from .exceptions import DegenerateGeometryError
from .kernels import eval_block, generate_points, get_kernel
from .lowrank import LowRankBlock, aca_compress, kernel_oracle
from .octree import AdmissibilityClass, build_interaction_lists, build_tree

__all__ = [
    "HierarchicalMatrix",
    "RepStats",
    "initialize",
    "matvec",
    "stats",
    "benchmark",
    "match_error",
    "BENCH_COLUMNS",
]

DENSE_ONTHEFLY, DENSE_CACHED, LOWRANK = 0, 1, 2
DENSE_STORAGE = ("auto", "cache", "on-the-fly")
EXACT_ERROR_LIMIT = 4096


@dataclass
class RepStats:
    """Storage and timing summary of a fitted representation.

    ``floats`` follows the usual accounting: r*r per ordered low-rank block
    plus the area of every dense leaf block, whether or not the dense
    entries are cached. ``stored_floats`` is what this process actually
    keeps (mirrored blocks share one factorisation).
    """

    variant: str
    kernel: str
    n_points: int
    epsilon: float
    depth: int
    max_rank: int
    n_lowrank: int
    n_dense: int
    n_compressions: int
    floats: int
    pivot_ints: int
    stored_floats: int
    memory_bytes: int
    cr: float
    init_s: float
    dense_formation_s: float
    matvec_s: Optional[float]

    def as_dict(self):
        return asdict(self)


class HierarchicalMatrix(BaseEstimator):
    """Kernel matrix compressed with a HODLR3D, HODLR or strong H structure.

    Parameters
    ----------
    kernel : str, KernelSpec or callable
        Interaction kernel ``f(r)``.
    variant : {"hodlr3d", "hodlr", "hstrong"}
        Which off-diagonal blocks are compressed.
    n_max : int
        Leaves hold fewer than ``n_max`` particles.
    eps : float
        ACA tolerance.
    dense_storage : {"auto", "cache", "on-the-fly"}
        Whether dense leaf blocks are kept in memory or regenerated in every
        product. ``auto`` caches them when they fit in ``dense_budget``
        floats.
    dense_budget : int
        Float budget for ``auto``.
    max_rank : int or None
        Optional cap on every ACA rank.
    reuse_transpose : bool
        For symmetric kernels compress ``K(X, Y)`` once and apply its
        transpose for ``K(Y, X)``.
    max_depth : int
        Octree depth cap.
    """

    def __init__(self, kernel="laplace3d", variant="hodlr3d", n_max=216, eps=1e-7,
                 dense_storage="on-the-fly", dense_budget=25_000_000, max_rank=None,
                 reuse_transpose=True, max_depth=12):
        self.kernel = kernel
        self.variant = variant
        self.n_max = n_max
        self.eps = eps
        self.dense_storage = dense_storage
        self.dense_budget = dense_budget
        self.max_rank = max_rank
        self.reuse_transpose = reuse_transpose
        self.max_depth = max_depth

    # ------------------------------------------------------------------ fit
    def _check_params(self):
        check_variant(self.variant)
        check_positive(self.n_max, "n_max", integer=True)
        check_positive(self.eps, "eps")
        if self.dense_storage not in DENSE_STORAGE:
            raise ValueError(f"dense_storage must be one of {DENSE_STORAGE}")
        if self.max_rank is not None:
            check_positive(self.max_rank, "max_rank", integer=True)
        return get_kernel(self.kernel)

    def fit(self, X, y=None):
        """Build tree, interaction lists and all compressed blocks."""
        kern = self._check_params()
        pts = check_points(X)
        t0 = time.perf_counter()
        tree = build_tree(pts, self.n_max, max_depth=self.max_depth)
        lists = build_interaction_lists(tree, self.variant)
        self.kernel_ = kern
        self.tree_ = tree
        self.lists_ = lists
        self.n_points_ = pts.shape[0]
        self._P = tree.sorted_points
        self._compiled = kern.is_builtin and kern.diagonal == 0.0
        self._oracle = None if self._compiled else kernel_oracle(kern, self._P)
        self._assemble()
        self.init_time_ = time.perf_counter() - t0
        self.matvec_time_ = None
        return self

    def _assemble(self):
        tree, lists = self.tree_, self.lists_
        L = tree.depth
        reuse = bool(self.reuse_transpose) and self.kernel_.symmetric
        tables, levels, classes_out, pairs_out = [], [], [], []

        # dense leaf blocks
        s, e = tree.ranges(L)
        pairs, classes = lists.near[L], lists.near_class[L]
        keep = (e[pairs[:, 0]] > s[pairs[:, 0]]) & (e[pairs[:, 1]] > s[pairs[:, 1]])
        dpairs, dclasses = pairs[keep], classes[keep]
        t, src = dpairs[:, 0], dpairs[:, 1]
        areas = (e[t] - s[t]) * (e[src] - s[src])
        total_dense = int(areas.sum())
        if self.dense_storage == "cache":
            cache = True
        elif self.dense_storage == "on-the-fly":
            cache = False
        else:
            cache = total_dense <= self.dense_budget
        tab = np.zeros((len(dpairs), 10), dtype=np.int64)
        tab[:, 0], tab[:, 1], tab[:, 2], tab[:, 3] = s[t], e[t], s[src], e[src]
        tab[:, 4] = DENSE_CACHED if cache else DENSE_ONTHEFLY
        tab[:, 9] = np.arange(len(dpairs))
        dense_ranges = np.ascontiguousarray(tab[:, :4])
        tables.append(tab)
        levels.append(np.full(len(dpairs), L))
        classes_out.append(dclasses)
        pairs_out.append(dpairs)
        self.dense_offsets_ = np.zeros(len(dpairs) + 1, dtype=np.int64)
        np.cumsum(areas, out=self.dense_offsets_[1:])

        # low-rank blocks, levels ascending, pairs in list order
        piv = _Growable(np.int64)
        lus = _Growable(np.float64)
        lu_off = [0]
        comp = []  # (level, tgt, src, rank, piv_off, lu_index)
        P = self._P
        for level in range(L + 1):
            s, e = tree.ranges(level)
            pairs, classes = lists.admissible[level], lists.admissible_class[level]
            t, src = pairs[:, 0], pairs[:, 1]
            keep = (e[t] > s[t]) & (e[src] > s[src])
            pairs, classes, t, src = pairs[keep], classes[keep], t[keep], src[keep]
            mirrored = (t > src) if reuse else np.zeros(len(t), dtype=bool)
            ci = np.empty(len(t), dtype=np.int64)
            for k in np.flatnonzero(~mirrored):
                xs, xe, ys, ye = int(s[t[k]]), int(e[t[k]]), int(s[src[k]]), int(e[src[k]])
                rows, cols, lu = self._compress(P, xs, xe, ys, ye)
                r = rows.size
                ci[k] = len(comp)
                comp.append((level, int(t[k]), int(src[k]), r, piv.size, len(comp)))
                piv.extend(rows)
                piv.extend(cols)
                lus.extend(lu.ravel())
                lu_off.append(lus.size)
            if mirrored.any():
                # lists are sorted by (tgt, src), so the mirror is found by search
                n_lvl = 8 ** level
                own = np.flatnonzero(~mirrored)
                keys = t[own] * n_lvl + src[own]
                m = np.flatnonzero(mirrored)
                pos = np.searchsorted(keys, src[m] * n_lvl + t[m])
                ci[m] = ci[own[pos]]
            info = np.array(comp, dtype=np.int64).reshape(-1, 6)
            tab = np.zeros((len(t), 10), dtype=np.int64)
            tab[:, 0], tab[:, 1], tab[:, 2], tab[:, 3] = s[t], e[t], s[src], e[src]
            tab[:, 4] = LOWRANK
            if len(t):
                tab[:, 5] = info[ci, 3]
                tab[:, 6] = info[ci, 4]
                tab[:, 7] = ci
                tab[:, 8] = mirrored
            tables.append(tab)
            levels.append(np.full(len(t), level))
            classes_out.append(classes)
            pairs_out.append(pairs)

        self.blocks_ = np.ascontiguousarray(np.concatenate(tables))
        self.block_level_ = np.concatenate(levels).astype(np.int64)
        self.block_class_ = np.concatenate(classes_out).astype(np.int8)
        self.block_pair_ = np.concatenate(pairs_out).astype(np.int64).reshape(-1, 2)
        self.compressions_ = np.array(comp, dtype=np.int64).reshape(-1, 6)
        self._piv = piv.finish()
        self._lus = lus.finish()
        self._lu_off = np.array(lu_off, dtype=np.int64)

        # dense formation: filled into the cache, or swept once for timing
        t0 = time.perf_counter()
        if cache:
            self._dense = np.empty(total_dense)
            self._fill_dense(dense_ranges)
        else:
            self._dense = np.zeros(0)
            self._sweep_dense(dense_ranges)
        self.dense_formation_time_ = time.perf_counter() - t0
        self.dense_cached_ = cache

    def _compress(self, P, xs, xe, ys, ye):
        """(rows, cols, lu) of one block; pivots are tree-order indices."""
        if self._compiled:
            cap = min(xe - xs, ye - ys)
            if self.max_rank is not None:
                cap = min(cap, int(self.max_rank))
            with _degenerate_guard():
                sg, tu, lu = _engine.aca(self.kernel_.code, P, xs, xe, ys, ye,
                                         float(self.eps), cap)
            return sg + xs, tu + ys, lu
        blk = aca_compress(self._oracle, np.arange(xs, xe), np.arange(ys, ye),
                           self.eps, self.max_rank)
        return blk.rows, blk.cols, blk.lu

    def _fill_dense(self, ranges):
        if self._compiled:
            with _degenerate_guard():
                _engine.fill_dense(self.kernel_.code, self._P, ranges,
                                   self.dense_offsets_, self._dense)
            return
        for k, (xs, xe, ys, ye) in enumerate(ranges):
            blk = self._oracle(np.arange(xs, xe), np.arange(ys, ye))
            self._dense[self.dense_offsets_[k]:self.dense_offsets_[k + 1]] = blk.ravel()

    def _sweep_dense(self, ranges):
        if self._compiled:
            with _degenerate_guard():
                _engine.dense_formation_sweep(self.kernel_.code, self._P, ranges)
            return
        for xs, xe, ys, ye in ranges:
            self._oracle(np.arange(xs, xe), np.arange(ys, ye))

    # -------------------------------------------------------------- product
    def _apply_sorted(self, xs_vec, blocks=None, out=None):
        """Accumulate ``blocks`` (default all) into ``out`` in tree order."""
        blocks = self.blocks_ if blocks is None else blocks
        if out is None:
            out = np.zeros(self.n_points_)
        if self._compiled:
            with _degenerate_guard():
                _engine.batch_apply(self.kernel_.code, self._P, xs_vec, out, blocks,
                                    self._piv, self._lus, self._lu_off, self._dense,
                                    self.dense_offsets_)
        else:
            self._py_apply(xs_vec, blocks, out)
        return out

    def _py_apply(self, x, blocks, out):
        ent = self._oracle
        for xs, xe, ys, ye, kind, r, po, li, trans, di in blocks:
            if kind == DENSE_ONTHEFLY:
                out[xs:xe] += ent(np.arange(xs, xe), np.arange(ys, ye)) @ x[ys:ye]
            elif kind == DENSE_CACHED:
                o0, o1 = self.dense_offsets_[di], self.dense_offsets_[di + 1]
                out[xs:xe] += self._dense[o0:o1].reshape(xe - xs, ye - ys) @ x[ys:ye]
            elif r > 0:
                blk = self.lowrank_block(li)
                rows, cols = (blk.cols, blk.rows) if trans else (blk.rows, blk.cols)
                z = ent(rows, np.arange(ys, ye)) @ x[ys:ye]
                z = blk.solve(z, trans=bool(trans))
                out[xs:xe] += ent(np.arange(xs, xe), cols) @ z

    def matvec(self, x):
        """Approximate ``K @ x`` for a vector in the original point order."""
        check_is_fitted(self, "blocks_")
        x = check_vector(x, self.n_points_)
        perm = self.tree_.perm
        t0 = time.perf_counter()
        out = self._apply_sorted(np.ascontiguousarray(x[perm]))
        b = np.empty_like(out)
        b[perm] = out
        self.matvec_time_ = time.perf_counter() - t0
        return b

    def __matmul__(self, x):
        return self.matvec(x)

    def as_linear_operator(self) -> LinearOperator:
        check_is_fitted(self, "blocks_")
        n = self.n_points_
        rmat = self.matvec if self.kernel_.symmetric else None
        return LinearOperator((n, n), matvec=self.matvec, rmatvec=rmat, dtype=float)

    # ------------------------------------------------------------ checking
    def exact_rows(self, rows, x):
        """Exact ``(K x)[rows]`` by direct summation (original ordering)."""
        check_is_fitted(self, "blocks_")
        x = check_vector(x, self.n_points_)
        rows = np.asarray(rows, dtype=np.int64)
        pts = self.tree_.points
        if self._compiled:
            with _degenerate_guard():
                return _engine.direct_rows(self.kernel_.code, np.ascontiguousarray(pts),
                                           rows, x)
        out = np.empty(rows.size)
        ids = np.arange(self.n_points_)
        for a in range(0, rows.size, 256):
            rr = rows[a:a + 256]
            out[a:a + 256] = eval_block(self.kernel_, pts[rr], pts, rr, ids) @ x
        return out

    def relative_error(self, n_vectors=5, seed=0, n_rows=2000,
                       exact_limit=EXACT_ERROR_LIMIT):
        """Largest relative 2-norm error of ``matvec`` over random vectors.

        Exact for ``N <= exact_limit``; above it only ``n_rows`` sampled
        rows are compared.
        """
        check_is_fitted(self, "blocks_")
        n = self.n_points_
        rng = np.random.Generator(np.random.PCG64(seed))
        if n <= exact_limit:
            rows = np.arange(n)
        else:
            rows = np.sort(rng.choice(n, size=min(n_rows, n), replace=False))
        worst = 0.0
        for _ in range(n_vectors):
            x = rng.standard_normal(n)
            approx = self.matvec(x)[rows]
            exact = self.exact_rows(rows, x)
            den = np.linalg.norm(exact)
            err = np.linalg.norm(approx - exact) / den if den > 0 else np.linalg.norm(approx)
            worst = max(worst, float(err))
        return worst

    def to_dense(self):
        """Explicit approximant; meant for small problems."""
        check_is_fitted(self, "blocks_")
        n = self.n_points_
        A = np.zeros((n, n))
        P = self._P
        ent = self._oracle or kernel_oracle(self.kernel_, P)
        for xs, xe, ys, ye, kind, r, po, li, trans, di in self.blocks_:
            X, Y = np.arange(xs, xe), np.arange(ys, ye)
            if kind != LOWRANK:
                A[xs:xe, ys:ye] = ent(X, Y)
            elif r > 0:
                blk = self.lowrank_block(li)
                if trans:
                    right = blk.solve(ent(blk.cols, Y), trans=True)
                    A[xs:xe, ys:ye] = ent(X, blk.rows) @ right
                else:
                    A[xs:xe, ys:ye] = ent(X, blk.cols) @ blk.solve(ent(blk.rows, Y))
        perm = self.tree_.perm
        out = np.empty_like(A)
        out[np.ix_(perm, perm)] = A
        return out

    def lowrank_block(self, index) -> LowRankBlock:
        """Stored factorisation ``index`` (pivots in tree order)."""
        check_is_fitted(self, "blocks_")
        po, r = self.compressions_[index, 4], self.compressions_[index, 3]
        lu = self._lus[self._lu_off[index]:self._lu_off[index + 1]].reshape(r, r)
        return LowRankBlock(self._piv[po:po + r], self._piv[po + r:po + 2 * r], lu)

    def coverage(self):
        b = self.blocks_
        return int(np.sum((b[:, 1] - b[:, 0]) * (b[:, 3] - b[:, 2])))

    # ---------------------------------------------------------- statistics
    def stats(self) -> RepStats:
        check_is_fitted(self, "blocks_")
        b = self.blocks_
        lr = b[:, 4] == LOWRANK
        ranks = b[lr, 5]
        dense_area = int(np.sum((b[~lr, 1] - b[~lr, 0]) * (b[~lr, 3] - b[~lr, 2])))
        floats = int(np.sum(ranks * ranks)) + dense_area
        pivot_ints = int(2 * ranks.sum())
        stored = int(self._lus.size + self._dense.size)
        n = self.n_points_
        return RepStats(
            variant=self.variant,
            kernel=self.kernel_.name,
            n_points=n,
            epsilon=float(self.eps),
            depth=self.tree_.depth,
            max_rank=int(ranks.max()) if ranks.size else 0,
            n_lowrank=int(lr.sum()),
            n_dense=int((~lr).sum()),
            n_compressions=len(self.compressions_),
            floats=floats,
            pivot_ints=pivot_ints,
            stored_floats=stored,
            memory_bytes=8 * floats + 8 * pivot_ints,
            cr=floats / float(n) ** 2,
            init_s=self.init_time_,
            dense_formation_s=self.dense_formation_time_,
            matvec_s=self.matvec_time_,
        )

    def rank_by_class(self):
        """Max rank per (level, class label) over the low-rank blocks."""
        check_is_fitted(self, "blocks_")
        lr = self.blocks_[:, 4] == LOWRANK
        out = {}
        for lvl, c, r in zip(self.block_level_[lr], self.block_class_[lr],
                             self.blocks_[lr, 5]):
            key = (int(lvl), AdmissibilityClass(int(c)).label)
            out[key] = max(out.get(key, 0), int(r))
        return out


class _Growable:
    """Append-only 1-D buffer kept in fixed chunks.

    ``finish`` copies chunk by chunk into one exact-size array and frees
    each chunk as it goes, so the peak stays near the final size.
    """

    CHUNK = 1 << 23

    def __init__(self, dtype):
        self.dtype = dtype
        self._chunks = []
        self._used = 0
        self.size = 0

    def extend(self, values):
        values = np.asarray(values, dtype=self.dtype).ravel()
        while values.size:
            if not self._chunks or self._used == self._chunks[-1].size:
                self._chunks.append(np.empty(self.CHUNK, dtype=self.dtype))
                self._used = 0
            cur = self._chunks[-1]
            take = min(values.size, cur.size - self._used)
            cur[self._used:self._used + take] = values[:take]
            self._used += take
            self.size += take
            values = values[take:]

    def finish(self):
        out = np.empty(self.size, dtype=self.dtype)
        pos = 0
        chunks, self._chunks = self._chunks, []
        while chunks:
            c = chunks.pop(0)
            n = min(c.size, self.size - pos)
            out[pos:pos + n] = c[:n]
            pos += n
            del c
        return out


class _degenerate_guard:
    """Turn the engine's coincident-point ValueError into the library error."""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is ValueError and "coincide" in str(exc):
            raise DegenerateGeometryError(str(exc)) from None
        return False


def initialize(pts, kernel="laplace3d", variant="hodlr3d", n_max=216, eps=1e-7,
               **kwargs) -> HierarchicalMatrix:
    """Functional form of ``HierarchicalMatrix(...).fit(pts)``."""
    pts = getattr(pts, "points", pts)
    return HierarchicalMatrix(kernel=kernel, variant=variant, n_max=n_max, eps=eps,
                              **kwargs).fit(pts)


def matvec(rep: HierarchicalMatrix, x):
    return rep.matvec(x)


def stats(rep: HierarchicalMatrix) -> RepStats:
    return rep.stats()


BENCH_COLUMNS = ("variant", "kernel", "N", "epsilon", "L", "max_rank", "CR",
                 "memory_bytes", "init_s", "matvec_s", "rel_error", "seed")


def _bench_row(rep, seed, n_matvec, n_vectors):
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.standard_normal(rep.n_points_)
    times = []
    for _ in range(n_matvec):
        rep.matvec(x)
        times.append(rep.matvec_time_)
    st = rep.stats()
    return {
        "variant": st.variant, "kernel": st.kernel, "N": st.n_points,
        "epsilon": st.epsilon, "L": st.depth, "max_rank": st.max_rank,
        "CR": st.cr, "memory_bytes": st.memory_bytes, "init_s": st.init_s,
        "matvec_s": float(np.min(times)),
        "rel_error": rep.relative_error(n_vectors=n_vectors, seed=seed),
        "seed": seed,
    }


def benchmark(variants, kernel, ns, eps=1e-7, seed=0, n_max=216,
              distribution="uniform-random", n_matvec=3, n_vectors=1, out=None,
              config=None, **kwargs):
    """Build and time each variant over an N sweep; returns CSV rows."""
    rows = []
    for n in ns:
        pts = generate_points(distribution, n, seed).points
        for v in variants:
            rep = initialize(pts, kernel, v, n_max, eps, **kwargs)
            rows.append(_bench_row(rep, seed, n_matvec, n_vectors))
            del rep
    if out is not None:
        write_csv(out, BENCH_COLUMNS, rows, config)
    return rows


def match_error(pts, kernel, variants, target, eps_grid=None, seed=0, n_max=216,
                n_matvec=1, **kwargs):
    """Per variant, the largest eps whose matvec error is within 10x of ``target``.

    ``eps_grid`` is scanned from loose to tight; the last value is used if
    none reaches the target. Returns one benchmark row per variant with an
    extra ``matched`` flag.
    """
    eps_grid = np.logspace(-6, -10, 9) if eps_grid is None else np.asarray(eps_grid)
    eps_grid = np.sort(eps_grid)[::-1]
    rows = []
    for v in variants:
        row = None
        for eps in eps_grid:
            rep = initialize(pts, kernel, v, n_max, float(eps), **kwargs)
            row = _bench_row(rep, seed, n_matvec, 1)
            if row["rel_error"] <= 10.0 * target:
                row["matched"] = 1
                break
            row["matched"] = 0
        rows.append(row)
    return rows
