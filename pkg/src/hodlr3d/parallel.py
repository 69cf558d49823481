"""Level-based work partition and a worker-pool matvec.

At level ``l`` the ``8**l`` nodes are dealt round-robin to the ``n_p``
workers when there are at least as many nodes as workers. Otherwise node
``i`` is shared by the group ``{w : w % 8**l == i}``. A block belongs to
the node of its target cluster.

Shared blocks are split inside the group: dense blocks by columns (partial
sums are reduced), low-rank blocks by pivot rows of ``K(sigma, Y)`` (the
r-vector is exchanged, the triangular solve is repeated on every member)
and by rows of ``K(X, tau)``. Workers touch nothing but their own buffers
between the two synchronisation points; every exchange is booked in a
:class:`CommLedger`.
"""
from __future__ import annotations

import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from . import _engine
from ._io import write_csv
from ._validation import check_is_fitted, check_positive, check_vector
from .hmatrix import DENSE_CACHED, LOWRANK, HierarchicalMatrix
from .kernels import generate_points

__all__ = [
    "PartitionPlan",
    "CommLedger",
    "plan_partition",
    "parallel_matvec",
    "init_compressions",
    "parallel_bench",
    "PARALLEL_COLUMNS",
    "NUM_WORKERS_ENV",
]

NUM_WORKERS_ENV = "HODLR3D_NUM_WORKERS"
PARALLEL_COLUMNS = ("N", "n_p", "matvec_avg_s", "matvec_max_s", "speedup_vs_np2",
                    "comm_floats", "seed")


@dataclass
class PartitionPlan:
    """Owner or group of every node at every level."""

    depth: int
    n_p: int
    # level -> list over nodes of the worker tuple handling it
    groups: Dict[int, List[tuple]] = field(default_factory=dict)

    @property
    def power_of_two(self):
        return self.n_p & (self.n_p - 1) == 0

    def is_shared(self, level):
        return 8 ** level < self.n_p

    def owner(self, level, node):
        g = self.groups[level][node]
        if len(g) != 1:
            raise ValueError(f"node {node} at level {level} is shared by {len(g)} workers")
        return g[0]

    def load(self, level):
        """Nodes per worker at ``level`` (shared nodes count once per member)."""
        cnt = np.zeros(self.n_p, dtype=np.int64)
        for g in self.groups[level]:
            cnt[list(g)] += 1
        return cnt

    def imbalance(self, level):
        c = self.load(level)
        return int(c.max() - c.min())


def plan_partition(L: int, n_p: int) -> PartitionPlan:
    """Round-robin ownership per level, or groups of ``ceil(n_p / 8**l)``."""
    check_positive(n_p, "n_p", integer=True)
    if L < 0:
        raise ValueError("L must be >= 0")
    if n_p & (n_p - 1):
        warnings.warn(f"n_p={n_p} is not a power of two; ceiling rules applied as is",
                      stacklevel=2)
    plan = PartitionPlan(int(L), int(n_p))
    for level in range(L + 1):
        m = 8 ** level
        if m >= n_p:
            plan.groups[level] = [(i % n_p,) for i in range(m)]
        else:
            plan.groups[level] = [tuple(range(i, n_p, m)) for i in range(m)]
    return plan


@dataclass
class CommLedger:
    """Modelled communication of one parallel product."""

    steps: List[dict] = field(default_factory=list)
    # per shared low-rank block: (group size, rank)
    shared_lowrank: List[tuple] = field(default_factory=list)

    def add(self, step, floats, ops):
        self.steps.append({"step": step, "floats": int(floats), "ops": int(ops)})

    @property
    def total_floats(self):
        return sum(s["floats"] for s in self.steps)

    @property
    def total_ops(self):
        return sum(s["ops"] for s in self.steps)

    def floats(self, step):
        return sum(s["floats"] for s in self.steps if s["step"] == step)

    @property
    def expected_lowrank_floats(self):
        return sum(g * r for g, r in self.shared_lowrank)


def _split(n, parts):
    """Boundaries of ``parts`` nearly equal slices of ``range(n)``."""
    q, rem = divmod(n, parts)
    sizes = [q + (k < rem) for k in range(parts)]
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


def _work_lists(rep: HierarchicalMatrix, plan: PartitionPlan):
    """Per worker: owned block rows, shared blocks with member position."""
    lvl = rep.block_level_
    tgt = rep.block_pair_[:, 0]
    owned = [[] for _ in range(plan.n_p)]
    shared = []  # (block index, group)
    for b in range(rep.blocks_.shape[0]):
        g = plan.groups[int(lvl[b])][int(tgt[b])]
        if len(g) == 1:
            owned[g[0]].append(b)
        else:
            shared.append((b, g))
    owned = [rep.blocks_[np.array(o, dtype=np.int64)] for o in owned]
    return owned, shared


def _pivots(rep, row):
    r, po, trans = int(row[5]), int(row[6]), int(row[8])
    if trans:
        return rep._piv[po + r:po + 2 * r], rep._piv[po:po + r], True
    return rep._piv[po:po + r], rep._piv[po + r:po + 2 * r], False


def _lu(rep, row):
    r, li = int(row[5]), int(row[7])
    return rep._lus[rep._lu_off[li]:rep._lu_off[li + 1]].reshape(r, r)


def _z_part(rep, row, p0, p1, x):
    rows, _, _ = _pivots(rep, row)
    ys, ye = int(row[2]), int(row[3])
    if rep._compiled:
        return _engine.pivot_rows_partial(rep.kernel_.code, rep._P, ys, ye, rows, p0, p1, x)
    return rep._oracle(rows[p0:p1], np.arange(ys, ye)) @ x[ys:ye] if p1 > p0 else np.zeros(0)


def _expand(rep, row, a0, a1, w, out):
    _, cols, _ = _pivots(rep, row)
    if a1 <= a0:
        return
    if rep._compiled:
        _engine.expand_rows(rep.kernel_.code, rep._P, a0, a1, cols, w, out)
    else:
        out[a0:a1] += rep._oracle(np.arange(a0, a1), cols) @ w


def _solve(rep, row, z):
    _, _, trans = _pivots(rep, row)
    lu = _lu(rep, row)
    if rep._compiled:
        return _engine.solve_pivots(lu, z, trans)
    return rep.lowrank_block(int(row[7])).solve(z, trans=trans)


def _dense_cols(rep, row, c0, c1, x):
    xs, xe = int(row[0]), int(row[1])
    part = np.zeros(xe - xs)
    if c1 <= c0:
        return part
    kind = int(row[4])
    if kind == DENSE_CACHED:
        o = rep.dense_offsets_[int(row[9])]
        ys, ye = int(row[2]), int(row[3])
        blk = rep._dense[o:o + (xe - xs) * (ye - ys)].reshape(xe - xs, ye - ys)
        part += blk[:, c0 - ys:c1 - ys] @ x[c0:c1]
    elif rep._compiled:
        _engine.dense_apply_cols(rep.kernel_.code, rep._P, xs, xe, c0, c1, x, part)
    else:
        part += rep._oracle(np.arange(xs, xe), np.arange(c0, c1)) @ x[c0:c1]
    return part


def _run(pool, n_p, fn):
    """Run ``fn(w)`` on every worker; returns results and per-worker CPU seconds."""
    def timed(w):
        t0 = time.thread_time()
        res = fn(w)
        return res, time.thread_time() - t0
    if pool is None:
        out = [timed(w) for w in range(n_p)]
    else:
        out = list(pool.map(timed, range(n_p)))
    return [o[0] for o in out], np.array([o[1] for o in out])


def parallel_matvec(rep: HierarchicalMatrix, x, n_p: int, plan=None, threads=True,
                    return_times=False):
    """Partitioned product; returns ``(b, ledger)`` (and worker times).

    Worker times are per-thread CPU seconds summed over both phases, so
    they measure each worker's share even when fewer cores than workers
    are available.
    """
    check_is_fitted(rep, "blocks_")
    x = check_vector(x, rep.n_points_)
    check_positive(n_p, "n_p", integer=True)
    plan = plan_partition(rep.tree_.depth, n_p) if plan is None else plan
    if plan.n_p != n_p or plan.depth != rep.tree_.depth:
        raise ValueError("plan does not match the representation")
    owned, shared = _work_lists(rep, plan)
    perm = rep.tree_.perm
    xs_vec = np.ascontiguousarray(x[perm])
    n = rep.n_points_
    ledger = CommLedger()

    # per worker: list of (block index, member position, group size)
    mine = [[] for _ in range(n_p)]
    for b, g in shared:
        for m, w in enumerate(g):
            mine[w].append((b, m, len(g)))

    def phase1(w):
        out = np.zeros(n)
        if owned[w].shape[0]:
            rep._apply_sorted(xs_vec, owned[w], out)
        parts = {}
        for b, m, g in mine[w]:
            row = rep.blocks_[b]
            if int(row[4]) == LOWRANK:
                cut = _split(int(row[5]), g)
                parts[b] = _z_part(rep, row, int(cut[m]), int(cut[m + 1]), xs_vec)
            else:
                ys, ye = int(row[2]), int(row[3])
                cut = _split(ye - ys, g) + ys
                parts[b] = _dense_cols(rep, row, int(cut[m]), int(cut[m + 1]), xs_vec)
        return out, parts

    pool = ThreadPoolExecutor(max_workers=n_p) if threads and n_p > 1 else None
    try:
        res1, t1 = _run(pool, n_p, phase1)

        # exchange: assemble r-vectors and dense partial sums in member order
        zfull, dsum = {}, {}
        lr_floats = dense_floats = 0
        for b, g in shared:
            row = rep.blocks_[b]
            pieces = [res1[w][1][b] for w in g]
            if int(row[4]) == LOWRANK:
                r = int(row[5])
                zfull[b] = np.concatenate(pieces) if r else np.zeros(0)
                ledger.shared_lowrank.append((len(g), r))
                lr_floats += len(g) * r
            else:
                acc = pieces[0].copy()
                for p in pieces[1:]:
                    acc += p
                dsum[b] = acc
                dense_floats += len(g) * acc.size
        if shared:
            ledger.add("lowrank_exchange", lr_floats, sum(1 for b, g in shared
                                                          if b in zfull))
            ledger.add("dense_reduce", dense_floats, len(dsum))

        def phase2(w):
            out = res1[w][0]
            for b, m, g in mine[w]:
                row = rep.blocks_[b]
                xs, xe = int(row[0]), int(row[1])
                if int(row[4]) == LOWRANK:
                    if int(row[5]) == 0:
                        continue
                    wv = _solve(rep, row, zfull[b])
                    cut = _split(xe - xs, g) + xs
                    _expand(rep, row, int(cut[m]), int(cut[m + 1]), wv, out)
                elif m == 0:
                    out[xs:xe] += dsum[b]
            return out

        outs, t2 = _run(pool, n_p, phase2)
    finally:
        if pool is not None:
            pool.shutdown()

    # gather in worker order
    if n_p == 1:
        b_sorted = outs[0]
    else:
        b_sorted = outs[0].copy()
        for o in outs[1:]:
            b_sorted += o
        ledger.add("gather", n, 1)
    b = np.empty(n)
    b[perm] = b_sorted
    if return_times:
        return b, ledger, t1 + t2
    return b, ledger


def init_compressions(rep: HierarchicalMatrix, n_p: int, plan=None, verify=False):
    """ACA invocations per stored block ``(level, target, source)``.

    A node owned by one worker compresses its blocks once; a shared node's
    blocks are compressed separately by every member of its group. With
    ``verify`` the redundant compressions are actually run and checked to
    reproduce the stored pivots.
    """
    check_is_fitted(rep, "blocks_")
    plan = plan_partition(rep.tree_.depth, n_p) if plan is None else plan
    counts: Dict[tuple, int] = {}
    for level, t, s, r, po, li in rep.compressions_:
        g = plan.groups[int(level)][int(t)]
        counts[(int(level), int(t), int(s))] = len(g)
        if verify and len(g) > 1:
            lo, hi = rep.tree_.ranges(int(level))
            for _ in g[1:]:
                rows, cols, _ = rep._compress(rep._P, int(lo[t]), int(hi[t]),
                                              int(lo[s]), int(hi[s]))
                if not (np.array_equal(rows, rep._piv[po:po + r])
                        and np.array_equal(cols, rep._piv[po + r:po + 2 * r])):
                    raise RuntimeError("redundant compression is not reproducible")
    return counts


def default_workers(fallback=1):
    v = os.environ.get(NUM_WORKERS_ENV)
    return int(v) if v else fallback


def parallel_bench(N, nps=(1, 2, 4, 8), variant="hodlr3d", kernel="laplace3d", eps=1e-7,
                   seed=0, n_max=216, repeats=3, out=None, config=None, rep=None):
    """Per-worker timing of the partitioned product across worker counts."""
    if rep is None:
        pts = generate_points("uniform-random", N, seed).points
        rep = HierarchicalMatrix(kernel=kernel, variant=variant, n_max=n_max,
                                 eps=eps).fit(pts)
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.standard_normal(rep.n_points_)
    serial = rep.matvec(x)
    rows = []
    for n_p in nps:
        avg, mx = [], []
        for _ in range(repeats):
            b, ledger, times = parallel_matvec(rep, x, n_p, return_times=True)
            avg.append(float(times.mean()))
            mx.append(float(times.max()))
        rows.append({
            "N": rep.n_points_, "n_p": n_p, "matvec_avg_s": min(avg),
            "matvec_max_s": min(mx), "comm_floats": ledger.total_floats, "seed": seed,
            "rel_diff": float(np.linalg.norm(b - serial) / np.linalg.norm(serial)),
        })
    base = next((r["matvec_max_s"] for r in rows if r["n_p"] == 2), None)
    for r in rows:
        r["speedup_vs_np2"] = base / r["matvec_max_s"] if base else float("nan")
    if out is not None:
        write_csv(out, PARALLEL_COLUMNS + ("rel_diff",), rows, config)
    return rows
