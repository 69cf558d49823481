"""Compiled inner loops.

Every routine works on the tree-ordered point array ``P`` where each
cluster is a contiguous range ``[start, end)``. Kernels are selected by
the integer code of :class:`hodlr3d.kernels.KernelSpec`; the diagonal is
always zero here (custom diagonals use the numpy paths).
"""
import math

import numpy as np
from numba import njit

COINCIDENT_TOL = 1e-14
PIVOT_TOL = 1e-30


@njit(inline="always")
def _f(code, r):
    if code == 0:
        return 1.0 / r
    elif code == 1:
        r2 = r * r
        return 1.0 / (r2 * r2)
    else:
        return math.cos(r) / r


@njit(inline="always")
def _entry(code, P, i, j):
    if i == j:
        return 0.0
    dx = P[i, 0] - P[j, 0]
    dy = P[i, 1] - P[j, 1]
    dz = P[i, 2] - P[j, 2]
    r = math.sqrt(dx * dx + dy * dy + dz * dz)
    if r < COINCIDENT_TOL:
        raise ValueError("distinct particles coincide")
    return _f(code, r)


@njit(cache=True, nogil=True)
def dense_block(code, P, xs, xe, ys, ye):
    out = np.empty((xe - xs, ye - ys))
    for a in range(xe - xs):
        for b in range(ye - ys):
            out[a, b] = _entry(code, P, xs + a, ys + b)
    return out


@njit(cache=True, nogil=True)
def index_block(code, P, rows, cols):
    out = np.empty((rows.size, cols.size))
    for a in range(rows.size):
        for b in range(cols.size):
            out[a, b] = _entry(code, P, rows[a], cols[b])
    return out


@njit(cache=True, nogil=True)
def dense_apply(code, P, xs, xe, ys, ye, x, out):
    """out[xs:xe] += K(X, Y) x[ys:ye] without materialising K."""
    for a in range(xs, xe):
        s = 0.0
        for b in range(ys, ye):
            s += _entry(code, P, a, b) * x[b]
        out[a] += s


@njit(cache=True, nogil=True)
def dense_apply_cols(code, P, xs, xe, ys, ye, x, out):
    """Column-split variant: out[a] += sum_b K(a, b) x[b], b in [ys, ye)."""
    for a in range(xs, xe):
        s = 0.0
        for b in range(ys, ye):
            s += _entry(code, P, a, b) * x[b]
        out[a - xs] += s


@njit(cache=True, nogil=True, fastmath=True)
def aca(code, P, xs, xe, ys, ye, eps, max_rank):
    """Partially pivoted ACA of K(X, Y).

    Returns (sigma, tau, lu) where sigma/tau are pivot offsets inside X/Y
    and ``lu`` holds the unit-lower factor (strictly below the diagonal)
    and the upper factor (on and above it) of K(sigma, tau).
    """
    m = xe - xs
    n = ye - ys
    cap = min(m, n, max_rank)
    width = max(min(cap, 16), 1)
    # residual crosses stored row-wise so U[:k], V[:k] are contiguous for BLAS
    U = np.empty((width, m))
    V = np.empty((width, n))
    row_used = np.zeros(m, dtype=np.bool_)
    col_used = np.zeros(n, dtype=np.bool_)
    sigma = np.empty(cap, dtype=np.int64)
    tau = np.empty(cap, dtype=np.int64)
    row = np.empty(n)
    col = np.empty(m)
    t2 = np.empty(0)
    k = 0
    i = 0
    nrm2 = 0.0
    next_unused = 0
    while k < cap:
        row_used[i] = True
        for b in range(n):
            row[b] = _entry(code, P, xs + i, ys + b)
        if k > 0:
            ui = U[:k, i].copy()
            row -= np.dot(ui, V[:k])
        j = -1
        best = -1.0
        for b in range(n):
            if not col_used[b]:
                v = abs(row[b])
                if v > best:
                    best = v
                    j = b
        if j < 0:
            break
        piv = row[j]
        if abs(piv) < PIVOT_TOL:
            # residual row vanishes; move on to the next untouched row
            while next_unused < m and row_used[next_unused]:
                next_unused += 1
            if next_unused >= m:
                break
            i = next_unused
            continue
        row /= piv
        vv = np.dot(row, row)
        for a in range(m):
            col[a] = _entry(code, P, xs + a, ys + j)
        cross = 0.0
        if k > 0:
            vj = V[:k, j].copy()
            col -= np.dot(vj, U[:k])
            cross = np.dot(np.dot(U[:k], col), np.dot(V[:k], row))
        uu = np.dot(col, col)
        new_nrm2 = nrm2 + uu * vv + 2.0 * cross
        # a cross below tolerance is not kept, so exact rank-k input stops at k
        if k > 0 and math.sqrt(uu * vv) <= eps * math.sqrt(abs(new_nrm2)):
            break
        if uu == 0.0:
            break
        if k == U.shape[0]:
            w2 = min(cap, 2 * k)
            U2 = np.empty((w2, m))
            V2 = np.empty((w2, n))
            U2[:k] = U[:k]
            V2[:k] = V[:k]
            U = U2
            V = V2
        U[k] = col
        V[k] = row
        sigma[k] = i
        tau[k] = j
        col_used[j] = True
        nrm2 = new_nrm2
        k += 1
        best = -1.0
        nxt = -1
        for a in range(m):
            if not row_used[a]:
                v = abs(col[a])
                if v > best:
                    best = v
                    nxt = a
        if nxt < 0:
            break
        i = nxt
    lu = np.empty((k, k))
    for p in range(k):
        d = U[p, sigma[p]]
        for q in range(k):
            if q < p:
                # unit-lower L[p, q] = U_q[sigma_p] / pivot_q
                lu[p, q] = U[q, sigma[p]] / U[q, sigma[q]]
            elif q == p:
                lu[p, q] = d
            else:
                # upper R[p, q] = pivot_p * V_p[tau_q]
                lu[p, q] = d * V[p, tau[q]]
    return sigma[:k].copy(), tau[:k].copy(), lu


@njit(inline="always")
def _solve_lu(lu, r, z, trans):
    """Overwrite z with (LU)^{-1} z, or (LU)^{-T} z when trans."""
    if not trans:
        for p in range(r):
            s = z[p]
            for q in range(p):
                s -= lu[p, q] * z[q]
            z[p] = s
        for p in range(r - 1, -1, -1):
            s = z[p]
            for q in range(p + 1, r):
                s -= lu[p, q] * z[q]
            z[p] = s / lu[p, p]
    else:
        # (LU)^T = U^T L^T: forward with U^T, then backward with L^T
        for p in range(r):
            s = z[p]
            for q in range(p):
                s -= lu[q, p] * z[q]
            z[p] = s / lu[p, p]
        for p in range(r - 1, -1, -1):
            s = z[p]
            for q in range(p + 1, r):
                s -= lu[q, p] * z[q]
            z[p] = s


@njit(cache=True, nogil=True)
def lowrank_apply(code, P, xs, xe, ys, ye, rows, cols, lu, trans, x, out):
    """out[xs:xe] += K(X, cols) (LU)^{-1} K(rows, Y) x[ys:ye].

    ``rows``/``cols`` are global indices of the pivots. With ``trans`` the
    stored factorisation belongs to the mirrored block and is applied
    transposed.
    """
    r = rows.size
    if r == 0:
        return
    z = np.empty(r)
    for p in range(r):
        s = 0.0
        i = rows[p]
        for b in range(ys, ye):
            s += _entry(code, P, i, b) * x[b]
        z[p] = s
    _solve_lu(lu, r, z, trans)
    for a in range(xs, xe):
        s = 0.0
        for q in range(r):
            s += _entry(code, P, a, cols[q]) * z[q]
        out[a] += s


@njit(cache=True, nogil=True)
def batch_apply(code, P, x, out, blk, piv, lus, lu_off, dense, dense_off):
    """Apply a list of blocks in order.

    blk rows: (xs, xe, ys, ye, kind, rank, piv_off, lu_index, trans, dense_index)
    kind 0 = dense on the fly, 1 = dense cached, 2 = low rank.
    """
    for t in range(blk.shape[0]):
        xs = blk[t, 0]
        xe = blk[t, 1]
        ys = blk[t, 2]
        ye = blk[t, 3]
        kind = blk[t, 4]
        if kind == 0:
            dense_apply(code, P, xs, xe, ys, ye, x, out)
        elif kind == 1:
            o = dense_off[blk[t, 9]]
            nc = ye - ys
            for a in range(xe - xs):
                s = 0.0
                base = o + a * nc
                for b in range(nc):
                    s += dense[base + b] * x[ys + b]
                out[xs + a] += s
        else:
            r = blk[t, 5]
            if r == 0:
                continue
            po = blk[t, 6]
            trans = blk[t, 8] != 0
            if trans:
                rows = piv[po + r: po + 2 * r]
                cols = piv[po: po + r]
            else:
                rows = piv[po: po + r]
                cols = piv[po + r: po + 2 * r]
            lo = lu_off[blk[t, 7]]
            lu = lus[lo: lo + r * r].reshape((r, r))
            lowrank_apply(code, P, xs, xe, ys, ye, rows, cols, lu, trans, x, out)


@njit(cache=True, nogil=True)
def pivot_rows_partial(code, P, ys, ye, rows, p0, p1, x):
    """z[p] = K(rows[p], Y) x[Y] for p in [p0, p1)."""
    z = np.zeros(p1 - p0)
    for p in range(p0, p1):
        s = 0.0
        i = rows[p]
        for b in range(ys, ye):
            s += _entry(code, P, i, b) * x[b]
        z[p - p0] = s
    return z


@njit(cache=True, nogil=True)
def solve_pivots(lu, z, trans):
    w = z.copy()
    _solve_lu(lu, w.size, w, trans)
    return w


@njit(cache=True, nogil=True)
def expand_rows(code, P, a0, a1, cols, w, out):
    """out[a] += K(a, cols) w for a in [a0, a1)."""
    for a in range(a0, a1):
        s = 0.0
        for q in range(cols.size):
            s += _entry(code, P, a, cols[q]) * w[q]
        out[a] += s


@njit(cache=True, nogil=True)
def dense_formation_sweep(code, P, ranges):
    """Evaluate every entry of the listed blocks once; returns a checksum.

    Used to time dense-block formation separately from the product.
    """
    acc = 0.0
    for t in range(ranges.shape[0]):
        for a in range(ranges[t, 0], ranges[t, 1]):
            for b in range(ranges[t, 2], ranges[t, 3]):
                acc += _entry(code, P, a, b)
    return acc


@njit(cache=True, nogil=True)
def fill_dense(code, P, ranges, offsets, dense):
    for t in range(ranges.shape[0]):
        o = offsets[t]
        nc = ranges[t, 3] - ranges[t, 2]
        for a in range(ranges[t, 1] - ranges[t, 0]):
            for b in range(nc):
                dense[o + a * nc + b] = _entry(code, P, ranges[t, 0] + a, ranges[t, 2] + b)


@njit(cache=True, nogil=True)
def direct_rows(code, P, rows, x):
    """Exact (K x)[rows] by direct summation over all particles."""
    n = P.shape[0]
    out = np.zeros(rows.size)
    for p in range(rows.size):
        i = rows[p]
        s = 0.0
        for b in range(n):
            s += _entry(code, P, i, b) * x[b]
        out[p] = s
    return out
