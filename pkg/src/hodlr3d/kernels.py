"""Kernel functions and particle distributions.

A kernel here is a radial function ``f(r)`` turned into a matrix by

    K(i, j) = 0            if i == j
    K(i, j) = f(|r_i - r_j|)  otherwise

Built-in kernels carry an integer code so the compiled routines in
:mod:`hodlr3d._engine` can evaluate them without Python callbacks. Custom
kernels only need a numpy-vectorised ``f``; they run on the slower
pure-numpy paths.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import DegenerateGeometryError

__all__ = [
    "KernelSpec",
    "PointSet",
    "LAPLACE3D",
    "INVERSE_QUARTIC",
    "HELMHOLTZ_RE",
    "get_kernel",
    "eval_entry",
    "eval_block",
    "generate_points",
    "COINCIDENT_TOL",
]

# distinct particles closer than this are treated as coincident
COINCIDENT_TOL = 1e-14


@dataclass(frozen=True)
class KernelSpec:
    """A radial interaction kernel.

    Parameters
    ----------
    name : str
        Identifier used in CSV output.
    func : callable
        Vectorised ``f(r)`` acting on an ndarray of distances.
    code : int
        Dispatch code for the compiled engine; ``-1`` for custom kernels.
    diagonal : float
        Value placed on ``K(i, i)``.
    symmetric : bool
        Whether ``K(i, j) == K(j, i)``; radial kernels always are.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    code: int = -1
    diagonal: float = 0.0
    symmetric: bool = True

    @classmethod
    def custom(cls, func, name="custom", diagonal=0.0):
        return cls(name=name, func=func, code=-1, diagonal=float(diagonal))

    @property
    def is_builtin(self):
        return self.code >= 0

    def __call__(self, r):
        return self.func(np.asarray(r, dtype=float))


def _laplace(r):
    return 1.0 / r


def _inverse_quartic(r):
    r2 = r * r
    return 1.0 / (r2 * r2)


def _helmholtz_re(r):
    return np.cos(r) / r


LAPLACE3D = KernelSpec("laplace3d", _laplace, code=0)
INVERSE_QUARTIC = KernelSpec("inverse-quartic", _inverse_quartic, code=1)
HELMHOLTZ_RE = KernelSpec("helmholtz-re", _helmholtz_re, code=2)

_BY_NAME = {
    "laplace3d": LAPLACE3D,
    "laplace": LAPLACE3D,
    "1/r": LAPLACE3D,
    "inverse-quartic": INVERSE_QUARTIC,
    "r4": INVERSE_QUARTIC,
    "1/r4": INVERSE_QUARTIC,
    "helmholtz-re": HELMHOLTZ_RE,
    "cos(r)/r": HELMHOLTZ_RE,
}


def get_kernel(kernel) -> KernelSpec:
    """Resolve a kernel name, a KernelSpec, or a bare callable ``f(r)``."""
    if isinstance(kernel, KernelSpec):
        return kernel
    if isinstance(kernel, str):
        try:
            return _BY_NAME[kernel.lower()]
        except KeyError:
            raise ValueError(
                f"unknown kernel {kernel!r}; expected one of {sorted(set(_BY_NAME))}"
            ) from None
    if callable(kernel):
        return KernelSpec.custom(kernel)
    raise TypeError(f"cannot interpret {type(kernel).__name__} as a kernel")


@dataclass(frozen=True, eq=False)
class PointSet:
    """Particle coordinates plus the recipe that produced them."""

    points: np.ndarray
    seed: Optional[int] = None
    distribution: str = "custom"

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.points if dtype is None else self.points.astype(dtype)


def generate_points(distribution: str, n_points: int, seed: int = 0) -> PointSet:
    """Draw a reproducible particle set inside ``[-1, 1]^3``.

    ``uniform-random`` draws i.i.d. uniform points from a PCG64 generator
    seeded with ``seed``. ``tensor-grid`` returns the cell centres of an
    ``n x n x n`` partition of the cube, which requires ``n_points == n**3``;
    the seed is ignored but still recorded.
    """
    n_points = int(n_points)
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    if distribution == "uniform-random":
        rng = np.random.Generator(np.random.PCG64(seed))
        pts = rng.uniform(-1.0, 1.0, size=(n_points, 3))
    elif distribution == "tensor-grid":
        n = int(round(n_points ** (1.0 / 3.0)))
        if n ** 3 != n_points:
            raise ValueError(f"tensor-grid needs a perfect cube, got N={n_points}")
        c = -1.0 + (2.0 * np.arange(n) + 1.0) / n
        gx, gy, gz = np.meshgrid(c, c, c, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    return PointSet(pts, seed=seed, distribution=distribution)


def eval_block(kernel, targets, sources, target_ids=None, source_ids=None):
    """Dense kernel block between two point arrays.

    ``target_ids``/``source_ids`` are the global particle indices; entries
    where they coincide get the kernel's diagonal value. Without ids no
    diagonal is assumed and every pair must be distinct in space.
    """
    kernel = get_kernel(kernel)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    sources = np.atleast_2d(np.asarray(sources, dtype=float))
    diff = targets[:, None, :] - sources[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if target_ids is not None and source_ids is not None:
        same = np.asarray(target_ids)[:, None] == np.asarray(source_ids)[None, :]
    else:
        same = np.zeros(r.shape, dtype=bool)
    bad = (r < COINCIDENT_TOL) & ~same
    if bad.any():
        a, b = np.argwhere(bad)[0]
        raise DegenerateGeometryError(
            f"distinct particles coincide (block entry {a}, {b}); r={r[a, b]:.3e}"
        )
    r_safe = np.where(same, 1.0, r)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = kernel.func(r_safe)
    out = np.array(out, dtype=float, copy=True)
    out[same] = kernel.diagonal
    return out


def eval_entry(kernel, pts, i: int, j: int) -> float:
    """Single matrix entry ``K(i, j)`` for particles of ``pts``."""
    kernel = get_kernel(kernel)
    p = np.asarray(pts, dtype=float)
    n = p.shape[0]
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"indices ({i}, {j}) out of range for {n} points")
    if i == j:
        return float(kernel.diagonal)
    r = float(np.linalg.norm(p[i] - p[j]))
    if r < COINCIDENT_TOL:
        raise DegenerateGeometryError(f"particles {i} and {j} coincide")
    return float(kernel.func(np.float64(r)))
