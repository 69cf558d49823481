"""Balanced octree, same-level admissibility classes and block census.

Nodes at level ``l`` are addressed by their grid index ``(ix, iy, iz)``
with ``0 <= i < 2**l``, or equivalently by the linear id
``(ix * 2**l + iy) * 2**l + iz``. Particles are sorted along the Morton
curve of the leaf cells so that every node, at every level, owns a
contiguous slice of the sorted particle array.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .exceptions import DegenerateGeometryError

__all__ = [
    "AdmissibilityClass",
    "Cube",
    "Octree",
    "InteractionLists",
    "BlockCensus",
    "VARIANTS",
    "build_tree",
    "classify_pair",
    "classify_offset",
    "build_interaction_lists",
    "census",
    "formula_counts",
]

VARIANTS = ("hodlr3d", "hodlr", "hstrong")
DEFAULT_MAX_DEPTH = 12


class AdmissibilityClass(enum.IntEnum):
    SELF = 0
    FACE = 1
    EDGE = 2
    VERTEX = 3
    WELL_SEPARATED = 4

    @property
    def label(self):
        return _LABELS[self]


_LABELS = {
    AdmissibilityClass.SELF: "self",
    AdmissibilityClass.FACE: "face",
    AdmissibilityClass.EDGE: "edge",
    AdmissibilityClass.VERTEX: "vertex",
    AdmissibilityClass.WELL_SEPARATED: "well-separated",
}


@dataclass(frozen=True)
class Cube:
    level: int
    index: Tuple[int, int, int]
    center: Tuple[float, float, float]
    half_width: float

    @classmethod
    def from_index(cls, level, index, domain_center=(0.0, 0.0, 0.0), domain_half_width=1.0):
        n = 2 ** level
        if any(not 0 <= i < n for i in index):
            raise ValueError(f"grid index {index} outside level {level}")
        h = domain_half_width / n
        c = tuple(
            float(domain_center[k] - domain_half_width + (2 * index[k] + 1) * h)
            for k in range(3)
        )
        return cls(level, tuple(int(i) for i in index), c, h)


def classify_offset(d):
    """Class of a same-level pair from the integer grid offset(s) ``d``.

    Works elementwise on an ``(..., 3)`` array and returns int codes.
    """
    d = np.abs(np.asarray(d))
    cheb = d.max(axis=-1)
    nz = np.count_nonzero(d, axis=-1)
    out = np.where(cheb >= 2, AdmissibilityClass.WELL_SEPARATED, nz)
    return out.astype(np.int8)


def classify_pair(a: Cube, b: Cube) -> AdmissibilityClass:
    """Self / face / edge / vertex / well-separated for two cubes of one level."""
    if a.level != b.level:
        raise ValueError(f"cubes on different levels ({a.level} vs {b.level})")
    d = np.subtract(b.index, a.index)
    return AdmissibilityClass(int(classify_offset(d)))


def _lin(ix, iy, iz, n):
    return (ix * n + iy) * n + iz


def _unlin(lid, n):
    lid = np.asarray(lid)
    return np.stack([lid // (n * n), (lid // n) % n, lid % n], axis=-1)


def _spread_bits(v):
    v = np.asarray(v, dtype=np.uint64)
    out = np.zeros_like(v)
    for b in range(21):
        out |= ((v >> np.uint64(b)) & np.uint64(1)) << np.uint64(3 * b)
    return out


def _morton(ijk):
    ijk = np.asarray(ijk)
    return (
        (_spread_bits(ijk[..., 0]) << np.uint64(2))
        | (_spread_bits(ijk[..., 1]) << np.uint64(1))
        | _spread_bits(ijk[..., 2])
    )


class Octree:
    """Uniform octree of depth ``depth`` over a cubic domain.

    Attributes
    ----------
    points : ndarray (N, 3)
        Particles in their original order.
    perm : ndarray (N,)
        ``sorted_points = points[perm]``.
    depth : int
        Leaf level ``L``.
    """

    def __init__(self, points, depth, center=(0.0, 0.0, 0.0), half_width=1.0):
        self.points = np.asarray(points, dtype=float)
        self.depth = int(depth)
        self.center = np.asarray(center, dtype=float)
        self.half_width = float(half_width)
        L = self.depth
        cells = _grid_cells(self.points, L, self.center, self.half_width)
        codes = _morton(cells) if L > 0 else np.zeros(len(self.points), dtype=np.uint64)
        self.perm = np.argsort(codes, kind="stable")
        self.sorted_points = np.ascontiguousarray(self.points[self.perm])
        self._leaf_codes = codes[self.perm]
        self._starts = {}
        self._morton_of = {}
        for level in range(L + 1):
            n = 2 ** level
            lvl_codes = self._leaf_codes >> np.uint64(3 * (L - level))
            counts = np.bincount(lvl_codes.astype(np.int64), minlength=8 ** level)
            starts = np.zeros(8 ** level + 1, dtype=np.int64)
            np.cumsum(counts, out=starts[1:])
            self._starts[level] = starts
            grid = _unlin(np.arange(8 ** level), n)
            self._morton_of[level] = _morton(grid).astype(np.int64)

    def __repr__(self):
        return f"Octree(N={len(self.points)}, depth={self.depth})"

    @property
    def n_points(self):
        return self.points.shape[0]

    def n_nodes(self, level):
        return 8 ** level

    def ranges(self, level):
        """(start, end) arrays indexed by linear node id at ``level``."""
        starts = self._starts[level]
        m = self._morton_of[level]
        return starts[m], starts[m + 1]

    def node_range(self, level, index):
        n = 2 ** level
        lid = _lin(*index, n) if not np.isscalar(index) else int(index)
        s, e = self.ranges(level)
        return int(s[lid]), int(e[lid])

    def index_set(self, level, index):
        """Original particle indices inside a node."""
        s, e = self.node_range(level, index)
        return self.perm[s:e]

    def counts(self, level):
        s, e = self.ranges(level)
        return e - s

    def cube(self, level, index):
        if np.isscalar(index):
            index = tuple(int(v) for v in _unlin(index, 2 ** level))
        return Cube.from_index(level, index, tuple(self.center), self.half_width)

    def children(self, level, index):
        ix, iy, iz = index
        return [
            (2 * ix + a, 2 * iy + b, 2 * iz + c)
            for a in (0, 1) for b in (0, 1) for c in (0, 1)
        ]


def _grid_cells(points, level, center, half_width):
    n = 2 ** level
    rel = (points - center + half_width) / (2.0 * half_width)
    cells = np.floor(rel * n).astype(np.int64)
    return np.clip(cells, 0, n - 1)


def build_tree(pts, n_max: int = 216, center=(0.0, 0.0, 0.0), half_width=1.0,
               max_depth: int = DEFAULT_MAX_DEPTH) -> Octree:
    """Smallest uniform octree whose leaves all hold fewer than ``n_max`` points."""
    points = np.asarray(pts, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"points must have shape (N, 3), got {points.shape}")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    center = np.asarray(center, dtype=float)
    lo, hi = center - half_width, center + half_width
    if len(points) and (np.any(points < lo) or np.any(points > hi)):
        raise ValueError("points fall outside the computational cube")
    level = 0
    while len(points):
        if level == 0:
            top = len(points)
        else:
            codes = _morton(_grid_cells(points, level, center, half_width))
            top = np.unique(codes, return_counts=True)[1].max()
        if top < n_max:
            break
        if level >= max_depth:
            raise DegenerateGeometryError(
                f"leaf occupancy still {top} >= {n_max} at depth cap {max_depth}"
            )
        level += 1
    return Octree(points, level, center, half_width)


# parent-level offsets whose children are candidates, by variant
_PARENT_CLASSES = {
    "hodlr3d": (AdmissibilityClass.SELF, AdmissibilityClass.FACE, AdmissibilityClass.EDGE),
    "hstrong": (
        AdmissibilityClass.SELF,
        AdmissibilityClass.FACE,
        AdmissibilityClass.EDGE,
        AdmissibilityClass.VERTEX,
    ),
    "hodlr": (AdmissibilityClass.SELF,),
}


def _admissible(variant, cls):
    if variant == "hodlr3d":
        return (cls == AdmissibilityClass.VERTEX) | (cls == AdmissibilityClass.WELL_SEPARATED)
    if variant == "hstrong":
        return cls == AdmissibilityClass.WELL_SEPARATED
    return cls != AdmissibilityClass.SELF


def _check_variant(variant):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def _level_pairs(level, variant):
    """All clan pairs at ``level``: (target lid, source lid, class) arrays."""
    n = 2 ** level
    if level == 0:
        z = np.zeros(1, dtype=np.int64)
        return z, z, np.zeros(1, dtype=np.int8)
    grid = _unlin(np.arange(8 ** level), n)
    parent = grid // 2
    offs = np.array(
        [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)]
    )
    pcls = classify_offset(offs)
    offs = offs[np.isin(pcls, _PARENT_CLASSES[variant])]
    kids = np.array([(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)])
    # candidate = 2 * (parent + dp) + child
    cand = (
        2 * (parent[:, None, None, :] + offs[None, :, None, :]) + kids[None, None, :, :]
    ).reshape(len(grid), -1, 3)
    ok = np.all((cand >= 0) & (cand < n), axis=-1)
    tgt = np.broadcast_to(np.arange(8 ** level)[:, None], ok.shape)[ok]
    src_xyz = cand[ok]
    src = _lin(src_xyz[:, 0], src_xyz[:, 1], src_xyz[:, 2], n)
    cls = classify_offset(src_xyz - grid[tgt])
    order = np.lexsort((src, tgt))
    return tgt[order].astype(np.int64), src[order].astype(np.int64), cls[order]


@dataclass
class InteractionLists:
    """Per-level block lists of one hierarchical structure.

    ``admissible[l]`` and ``near[l]`` are ``(M, 2)`` arrays of ordered
    (target, source) linear ids with matching ``*_class`` arrays. Near
    pairs include the self pair; at the leaf level they are the dense
    blocks, above it they are refined further.
    """

    variant: str
    depth: int
    admissible: Dict[int, np.ndarray] = field(default_factory=dict)
    admissible_class: Dict[int, np.ndarray] = field(default_factory=dict)
    near: Dict[int, np.ndarray] = field(default_factory=dict)
    near_class: Dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def dense(self):
        return self.near[self.depth], self.near_class[self.depth]

    def for_node(self, level, lid):
        """Clan, interaction list and V/E/F neighbour sets of one node."""
        out = {"clan": [], "I": [], "V": [], "E": [], "F": [], "W": []}
        for pairs, classes, adm in (
            (self.admissible.get(level), self.admissible_class.get(level), True),
            (self.near.get(level), self.near_class.get(level), False),
        ):
            if pairs is None:
                continue
            sel = pairs[:, 0] == lid
            for s, c in zip(pairs[sel, 1], classes[sel]):
                s = int(s)
                c = AdmissibilityClass(int(c))
                if c == AdmissibilityClass.SELF:
                    continue
                out["clan"].append(s)
                if adm:
                    out["I"].append(s)
                key = {AdmissibilityClass.VERTEX: "V", AdmissibilityClass.EDGE: "E",
                       AdmissibilityClass.FACE: "F",
                       AdmissibilityClass.WELL_SEPARATED: "W"}[c]
                out[key].append(s)
        for k in out:
            out[k] = sorted(out[k])
        return out


def build_interaction_lists(tree, variant: str) -> InteractionLists:
    """Admissible and near lists for every level of ``tree``.

    ``tree`` may be an :class:`Octree` or a bare depth.
    """
    _check_variant(variant)
    depth = tree.depth if isinstance(tree, Octree) else int(tree)
    lists = InteractionLists(variant, depth)
    for level in range(depth + 1):
        tgt, src, cls = _level_pairs(level, variant)
        adm = _admissible(variant, cls) & (tgt != src)
        pairs = np.column_stack([tgt, src])
        lists.admissible[level] = pairs[adm]
        lists.admissible_class[level] = cls[adm]
        lists.near[level] = pairs[~adm]
        lists.near_class[level] = cls[~adm]
    return lists


# closed-form totals of ordered blocks on an L-level tree, per variant and
# (kind, class); None marks a structure that has no blocks of that class
def formula_counts(variant: str, L: int) -> Dict[Tuple[str, str], Optional[float]]:
    _check_variant(variant)
    e8, e4, e2 = 8.0 ** L, 4.0 ** L, 2.0 ** L
    if variant == "hodlr":
        return {
            ("dense", "all"): e8,
            ("lowrank", "well-separated"): None,
            ("lowrank", "vertex"): 8.0 / 7.0 * (e8 - 1),
            ("lowrank", "edge"): 16.0 / 7.0 * (e8 - 1),
            ("lowrank", "face"): 32.0 / 7.0 * (e8 - 1),
        }
    if variant == "hodlr3d":
        return {
            ("dense", "all"): (67 * e8 - 120 * e4 + 56 * e2) / 3.0,
            ("lowrank", "well-separated"): (
                444 * 8.0 ** (L + 1) - 63 * 4.0 ** (L + 4) + 735 * 2.0 ** (L + 5) - 10944
            ) / 21.0,
            ("lowrank", "vertex"): (
                25 * 8.0 ** (L + 1) - 42 * 4.0 ** (L + 2) + 49 * 2.0 ** (L + 4) - 312
            ) / 21.0,
            ("lowrank", "edge"): None,
            ("lowrank", "face"): None,
        }
    return {
        ("dense", "all"): (223 * e8 - 126 * 4.0 ** (L + 1) + 49 * 2.0 ** (L + 3) - 104) / 7.0,
        ("lowrank", "well-separated"): (
            223 * 8.0 ** (L + 1) - 630 * 4.0 ** (L + 2) + 1519 * 2.0 ** (L + 4)
            - 6552 * L - 16008
        ) / 7.0,
        ("lowrank", "vertex"): None,
        ("lowrank", "edge"): None,
        ("lowrank", "face"): None,
    }


CENSUS_COLUMNS = (
    "variant", "L", "level", "class", "kind",
    "count_enumerated", "count_unordered", "count_formula", "formula_match",
)


@dataclass
class BlockCensus:
    variant: str
    depth: int
    # (level, class label, kind) -> ordered count
    counts: Dict[Tuple[int, str, str], int]
    formulas: Dict[Tuple[str, str], Optional[float]]
    coverage: Optional[int] = None
    n_points: Optional[int] = None

    def total(self, kind, cls="all"):
        return sum(
            v for (lvl, c, k), v in self.counts.items()
            if k == kind and (cls == "all" or c == cls)
        )

    def per_level(self, kind, cls="all"):
        out = {}
        for (lvl, c, k), v in self.counts.items():
            if k == kind and (cls == "all" or c == cls):
                out[lvl] = out.get(lvl, 0) + v
        return out

    def mismatches(self):
        """(kind, class, enumerated, formula) wherever the closed form disagrees."""
        bad = []
        for (kind, cls), f in self.formulas.items():
            got = self.total(kind, cls)
            expect = 0.0 if f is None else f
            if abs(got - expect) > 1e-6:
                bad.append((kind, cls, got, f))
        return bad

    def rows(self):
        out = []
        for (lvl, cls, kind), v in sorted(self.counts.items()):
            out.append({
                "variant": self.variant, "L": self.depth, "level": lvl, "class": cls,
                "kind": kind, "count_enumerated": v, "count_unordered": _unordered(cls, v),
                "count_formula": "", "formula_match": "",
            })
        for (kind, cls), f in self.formulas.items():
            got = self.total(kind, cls)
            expect = 0.0 if f is None else f
            out.append({
                "variant": self.variant, "L": self.depth, "level": "all", "class": cls,
                "kind": kind, "count_enumerated": got,
                "count_unordered": sum(
                    _unordered(c, v) for (l_, c, k), v in self.counts.items()
                    if k == kind and (cls == "all" or c == cls)
                ),
                "count_formula": "" if f is None else _fmt_formula(f),
                "formula_match": int(abs(got - expect) <= 1e-6),
            })
        return out

    def to_csv(self, fh=None, header=True):
        buf = fh if fh is not None else io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CENSUS_COLUMNS, lineterminator="\n")
        if header:
            w.writeheader()
        w.writerows(self.rows())
        return buf.getvalue() if fh is None else None


def _unordered(cls, v):
    # self blocks have no mirror image
    return v if cls == "self" else v // 2


def _fmt_formula(f):
    return str(int(round(f))) if abs(f - round(f)) < 1e-9 else repr(f)


def census(tree, variant: str, lists: Optional[InteractionLists] = None) -> BlockCensus:
    """Count dense and low-rank ordered blocks by level and class.

    Empty cubes count like any other, which is the convention of the closed
    forms. When ``tree`` is an :class:`Octree` the index-pair coverage
    ``sum |X| |Y|`` is accumulated as well; it must equal ``N**2``.
    """
    if lists is None:
        lists = build_interaction_lists(tree, variant)
    depth = lists.depth
    counts: Dict[Tuple[int, str, str], int] = {}
    coverage = None
    have_tree = isinstance(tree, Octree)
    if have_tree:
        coverage = 0
    for level in range(depth + 1):
        groups = [("lowrank", lists.admissible[level], lists.admissible_class[level])]
        if level == depth:
            groups.append(("dense", lists.near[level], lists.near_class[level]))
        for kind, pairs, classes in groups:
            for c in np.unique(classes):
                counts[(level, AdmissibilityClass(int(c)).label, kind)] = int(
                    np.count_nonzero(classes == c)
                )
            if have_tree and len(pairs):
                cnt = tree.counts(level).astype(np.int64)
                coverage += int(np.sum(cnt[pairs[:, 0]] * cnt[pairs[:, 1]]))
    return BlockCensus(
        variant, depth, counts, formula_counts(variant, depth), coverage,
        tree.n_points if have_tree else None,
    )
