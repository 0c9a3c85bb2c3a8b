"""Conforming simplicial triangulation of a dyadic partition.

The leaf boxes induce a box complex: a point's cell is the intersection of
the relatively open faces, one per leaf containing the point, that hold it.
Cells of every dimension are boxes whose closures are unions of cells, so
triangulating each cell by coning its boundary from the cell centre (edges
below the top dimension are kept whole) gives a conforming triangulation
in which every leaf is a union of simplices.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..errors import IntegrityError
from ..geometry import Region
from .balance import integer_boxes


@dataclass
class Triangulation:
    p: int
    vertices: np.ndarray          # (V, p) unit-cube coordinates
    simplices: np.ndarray         # (S, p + 1) vertex ids
    simplex_leaf: np.ndarray      # (S,) index into ``leaves``
    leaves: list[Region]
    volumes: np.ndarray = field(default=None)
    neighbours: np.ndarray = field(default=None)  # (S, p + 1); -1 on the domain boundary

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_simplices(self) -> int:
        return self.simplices.shape[0]

    def leaf_simplices(self) -> list[np.ndarray]:
        order = np.argsort(self.simplex_leaf, kind="stable")
        bounds = np.searchsorted(self.simplex_leaf[order], np.arange(len(self.leaves) + 1))
        return [order[bounds[i]:bounds[i + 1]] for i in range(len(self.leaves))]


def _leaf_cells(i, lo, hi):
    """Cell keys meeting the closed box of leaf ``i``."""
    p = lo.shape[1]
    near = np.all((lo <= hi[i]) & (lo[i] <= hi), axis=1)
    nlo, nhi = lo[near], hi[near]
    axes = []
    for j in range(p):
        b = np.unique(np.concatenate([nlo[:, j], nhi[:, j]]))
        b = b[(b >= lo[i, j]) & (b <= hi[i, j])]
        mids = b[:-1] + b[1:]
        axes.append(np.sort(np.concatenate([2 * b, mids])))
    # representatives in doubled units
    x = np.array(list(itertools.product(*axes)), dtype=np.int64)
    inside = np.all((2 * nlo[None] <= x[:, None]) & (x[:, None] <= 2 * nhi[None]), axis=2)
    on_face = (x[:, None] == 2 * nlo[None]) | (x[:, None] == 2 * nhi[None])
    fixed = np.any(on_face & inside[:, :, None], axis=1)
    big = np.iinfo(np.int64).max
    clo = np.where(inside[:, :, None], nlo[None], -big).max(axis=1)
    chi = np.where(inside[:, :, None], nhi[None], big).min(axis=1)
    clo = np.where(fixed, x // 2, clo)
    chi = np.where(fixed, x // 2, chi)
    keys = np.unique(np.stack([clo, chi], axis=2).reshape(len(x), -1), axis=0)
    return [tuple(map(int, k)) for k in keys]


def _dim(key) -> int:
    return sum(key[2 * j] != key[2 * j + 1] for j in range(len(key) // 2))


def _inside(b, c) -> bool:
    return all(c[2 * j] <= b[2 * j] and b[2 * j + 1] <= c[2 * j + 1] for j in range(len(c) // 2))


def triangulate(leaves: list[Region], audit: bool = True) -> Triangulation:
    """Triangulate the partition formed by ``leaves`` (graded or not)."""
    if not leaves:
        raise ValueError("no leaves to triangulate")
    p = leaves[0].p
    lo, hi, res = integer_boxes(leaves)
    boundary: dict[tuple, list] = {}
    dims: dict[tuple, int] = {}
    for i in range(len(leaves)):
        cells = _leaf_cells(i, lo, hi)
        by_dim: dict[int, list] = {}
        for c in cells:
            by_dim.setdefault(_dim(c), []).append(c)
        for c in cells:
            k = _dim(c)
            dims[c] = k
            if k == 0 or c in boundary:
                continue
            boundary[c] = [b for b in by_dim.get(k - 1, ()) if _inside(b, c)]

    scale = np.ldexp(0.5, -res.astype(int))
    vid: dict[tuple, int] = {}
    coords = []

    def vertex(c):
        if c not in vid:
            vid[c] = len(coords)
            coords.append([(c[2 * j] + c[2 * j + 1]) * scale[j] for j in range(p)])
        return vid[c]

    memo: dict[tuple, list] = {}

    def tri(c):
        if c in memo:
            return memo[c]
        k = dims[c]
        if k == 0:
            out = [(vertex(c),)]
        elif k == 1 and p > 1:
            a, b = boundary[c]
            out = [(vertex(a), vertex(b))]
        else:
            centre = vertex(c)
            out = [s + (centre,) for b in sorted(boundary[c]) for s in tri(b)]
        memo[c] = out
        return out

    simplices, owner = [], []
    for i in range(len(leaves)):
        key = tuple(int(v) for pair in zip(lo[i], hi[i]) for v in pair)
        for s in tri(key):
            simplices.append(s)
            owner.append(i)
    t = Triangulation(
        p=p,
        vertices=np.array(coords, dtype=float),
        simplices=np.array(simplices, dtype=np.int64),
        simplex_leaf=np.array(owner, dtype=np.int64),
        leaves=list(leaves),
    )
    t.volumes = simplex_volumes(t.vertices, t.simplices)
    if audit:
        audit_triangulation(t)
    return t


def simplex_volumes(vertices: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    p = vertices.shape[1]
    v = vertices[simplices]
    m = np.concatenate([v, np.ones(v.shape[:2] + (1,))], axis=2)
    return np.abs(np.linalg.det(m)) / math.factorial(p)


def audit_triangulation(t: Triangulation) -> None:
    """Raise ``IntegrityError`` unless ``t`` is a conforming triangulation of the leaves.

    Checks positive volumes, that each leaf's simplices fill it exactly, and
    that every facet is shared by exactly two simplices unless it lies on
    the boundary of the unit cube. With the volume checks, the facet check
    rules out hanging vertices and overlaps.
    """
    p = t.p
    if np.any(t.volumes <= 0):
        raise IntegrityError("triangulation contains a degenerate simplex")
    filled = np.bincount(t.simplex_leaf, weights=t.volumes, minlength=len(t.leaves))
    expected = np.array([r.volume() for r in t.leaves])
    if not np.allclose(filled, expected, rtol=1e-9, atol=0):
        bad = int(np.argmax(np.abs(filled - expected)))
        raise IntegrityError(f"simplices of leaf {t.leaves[bad].code()} do not fill it")
    count = Counter()
    where = {}
    for s, simplex in enumerate(t.simplices.tolist()):
        for drop in range(p + 1):
            facet = tuple(sorted(simplex[:drop] + simplex[drop + 1:]))
            count[facet] += 1
            where.setdefault(facet, []).append((s, drop))
    neighbours = np.full(t.simplices.shape, -1, dtype=np.int64)
    for facet, n in count.items():
        if n == 2:
            (s1, d1), (s2, d2) = where[facet]
            neighbours[s1, d1], neighbours[s2, d2] = s2, s1
            continue
        pts = t.vertices[list(facet)]
        on_hull = np.any(np.all(pts == 0.0, axis=0) | np.all(pts == 1.0, axis=0))
        if n != 1 or not on_hull:
            raise IntegrityError(f"facet {facet} is shared by {n} simplices; triangulation is not conforming")
    t.neighbours = neighbours
