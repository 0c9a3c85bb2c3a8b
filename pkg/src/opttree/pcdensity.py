"""Piecewise-constant densities on dyadic partitions (fitted hMAP trees)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Transform
from .errors import DataError, IntegrityError
from .geometry import Region, decode

LOG2 = math.log(2.0)
GRID_DEPTH = 60
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SplitNode:
    dim: int
    theta: tuple[float, float]


@dataclass(frozen=True)
class LeafNode:
    logdens: float  # log density in unit-cube coordinates


class HmapTree:
    """Recursive dyadic partition with a constant density on every leaf.

    ``nodes`` maps each region of the tree to a ``SplitNode`` (dimension and
    mass split) or a ``LeafNode`` (log density in unit-cube units). Densities
    reported by :func:`pc_eval` are in raw data units via ``transform``.
    """

    def __init__(self, p: int, nodes: dict, transform: Transform | None = None, meta: dict | None = None):
        self.p = p
        self.nodes = dict(nodes)
        self.transform = transform or Transform.identity(p)
        self.meta = dict(meta or {})
        self.root = Region.root(p)

    def __eq__(self, other) -> bool:
        if not isinstance(other, HmapTree):
            return NotImplemented
        return self.p == other.p and self.nodes == other.nodes

    def __call__(self, x) -> np.ndarray:
        return pc_eval(self, x)

    def sample(self, seed, m: int) -> np.ndarray:
        return pc_sample(self, seed, m)

    def structure(self) -> dict:
        """Leaf set and split dimensions, ignoring numeric payloads."""
        return {
            r: (n.dim if isinstance(n, SplitNode) else None) for r, n in self.nodes.items()
        }

    def leaves(self) -> list[Region]:
        return sorted(r for r, n in self.nodes.items() if isinstance(n, LeafNode))

    def leaf_items(self) -> list[tuple[Region, float]]:
        return [(r, self.nodes[r].logdens) for r in self.leaves()]

    @property
    def n_leaves(self) -> int:
        return sum(isinstance(n, LeafNode) for n in self.nodes.values())

    @property
    def depth(self) -> int:
        return max(r.level for r in self.nodes)

    def leaf_masses(self) -> np.ndarray:
        return np.array([math.exp(ld - r.level * LOG2) for r, ld in self.leaf_items()])

    def find_leaf(self, region: Region) -> Region | None:
        """Leaf containing ``region`` (or None if ``region`` is refined further)."""
        node = self.root
        while True:
            kind = self.nodes.get(node)
            if kind is None:
                raise IntegrityError(f"tree is missing node {node.code()}")
            if isinstance(kind, LeafNode):
                return node if node.contains(region) else None
            j = kind.dim
            if region.levels[j] <= node.levels[j]:
                return None
            bit = (region.index[j] >> (region.levels[j] - node.levels[j] - 1)) & 1
            node = node.children(j)[bit]

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        rows = []
        for r in sorted(self.nodes, key=lambda r: (r.level, r.key)):
            node = self.nodes[r]
            if isinstance(node, SplitNode):
                rows.append({"code": r.code(ascii=True), "kind": "split", "dim": node.dim, "theta": list(node.theta)})
            else:
                rows.append({"code": r.code(ascii=True), "kind": "leaf", "logdens": node.logdens})
        out = {
            "format_version": FORMAT_VERSION,
            "type": "hmap_tree",
            "p": self.p,
            "transform": self.transform.to_dict(),
            "nodes": rows,
        }
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "HmapTree":
        try:
            if d.get("type", "hmap_tree") != "hmap_tree":
                raise DataError(f"not a tree file (type={d.get('type')!r})")
            p = int(d["p"])
            nodes = {}
            for row in d["nodes"]:
                r = decode(row["code"], p)
                if row["kind"] == "split":
                    th = row["theta"]
                    nodes[r] = SplitNode(int(row["dim"]), (float(th[0]), float(th[1])))
                elif row["kind"] == "leaf":
                    nodes[r] = LeafNode(float(row["logdens"]))
                else:
                    raise DataError(f"unknown node kind {row['kind']!r}")
            tree = cls(p, nodes, Transform.from_dict(d["transform"]), d.get("meta"))
        except DataError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise DataError(f"corrupt tree record: {exc}") from exc
        check_structure(tree)
        return tree

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "HmapTree":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read tree file {path}: {exc}") from exc
        return cls.from_dict(d)


def build_tree(p, decisions, transform=None, meta=None) -> HmapTree:
    """Assemble a tree from ``{region: (dim, theta) | None}`` decisions.

    ``None`` marks a leaf. Leaf densities are products of ``theta`` along the
    path divided by the leaf volume.
    """
    nodes = {}
    stack = [(Region.root(p), 0.0)]
    while stack:
        region, logmass = stack.pop()
        dec = decisions[region]
        if dec is None:
            nodes[region] = LeafNode(logmass + region.level * LOG2)
            continue
        dim, theta = dec
        nodes[region] = SplitNode(dim, (float(theta[0]), float(theta[1])))
        left, right = region.children(dim)
        stack.append((right, logmass + _safe_log(theta[1])))
        stack.append((left, logmass + _safe_log(theta[0])))
    return HmapTree(p, nodes, transform, meta)


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def check_structure(tree: HmapTree) -> None:
    """Every split node has both children; no orphan nodes."""
    seen = set()
    stack = [tree.root]
    while stack:
        r = stack.pop()
        node = tree.nodes.get(r)
        if node is None:
            raise IntegrityError(f"tree is missing node {r.code()}")
        seen.add(r)
        if isinstance(node, SplitNode):
            if not 0 <= node.dim < tree.p:
                raise IntegrityError(f"bad split dimension {node.dim} at {r.code()}")
            stack.extend(r.children(node.dim))
    if len(seen) != len(tree.nodes):
        raise IntegrityError("tree contains nodes unreachable from the root")


def pc_total_mass(tree: HmapTree, tol: float = 1e-9) -> float:
    """Total leaf mass; raises ``IntegrityError`` if the tree is inconsistent.

    Checks that every split's mass pair sums to one, that each leaf density
    matches the product of splits along its path, and that the total is one.
    """
    check_structure(tree)
    total = 0.0
    stack = [(tree.root, 0.0)]
    masses = []
    while stack:
        r, logmass = stack.pop()
        node = tree.nodes[r]
        if isinstance(node, SplitNode):
            t0, t1 = node.theta
            if t0 < 0 or t1 < 0 or abs(t0 + t1 - 1.0) > 1e-12:
                raise IntegrityError(f"mass split {node.theta} at {r.code()} does not sum to 1")
            left, right = r.children(node.dim)
            stack.append((left, logmass + _safe_log(t0)))
            stack.append((right, logmass + _safe_log(t1)))
        else:
            stored = node.logdens - r.level * LOG2
            if not (stored == logmass or abs(stored - logmass) <= 1e-9 * max(1.0, abs(logmass))):
                raise IntegrityError(f"leaf {r.code()} density disagrees with its path masses")
            masses.append(math.exp(stored))
    total = math.fsum(masses)
    if abs(total - 1.0) > tol:
        raise IntegrityError(f"leaf masses sum to {total!r}, not 1")
    return total


def _descend(tree: HmapTree, g: np.ndarray, ids: np.ndarray):
    """Yield ``(leaf_region, point_ids)`` for integer grid points ``g[ids]``."""
    stack = [(tree.root, ids)]
    while stack:
        r, sel = stack.pop()
        node = tree.nodes[r]
        if isinstance(node, LeafNode):
            yield r, sel
            continue
        j = node.dim
        bit = ((g[sel, j] >> (GRID_DEPTH - r.levels[j] - 1)) & 1).astype(bool)
        left, right = r.children(j)
        if sel[~bit].size:
            stack.append((left, sel[~bit]))
        if sel[bit].size:
            stack.append((right, sel[bit]))


def to_grid(unit: np.ndarray) -> np.ndarray:
    g = np.floor(np.ldexp(unit, GRID_DEPTH)).astype(np.int64)
    np.clip(g, 0, (1 << GRID_DEPTH) - 1, out=g)
    return g


def inside_unit(unit: np.ndarray) -> np.ndarray:
    return np.all((unit >= 0.0) & (unit <= 1.0), axis=1)


def pc_eval_unit(tree: HmapTree, unit) -> np.ndarray:
    """Density in unit-cube coordinates (no Jacobian)."""
    u = np.atleast_2d(np.asarray(unit, dtype=float))
    out = np.zeros(u.shape[0])
    ok = np.flatnonzero(inside_unit(u) & np.all(np.isfinite(u), axis=1))
    if ok.size == 0:
        return out
    g = to_grid(u[ok])
    for leaf, sel in _descend(tree, g, np.arange(ok.size)):
        out[ok[sel]] = math.exp(tree.nodes[leaf].logdens)
    return out


def pc_eval(tree: HmapTree, x) -> np.ndarray:
    """Density at raw-data points ``x`` (shape ``(m, p)``); zero outside the domain."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != tree.p:
        x = x.reshape(-1, tree.p)
    return pc_eval_unit(tree, tree.transform.forward(x)) * tree.transform.jacobian


def leaf_index(tree: HmapTree, unit) -> np.ndarray:
    """Position in ``tree.leaves()`` of the leaf holding each unit-cube point (-1 outside)."""
    u = np.atleast_2d(np.asarray(unit, dtype=float))
    order = {r: i for i, r in enumerate(tree.leaves())}
    out = np.full(u.shape[0], -1, dtype=np.int64)
    ok = np.flatnonzero(inside_unit(u))
    if ok.size:
        g = to_grid(u[ok])
        for leaf, sel in _descend(tree, g, np.arange(ok.size)):
            out[ok[sel]] = order[leaf]
    return out


def pc_sample_unit(tree: HmapTree, seed, m: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    leaves = tree.leaves()
    masses = tree.leaf_masses()
    masses = masses / masses.sum()
    pick = rng.choice(len(leaves), size=m, p=masses)
    lo = np.empty((len(leaves), tree.p))
    hi = np.empty((len(leaves), tree.p))
    for i, r in enumerate(leaves):
        lo[i], hi[i] = r.bounds()
    u = rng.random((m, tree.p))
    return lo[pick] + u * (hi[pick] - lo[pick])


def pc_sample(tree: HmapTree, seed, m: int) -> np.ndarray:
    """Draw ``m`` points in raw data units; deterministic given ``seed``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return tree.transform.inverse(pc_sample_unit(tree, seed, m))


def pc_hellinger_exact(t1: HmapTree, t2: HmapTree) -> float:
    """Exact Hellinger distance between two trees on the same unit cube.

    Overlays the two dyadic partitions; intersections of dyadic boxes are
    dyadic boxes, so the affinity is a finite sum.
    """
    if t1.p != t2.p:
        raise ValueError("trees have different dimensions")
    # half the integral of (sqrt f - sqrt g)^2, exactly zero for equal trees
    terms = []
    for leaf, ld in t1.leaf_items():
        for other, ld2, level in _overlapping_leaves(t2, leaf):
            diff = math.exp(0.5 * ld) - math.exp(0.5 * ld2)
            terms.append(diff * diff * math.ldexp(0.5, -level))
    return math.sqrt(min(math.fsum(terms), 1.0))


def _overlapping_leaves(tree: HmapTree, box: Region):
    """Leaves of ``tree`` intersecting ``box`` with the level of the intersection."""
    stack = [tree.root]
    while stack:
        r = stack.pop()
        node = tree.nodes[r]
        if isinstance(node, LeafNode):
            level = sum(max(a, b) for a, b in zip(r.levels, box.levels))
            yield r, node.logdens, level
            continue
        j = node.dim
        for child in r.children(j):
            k, kb = child.levels[j], box.levels[j]
            if kb >= k:
                if (box.index[j] >> (kb - k)) != child.index[j]:
                    continue
            elif (child.index[j] >> (k - kb)) != box.index[j]:
                continue
            stack.append(child)
