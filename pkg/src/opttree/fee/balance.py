"""2:1 grading of a dyadic partition.

Two leaves are facet neighbours when their closed boxes meet in a set of
dimension ``p - 1``. The partition is graded when facet neighbours differ by
at most one level in every dimension. Grading refines coarse leaves without
changing the density they carry.
"""

from __future__ import annotations

import numpy as np

from ..errors import DepthCapError
from ..geometry import DEFAULT_DEPTH_CAP, Region
from ..pcdensity import HmapTree, LeafNode, SplitNode


def integer_boxes(leaves: list[Region], resolution=None):
    """Integer corner arrays ``lo, hi`` (``L x p``) on a per-dimension grid.

    ``resolution[j]`` is the grid level in dimension ``j`` (default: the
    finest leaf level); box ``j``-extents become ``[lo, hi]`` in units of
    ``2^-resolution[j]``.
    """
    levels = np.array([r.levels for r in leaves], dtype=np.int64)
    index = np.array([r.index for r in leaves], dtype=np.int64)
    if resolution is None:
        resolution = levels.max(axis=0)
    shift = np.asarray(resolution, dtype=np.int64) - levels
    lo = index << shift
    hi = (index + 1) << shift
    return lo, hi, np.asarray(resolution, dtype=np.int64)


def facet_neighbours(lo: np.ndarray, hi: np.ndarray) -> list[tuple[int, int, int]]:
    """All ``(a, b, d)`` with leaf ``b`` adjacent to leaf ``a`` across ``a``'s upper ``d``-face."""
    n, p = lo.shape
    out = []
    for d in range(p):
        touch = hi[:, d][:, None] == lo[:, d][None, :]
        ok = touch
        for j in range(p):
            if j != d:
                ok = ok & (lo[:, j][:, None] < hi[:, j][None, :]) & (lo[:, j][None, :] < hi[:, j][:, None])
        a, b = np.nonzero(ok)
        out.extend(zip(a.tolist(), b.tolist(), [d] * a.size))
    return out


def is_graded(leaves: list[Region]) -> bool:
    if len(leaves) < 2:
        return True
    lo, hi, _ = integer_boxes(leaves)
    lev = np.array([r.levels for r in leaves])
    return all(np.abs(lev[a] - lev[b]).max() <= 1 for a, b, _ in facet_neighbours(lo, hi))


def balance_partition(tree: HmapTree, depth_cap: int | None = None) -> HmapTree:
    """Refine ``tree`` until its leaves are 2:1 graded.

    Returns a new tree computing the same density; added splits carry an
    even mass split.
    """
    if depth_cap is None:
        depth_cap = tree.meta.get("prior", {}).get("depth_cap", DEFAULT_DEPTH_CAP)
    nodes = dict(tree.nodes)
    leaves = tree.leaves()
    resolution = np.array([r.levels for r in leaves]).max(axis=0)
    while len(leaves) > 1:
        lo, hi, _ = integer_boxes(leaves, resolution)
        lev = np.array([r.levels for r in leaves])
        want = {}
        for a, b, _ in facet_neighbours(lo, hi):
            diff = lev[b] - lev[a]
            for coarse, gap in ((a, diff), (b, -diff)):
                j = int(np.argmax(gap))
                if gap[j] > 1 and gap[j] > want.get(coarse, (None, 0))[1]:
                    want[coarse] = (j, int(gap[j]))
        if not want:
            break
        for i, (j, _) in want.items():
            region = leaves[i]
            if region.levels[j] + 1 > depth_cap:
                raise DepthCapError(
                    f"grading needs level {region.levels[j] + 1} in dimension {j}; "
                    f"rerun with a larger depth cap (now {depth_cap})"
                )
            node = nodes[region]
            nodes[region] = SplitNode(j, (0.5, 0.5))
            for child in region.children(j):
                nodes[child] = LeafNode(node.logdens)
        leaves = sorted(r for r, n in nodes.items() if isinstance(n, LeafNode))
    meta = dict(tree.meta)
    meta["graded"] = True
    return HmapTree(tree.p, nodes, tree.transform, meta)
