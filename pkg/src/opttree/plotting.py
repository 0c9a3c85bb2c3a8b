"""Deterministic SVG output: partition maps for p = 2, density curves for p = 1."""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError
from .pcdensity import HmapTree

SIZE = 400
MARGIN = 20


def _num(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".")


def _header(width: int, height: int) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
    ]


def _gray(values: np.ndarray) -> list[str]:
    """Map values to gray levels, darker for larger; constant input maps to light gray."""
    finite = np.isfinite(values)
    out = []
    lo = values[finite].min() if finite.any() else 0.0
    hi = values[finite].max() if finite.any() else 0.0
    for v in values:
        if not math.isfinite(v):
            level = 255
        elif hi > lo:
            level = int(round(235 - 215 * (v - lo) / (hi - lo)))
        else:
            level = 200
        out.append(f"#{level:02x}{level:02x}{level:02x}")
    return out


def _xy(u, v) -> tuple[float, float]:
    return MARGIN + u * SIZE, MARGIN + (1.0 - v) * SIZE


def partition_svg(tree: HmapTree, fill: bool = True) -> str:
    """One stroked rectangle per leaf, in unit-square coordinates."""
    if tree.p != 2:
        raise ConfigError(f"partition plots need p = 2, got p = {tree.p}")
    items = tree.leaf_items()
    colours = _gray(np.array([ld for _, ld in items])) if fill else ["none"] * len(items)
    side = SIZE + 2 * MARGIN
    lines = _header(side, side)
    for (region, _), colour in zip(items, colours):
        (x0, y0), (x1, y1) = _corners(region)
        px, py = _xy(x0, y1)
        lines.append(
            f'<rect x="{_num(px)}" y="{_num(py)}" width="{_num((x1 - x0) * SIZE)}" '
            f'height="{_num((y1 - y0) * SIZE)}" fill="{colour}" stroke="black" stroke-width="0.5"/>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _corners(region) -> tuple[tuple[float, float], tuple[float, float]]:
    lo, hi = region.bounds()
    return (float(lo[0]), float(lo[1])), (float(hi[0]), float(hi[1]))


def triangulation_svg(fee, fill: bool = True) -> str:
    """One stroked triangle per simplex of a 2-D finite element density."""
    if fee.p != 2:
        raise ConfigError(f"triangulation plots need p = 2, got p = {fee.p}")
    simp = fee.tri.simplices
    values = fee.coeffs[simp].mean(axis=1)
    colours = _gray(values) if fill else ["none"] * len(simp)
    side = SIZE + 2 * MARGIN
    lines = _header(side, side)
    for s, colour in zip(simp, colours):
        pts = " ".join(f"{_num(x)},{_num(y)}" for x, y in (_xy(*fee.tri.vertices[i]) for i in s))
        lines.append(f'<polygon points="{pts}" fill="{colour}" stroke="black" stroke-width="0.3"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def density_svg(density, grid: int = 512) -> str:
    """Polyline of a 1-D density (tree or finite element) in raw units."""
    if density.p != 1:
        raise ConfigError(f"density curves need p = 1, got p = {density.p}")
    u = (np.arange(grid) + 0.5) / grid
    x = density.transform.inverse(u[:, None])
    y = np.asarray(density(x), dtype=float)
    top = y.max() if y.max() > 0 else 1.0
    side = SIZE + 2 * MARGIN
    lines = _header(side, side)
    x0, y0 = _xy(0.0, 0.0)
    x1, _ = _xy(1.0, 0.0)
    lines.append(f'<line x1="{_num(x0)}" y1="{_num(y0)}" x2="{_num(x1)}" y2="{_num(y0)}" stroke="black"/>')
    pts = " ".join(f"{_num(px)},{_num(py)}" for px, py in (_xy(a, b / top) for a, b in zip(u, y)))
    lines.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="1"/>')
    lines.append(f"<!-- max density {y.max():.6g} -->")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def plot_svg(obj, fill: bool = True) -> str:
    """Partition map for 2-D trees, triangulation for 2-D FEE, curve for 1-D."""
    if obj.p == 1:
        return density_svg(obj)
    if obj.p != 2:
        raise ConfigError(f"plots are available for p <= 2 only, got p = {obj.p}")
    if isinstance(obj, HmapTree):
        return partition_svg(obj, fill)
    return triangulation_svg(obj, fill)
