"""Per-simplex geometry: volume, integral of a linear function, top-face volume."""

from __future__ import annotations

import math

import numpy as np

from ..errors import DegenerateSimplexError

# relative to the bounding-box volume of the simplex
DEGENERATE_TOL = 1e-13


def _as_simplex(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[0] != v.shape[1] + 1:
        raise ValueError(f"a p-simplex needs p+1 points in R^p, got shape {v.shape}")
    return v


def simplex_volume(vertices) -> float:
    """``|det [v_i, 1]| / p!`` for the ``(p+1) x p`` vertex array."""
    v = _as_simplex(vertices)
    p = v.shape[1]
    m = np.hstack([v, np.ones((p + 1, 1))])
    vol = abs(np.linalg.det(m)) / math.factorial(p)
    scale = float(np.prod(np.ptp(v, axis=0))) / math.factorial(p)
    if not vol > DEGENERATE_TOL * max(scale, 1e-300):
        raise DegenerateSimplexError(f"simplex has zero volume: {v.tolist()}")
    return vol


def simplex_integral(volume: float, c) -> float:
    """Integral of the linear interpolant of vertex values ``c`` over the simplex."""
    c = np.asarray(c, dtype=float)
    return volume * float(c.sum()) / c.size


def barycentric_gradients(vertices) -> np.ndarray:
    """``G`` (``p x (p+1)``) with ``grad f = G @ c`` for the interpolant of ``c``."""
    v = _as_simplex(vertices)
    p = v.shape[1]
    m = np.hstack([v, np.ones((p + 1, 1))])
    try:
        inv = np.linalg.inv(m)
    except np.linalg.LinAlgError as exc:
        raise DegenerateSimplexError(f"simplex has zero volume: {v.tolist()}") from exc
    # barycentric coordinates b = [x, 1] @ inv, so row j of inv[:p] is d b / d x_j
    return inv[:p]


def top_face_quadratic(vertices) -> tuple[np.ndarray, float]:
    """Decompose the squared top-face volume as ``c @ Q @ c + k``.

    The graph of the interpolant over the simplex is a p-simplex in
    ``R^(p+1)``; its squared volume is ``mu^2 (1 + |grad f|^2)``.
    """
    mu = simplex_volume(vertices)
    g = barycentric_gradients(vertices)
    return mu * mu * (g.T @ g), mu * mu


def top_face_sq(vertices, c) -> float:
    """Squared volume ``mu*^2`` of the density graph over the simplex."""
    q, k = top_face_quadratic(vertices)
    c = np.asarray(c, dtype=float)
    return float(c @ q @ c) + k


def top_face_sq_gram(vertices, c) -> float:
    """Same quantity from the Gram determinant of the lifted edge vectors."""
    v = _as_simplex(vertices)
    p = v.shape[1]
    lifted = np.hstack([v, np.asarray(c, dtype=float)[:, None]])
    e = (lifted[1:] - lifted[0]).T
    return float(np.linalg.det(e.T @ e)) / math.factorial(p) ** 2
