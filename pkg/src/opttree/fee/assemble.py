"""Penalty assembly for the finite element fit.

With ``w_j = mu_j^-2`` and ``Q_j = d_j mu_j`` (``d_j`` the piecewise-constant
density of the simplex's leaf), the fidelity term of simplex ``j`` is
``(mean of its vertex coefficients - d_j)^2``. The smoothness term is
``(mu*_j / mu_j)^2 = 1 + |grad f|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import ConfigError
from .triangulate import Triangulation


@dataclass(frozen=True)
class QP:
    P: sp.csc_matrix        # objective c'Pc + r'c + const
    r: np.ndarray
    const: float
    a: np.ndarray           # equality row: integral of f
    fidelity: tuple         # (P, r, const) of the fidelity part alone
    smoothness: tuple       # (P, const) of the unweighted smoothness part

    def objective(self, c) -> float:
        return float(c @ (self.P @ c) + self.r @ c + self.const)

    def fidelity_value(self, c) -> float:
        P, r, k = self.fidelity
        return float(c @ (P @ c) + r @ c + k)

    def smoothness_value(self, c) -> float:
        P, k = self.smoothness
        return float(c @ (P @ c) + k)


def simplex_gradients(tri: Triangulation) -> np.ndarray:
    """``(S, p, p+1)`` barycentric gradient matrices."""
    v = tri.vertices[tri.simplices]
    m = np.concatenate([v, np.ones(v.shape[:2] + (1,))], axis=2)
    return np.linalg.inv(m)[:, : tri.p, :]


def integral_row(tri: Triangulation) -> np.ndarray:
    """``a_i`` = sum over simplices containing vertex ``i`` of ``mu / (p+1)``."""
    share = np.repeat(tri.volumes / (tri.p + 1), tri.p + 1)
    return np.bincount(tri.simplices.ravel(), weights=share, minlength=tri.n_vertices)


def _scatter(tri: Triangulation, blocks: np.ndarray) -> sp.csc_matrix:
    s = tri.simplices
    k = s.shape[1]
    rows = np.repeat(s, k, axis=1).ravel()
    cols = np.tile(s, (1, k)).ravel()
    n = tri.n_vertices
    return sp.csc_matrix((blocks.ravel(), (rows, cols)), shape=(n, n))


def assemble_qp(tri: Triangulation, leaf_density: np.ndarray, lam: float) -> QP:
    """Build the QP for smoothing weight ``lam``.

    ``leaf_density[i]`` is the unit-cube density of ``tri.leaves[i]``.
    """
    if not lam >= 0 or not math.isfinite(lam):
        raise ConfigError(f"smoothing weight must be finite and >= 0, got {lam}")
    k = tri.p + 1
    dens = np.asarray(leaf_density, dtype=float)[tri.simplex_leaf]
    S = tri.n_simplices
    fid_blocks = np.full((S, k, k), 1.0 / k**2)
    G = simplex_gradients(tri)
    smooth_blocks = np.einsum("sji,sjk->sik", G, G)
    P_fid = _scatter(tri, fid_blocks)
    P_smooth = _scatter(tri, smooth_blocks)
    r = np.bincount(
        tri.simplices.ravel(), weights=np.repeat(-2.0 * dens / k, k), minlength=tri.n_vertices
    )
    c_fid = math.fsum(dens**2)
    P = (P_fid + lam * P_smooth).tocsc()
    P = 0.5 * (P + P.T)
    return QP(
        P=P.tocsc(),
        r=r,
        const=c_fid + lam * S,
        a=integral_row(tri),
        fidelity=(P_fid, r, c_fid),
        smoothness=(P_smooth, float(S)),
    )


def lumped_guess(tri: Triangulation, leaf_density: np.ndarray) -> np.ndarray:
    """Per-vertex mean of the densities of incident leaves, scaled to mass one."""
    n = tri.n_vertices
    pairs = np.unique(
        np.stack([tri.simplices.ravel(), np.repeat(tri.simplex_leaf, tri.p + 1)], axis=1), axis=0
    )
    dens = np.asarray(leaf_density, dtype=float)[pairs[:, 1]]
    total = np.bincount(pairs[:, 0], weights=dens, minlength=n)
    count = np.bincount(pairs[:, 0], minlength=n)
    c = total / count
    return c / (integral_row(tri) @ c)
