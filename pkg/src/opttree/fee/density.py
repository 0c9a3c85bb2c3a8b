"""Continuous piecewise-linear densities fitted over a triangulated partition."""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np

from ..dataset import Transform
from ..errors import DataError, IntegrityError
from ..pcdensity import HmapTree, inside_unit, leaf_index
from .assemble import assemble_qp, integral_row, lumped_guess
from .balance import balance_partition
from .qp import DEFAULT_TOL, solve_qp
from .triangulate import Triangulation, simplex_volumes, triangulate

FORMAT_VERSION = 1
DEFAULT_LAMBDA = 1e-3
MASS_TOL = 1e-6
_BARY_TOL = 1e-9


class FeeDensity:
    """``f(x) = sum_i c_i phi_i(x)`` on a triangulation of the unit cube.

    ``partition`` is the graded tree whose leaves are ``tri.leaves``; it is
    used to locate points. Values are reported in raw data units.
    """

    def __init__(self, tri: Triangulation, coeffs, partition: HmapTree, lam: float, meta: dict | None = None):
        self.tri = tri
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.partition = partition
        self.lam = float(lam)
        self.meta = dict(meta or {})
        self.transform: Transform = partition.transform
        if self.coeffs.shape != (tri.n_vertices,):
            raise IntegrityError("one coefficient per vertex is required")
        if np.any(self.coeffs < 0):
            raise IntegrityError("coefficients must be nonnegative")
        v = tri.vertices[tri.simplices]
        m = np.concatenate([v, np.ones(v.shape[:2] + (1,))], axis=2)
        self._inv = np.linalg.inv(m)
        self._members = tri.leaf_simplices()

    @property
    def p(self) -> int:
        return self.tri.p

    def simplex_masses(self) -> np.ndarray:
        return self.tri.volumes * self.coeffs[self.tri.simplices].mean(axis=1)

    def total_mass(self) -> float:
        return math.fsum(self.simplex_masses())

    def __call__(self, x) -> np.ndarray:
        return fee_eval(self, x)

    def sample(self, seed, m: int) -> np.ndarray:
        return fee_sample(self, seed, m)

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "type": "fee",
            "p": self.p,
            "transform": self.transform.to_dict(),
            "lambda": self.lam,
            "vertices": self.tri.vertices.tolist(),
            "simplices": self.tri.simplices.tolist(),
            "simplex_leaf": self.tri.simplex_leaf.tolist(),
            "coeffs": self.coeffs.tolist(),
            "partition": self.partition.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeeDensity":
        try:
            if d.get("type") != "fee":
                raise DataError(f"not an FEE file (type={d.get('type')!r})")
            partition = HmapTree.from_dict(d["partition"])
            vertices = np.array(d["vertices"], dtype=float).reshape(-1, int(d["p"]))
            simplices = np.array(d["simplices"], dtype=np.int64).reshape(-1, int(d["p"]) + 1)
            tri = Triangulation(
                p=int(d["p"]),
                vertices=vertices,
                simplices=simplices,
                simplex_leaf=np.array(d["simplex_leaf"], dtype=np.int64),
                leaves=partition.leaves(),
            )
            tri.volumes = simplex_volumes(vertices, simplices)
            return cls(tri, d["coeffs"], partition, float(d["lambda"]), d.get("meta"))
        except DataError:
            raise
        except (KeyError, TypeError, ValueError, IndexError, IntegrityError, np.linalg.LinAlgError) as exc:
            raise DataError(f"corrupt FEE record: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "FeeDensity":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read FEE file {path}: {exc}") from exc
        return cls.from_dict(d)


def fee_fit(tree: HmapTree, lam: float = DEFAULT_LAMBDA, tol: float = DEFAULT_TOL) -> FeeDensity:
    """Smooth a piecewise-constant tree into a continuous piecewise-linear density."""
    t0 = time.perf_counter()
    graded = balance_partition(tree)
    leaves = graded.leaves()
    tri = triangulate(leaves)
    dens = np.exp([graded.nodes[r].logdens for r in leaves])
    qp = assemble_qp(tri, dens, lam)
    guess = lumped_guess(tri, dens)
    res = solve_qp(qp.P, qp.r, qp.a, x0=guess, tol=tol)
    fee = FeeDensity(tri, res.c, graded, lam)
    mass = fee.total_mass()
    if abs(mass - 1.0) > MASS_TOL:
        raise IntegrityError(f"fitted density integrates to {mass!r}")
    fee.meta.update({
        "leaves": len(leaves),
        "leaves_before_grading": tree.n_leaves,
        "vertices": tri.n_vertices,
        "simplices": tri.n_simplices,
        "objective": res.objective + qp.const,
        "fidelity": qp.fidelity_value(res.c),
        "smoothness": qp.smoothness_value(res.c),
        "initial_objective": qp.objective(guess),
        "kkt_residual": res.residual,
        "iterations": res.iterations,
        "mass": mass,
        "seconds": time.perf_counter() - t0,
    })
    return fee


def _barycentric(fee: FeeDensity, simplex_ids: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``(points, simplices, p+1)`` barycentric coordinates."""
    hom = np.hstack([u, np.ones((u.shape[0], 1))])
    return np.einsum("nk,skl->nsl", hom, fee._inv[simplex_ids])


def locate(fee: FeeDensity, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Simplex id and barycentric coordinates of unit-cube points (-1 outside)."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    sid = np.full(u.shape[0], -1, dtype=np.int64)
    bary = np.zeros((u.shape[0], fee.p + 1))
    leaf = leaf_index(fee.partition, u)
    order = np.argsort(leaf, kind="stable")
    bounds = np.searchsorted(leaf[order], np.arange(-1, len(fee.tri.leaves) + 1))
    chunk = max(1, 2_000_000 // (fee.p + 1))
    for i in range(len(fee.tri.leaves)):
        pts = order[bounds[i + 1]:bounds[i + 2]]
        if pts.size == 0:
            continue
        members = fee._members[i]
        step = max(1, chunk // members.size)
        for s in range(0, pts.size, step):
            sel = pts[s:s + step]
            b = _barycentric(fee, members, u[sel])
            worst = b.min(axis=2)
            k = np.argmax(worst >= -_BARY_TOL, axis=1)
            missing = worst[np.arange(sel.size), k] < -_BARY_TOL
            k[missing] = np.argmax(worst[missing], axis=1)
            sid[sel] = members[k]
            bary[sel] = b[np.arange(sel.size), k]
    return sid, bary


def fee_eval_unit(fee: FeeDensity, u) -> np.ndarray:
    u = np.atleast_2d(np.asarray(u, dtype=float))
    out = np.zeros(u.shape[0])
    ok = np.flatnonzero(inside_unit(u) & np.all(np.isfinite(u), axis=1))
    if ok.size:
        sid, bary = locate(fee, u[ok])
        val = np.einsum("nk,nk->n", bary, fee.coeffs[fee.tri.simplices[sid]])
        out[ok] = np.maximum(val, 0.0)
    return out


def fee_eval(fee: FeeDensity, x) -> np.ndarray:
    """Density at raw-data points; zero outside the domain."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != fee.p:
        x = x.reshape(-1, fee.p)
    return fee_eval_unit(fee, fee.transform.forward(x)) * fee.transform.jacobian


def fee_sample(fee: FeeDensity, seed, m: int) -> np.ndarray:
    """Draw ``m`` raw-unit points: simplex by mass, then rejection within it."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    masses = fee.simplex_masses()
    simp = fee.tri.simplices
    chosen = rng.choice(simp.shape[0], size=m, p=masses / masses.sum())
    coeffs = fee.coeffs[simp[chosen]]
    top = coeffs.max(axis=1)
    out = np.empty((m, fee.p))
    # rejected draws are retried inside the same simplex
    pending = np.arange(m)
    while pending.size:
        b = rng.dirichlet(np.ones(fee.p + 1), size=pending.size)
        val = np.einsum("nk,nk->n", b, coeffs[pending])
        keep = rng.random(pending.size) * top[pending] <= val
        done = pending[keep]
        out[done] = np.einsum("nk,nkj->nj", b[keep], fee.tri.vertices[simp[chosen[done]]])
        pending = pending[~keep]
    return fee.transform.inverse(out)


def check_mass(fee: FeeDensity) -> float:
    """Integral via the equality row; raises if it is not one."""
    total = float(integral_row(fee.tri) @ fee.coeffs)
    if abs(total - 1.0) > MASS_TOL:
        raise IntegrityError(f"density integrates to {total!r}")
    return total
