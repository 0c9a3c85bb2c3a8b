"""Convex QP over the scaled simplex: ``min c'Pc + r'c`` s.t. ``a'c = 1, c >= 0``.

Primal active-set method. Each iteration minimises over the free variables
with the equality constraint kept, moving until a bound blocks; variables
leave the active set when their bound multiplier is negative. Subproblems
are solved with a sparse LU of the KKT matrix, falling back to an
eigen-decomposition of the reduced Hessian when that matrix is singular.
Large problems are first brought close to the optimum by an interior-point
solve and a primal-dual active-set iteration, so the primal phase only
confirms or polishes the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:
    import clarabel
except ImportError:  # pragma: no cover - optional accelerator
    clarabel = None

from ..errors import ConfigError, ConvergenceError

DEFAULT_TOL = 1e-8
# above this size the active set is seeded by an interior-point solve
WARM_START_SIZE = 400


@dataclass(frozen=True)
class QPResult:
    c: np.ndarray
    objective: float
    residual: float
    iterations: int
    n_active: int


def qp_objective(P, r, c, const: float = 0.0) -> float:
    c = np.asarray(c, dtype=float)
    return float(c @ (P @ c) + r @ c + const)


def _term_scale(H, r, c) -> float:
    """Magnitude of the terms summed into the gradient, for relative tolerances."""
    absH = abs(H) if sp.issparse(H) else np.abs(H)
    return 1.0 + max(float(np.abs(r).max(initial=0.0)), float((absH @ np.abs(c)).max(initial=0.0)))


def kkt_residual(P, r, a, c) -> float:
    """Scaled first-order optimality violation at ``c``.

    Multiplier ``nu`` fits the free gradient by least squares; the result is
    the worst of equality violation, free stationarity and negative bound
    multipliers, relative to the size of the terms making up the gradient.
    """
    g = 2.0 * (P @ c) + r
    free = c > 0
    af = a[free]
    nu = float(af @ g[free] / (af @ af)) if free.any() else 0.0
    mult = g - nu * a
    viol = max(
        abs(float(a @ c) - 1.0),
        float(np.abs(mult[free]).max(initial=0.0)),
        float(np.maximum(-mult[~free], 0.0).max(initial=0.0)),
        float(np.maximum(-c, 0.0).max(initial=0.0)),
    )
    return viol / _term_scale(2.0 * P, r, c)


def _free_step(H, g, a, free):
    """Minimiser ``d`` of ``0.5 d'Hd + g'd`` over ``d_free`` with ``a'd = 0``.

    Returns ``(d, bounded)``. When the reduced problem is unbounded, ``d`` is
    a descent direction of zero curvature and ``bounded`` is False.
    """
    idx = np.flatnonzero(free)
    k = idx.size
    d = np.zeros_like(g)
    if k <= 1:
        return d, True
    Hf = H[idx][:, idx]
    af = a[idx]
    K = sp.bmat([[Hf, sp.csc_matrix(af[:, None])], [sp.csc_matrix(af[None, :]), None]], format="csc")
    rhs = np.concatenate([-g[idx], [0.0]])
    try:
        sol = spla.splu(K, permc_spec="MMD_AT_PLUS_A").solve(rhs)
        if np.all(np.isfinite(sol)) and np.linalg.norm(K @ sol - rhs) <= 1e-9 * (1 + np.linalg.norm(rhs)):
            d[idx] = sol[:k]
            return d, True
    except RuntimeError:
        pass
    # null-space method on the dense reduced problem
    Hd = Hf.toarray()
    Z = scipy.linalg.null_space(af[None, :])
    Hr = Z.T @ Hd @ Z
    gr = Z.T @ g[idx]
    w, V = np.linalg.eigh(0.5 * (Hr + Hr.T))
    proj = V.T @ gr
    flat = w <= 1e-12 * max(1.0, float(np.abs(w).max()))
    if np.any(flat & (np.abs(proj) > 1e-12 * (1 + np.abs(gr).max()))):
        dr = -V[:, flat] @ proj[flat]
        d[idx] = Z @ dr
        return d, False
    dr = -V[:, ~flat] @ (proj[~flat] / w[~flat])
    d[idx] = Z @ dr
    return d, True


def interior_point_guess(P, r, a) -> np.ndarray | None:
    """Approximate minimiser from Clarabel.

    Entries whose bound multiplier exceeds their value are set to zero, so
    the active-set phase starts from the interior-point estimate of the
    optimal active set.
    """
    if clarabel is None:
        return None
    n = r.size
    Pu = sp.triu(2.0 * sp.csc_matrix(P)).tocsc()
    A = sp.vstack([sp.csc_matrix(a[None, :]), -sp.identity(n, format="csc")]).tocsc()
    b = np.concatenate([[1.0], np.zeros(n)])
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_threads = 1
    sol = clarabel.DefaultSolver(Pu, r, A, b, [clarabel.ZeroConeT(1), clarabel.NonnegativeConeT(n)], settings).solve()
    x = np.asarray(sol.x, dtype=float)
    z = np.asarray(sol.z, dtype=float)[1:]
    if x.shape != (n,) or z.shape != (n,) or not np.all(np.isfinite(x)):
        return None
    x = np.where(z > x, 0.0, np.maximum(x, 0.0))
    return x if a @ x > 0 else None


def _kkt_solve(H, r, a, free):
    """Stationary point on ``free`` with the rest fixed at zero, or None if singular."""
    idx = np.flatnonzero(free)
    k = idx.size
    if k == 0:
        return None
    K = sp.bmat([[H[idx][:, idx], sp.csc_matrix(-a[idx][:, None])], [sp.csc_matrix(a[idx][None, :]), None]], format="csc")
    rhs = np.concatenate([-r[idx], [1.0]])
    try:
        sol = spla.splu(K, permc_spec="MMD_AT_PLUS_A").solve(rhs)
    except RuntimeError:
        return None
    if not np.all(np.isfinite(sol)) or np.linalg.norm(K @ sol - rhs) > 1e-9 * (1 + np.linalg.norm(rhs)):
        return None
    c = np.zeros(r.size)
    c[idx] = sol[:k]
    return c, float(sol[k])


def primal_dual_active_set(H, r, a, active, max_iter: int = 50):
    """Semismooth Newton iteration on the bound complementarity.

    Every iteration solves the KKT system for the current active set and then
    swaps all bound violators at once. Returns the KKT point or None when the
    iteration cycles or hits a singular system.
    """
    active = np.asarray(active, dtype=bool).copy()
    seen = set()
    for _ in range(max_iter):
        out = _kkt_solve(H, r, a, ~active)
        if out is None:
            return None
        c, nu = out
        mult = H @ c + r - nu * a
        new = (mult - c) > 0
        if np.array_equal(new, active):
            return np.maximum(c, 0.0)
        key = new.tobytes()
        if key in seen:
            return None
        seen.add(key)
        active = new
    return None


def solve_qp(P, r, a, x0=None, tol: float = DEFAULT_TOL, max_iter: int | None = None) -> QPResult:
    """Minimise ``c'Pc + r'c`` subject to ``a'c = 1`` and ``c >= 0``.

    Parameters
    ----------
    P : (n, n) symmetric positive semidefinite matrix (dense or sparse)
    r : (n,) linear term
    a : (n,) positive equality row
    x0 : starting point, rescaled onto the constraint. Problems larger than
        ``WARM_START_SIZE`` start from an interior-point estimate instead.
    tol : KKT residual accepted at termination.

    Raises
    ------
    ConvergenceError
        After ``max_iter`` iterations, carrying the best iterate and its residual.
    """
    P = sp.csc_matrix(P)
    r = np.asarray(r, dtype=float)
    a = np.asarray(a, dtype=float)
    n = r.size
    if P.shape != (n, n) or a.shape != (n,):
        raise ConfigError("QP dimensions do not match")
    if np.any(a <= 0):
        raise ConfigError("equality row must be positive")
    H = (P + P.T).tocsc()  # Hessian of c'Pc
    if n > WARM_START_SIZE:
        x0 = _first_not_none(interior_point_guess(P, r, a), x0)
        if x0 is not None:
            x0 = _first_not_none(primal_dual_active_set(H, r, a, np.asarray(x0) <= 0), x0)
    if x0 is None:
        c = np.full(n, 1.0 / a.sum())
    else:
        c = np.maximum(np.asarray(x0, dtype=float), 0.0)
        c = c / (a @ c)
    max_iter = max_iter or 20 * n + 100
    active = c <= 0
    c[active] = 0.0
    best = (np.inf, c.copy())
    for it in range(1, max_iter + 1):
        g = H @ c + r
        d, bounded = _free_step(H, g, a, ~active)
        scale = 1.0 + np.abs(c).max()
        if bounded and np.abs(d).max() <= 1e-13 * scale:
            free = ~active
            nu = float(a[free] @ g[free] / (a[free] @ a[free]))
            mult = g - nu * a
            mult[free] = 0.0
            j = int(np.argmin(mult))
            if mult[j] >= -tol * _term_scale(H, r, c):
                res = kkt_residual(P, r, a, c)
                if res <= tol:
                    return QPResult(c, qp_objective(P, r, c), res, it, int(active.sum()))
                # fall through: polish with a tighter step on the same set
            else:
                active[j] = False
                continue
        shrink = d < 0
        ratio = np.full(n, np.inf)
        ratio[shrink] = -c[shrink] / d[shrink]
        j = int(np.argmin(ratio))
        step = ratio[j] if not bounded else min(1.0, ratio[j])
        if not np.isfinite(step):
            raise ConvergenceError("QP is unbounded below", c, np.inf)
        c = c + step * d
        if step < 1.0 or not bounded:
            c[j] = 0.0
            active[j] = True
        c[c < 0] = 0.0
        c = c / (a @ c)
        obj = qp_objective(P, r, c)
        if obj < best[0]:
            best = (obj, c.copy())
        if bounded and step >= 1.0 and kkt_residual(P, r, a, c) <= tol:
            return QPResult(c, obj, kkt_residual(P, r, a, c), it, int(active.sum()))
    res = kkt_residual(P, r, a, best[1])
    raise ConvergenceError(f"QP did not converge in {max_iter} iterations (residual {res:.3g})", best[1], res)


def _first_not_none(*xs):
    return next((x for x in xs if x is not None), None)


def brute_force_qp(P, r, a) -> tuple[np.ndarray, float]:
    """Exact minimiser by enumerating every free set (small problems only)."""
    P = np.asarray(P.toarray() if sp.issparse(P) else P, dtype=float)
    r = np.asarray(r, dtype=float)
    a = np.asarray(a, dtype=float)
    n = r.size
    if n > 12:
        raise ConfigError("brute force is limited to 12 variables")
    H = P + P.T
    best_c, best_obj = None, np.inf
    for mask in range(1, 1 << n):
        idx = [i for i in range(n) if mask >> i & 1]
        k = len(idx)
        K = np.zeros((k + 1, k + 1))
        K[:k, :k] = H[np.ix_(idx, idx)]
        K[:k, k] = K[k, :k] = a[idx]
        rhs = np.concatenate([-r[idx], [1.0]])
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        if np.linalg.norm(K @ sol - rhs) > 1e-8 * (1 + np.linalg.norm(rhs)):
            continue
        c = np.zeros(n)
        c[idx] = sol[:k]
        if c.min() < -1e-12:
            continue
        c = np.maximum(c, 0.0)
        obj = float(c @ P @ c + r @ c)
        if obj < best_obj:
            best_c, best_obj = c, obj
    return best_c, best_obj
