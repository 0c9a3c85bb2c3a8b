"""Exact OPT inference: the marginal-likelihood recursion and its posterior.

For a region ``A`` holding ``n`` samples the marginal likelihood satisfies

    Phi(A) = rho * mu(A)^-n
             + (1 - rho) * sum_j lambda_j * D(n_j + alpha) / D(alpha) * Phi(A_j1) * Phi(A_j2)

with ``D(t) = prod Gamma(t_i) / Gamma(sum t_i)``. Everything is evaluated in
log space. Empty regions are closed with ``Phi = 1`` in every mode. Regions
holding one sample are closed with ``mu(A)^-1``, which is exact when the
Dirichlet parameters are symmetric; asymmetric priors recurse instead.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .dataset import SampleSet
from .errors import ConfigError, IntegrityError, ResourceError
from .geometry import DEFAULT_DEPTH_CAP, Region, check_depth_cap

LOG2 = math.log(2.0)
GRID_DEPTH = 60
MODES = ("cached", "depth-first", "ni")

sys.setrecursionlimit(max(sys.getrecursionlimit(), 20000))


@dataclass(frozen=True)
class OptPrior:
    """Hyperparameters shared by every region.

    ``rho`` is the stopping probability, ``alpha`` the Dirichlet parameters of
    a binary split, and selection weights are uniform over the dimensions that
    can still be split. ``min_count`` and ``min_volume`` only act in ``ni``
    mode (or when a caller asks for thresholds explicitly).
    """

    rho: float = 0.5
    alpha: tuple[float, float] = (0.5, 0.5)
    depth_cap: int = DEFAULT_DEPTH_CAP
    min_count: int = 5
    min_volume: float = 2.0 ** -30

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise ConfigError(f"rho must lie strictly between 0 and 1, got {self.rho}")
        alpha = tuple(float(a) for a in np.broadcast_to(self.alpha, (2,)))
        if any(not a > 0 for a in alpha):
            raise ConfigError(f"Dirichlet parameters must be positive, got {self.alpha}")
        object.__setattr__(self, "alpha", alpha)
        check_depth_cap(self.depth_cap)
        if self.min_count < 0:
            raise ConfigError(f"min_count must be >= 0, got {self.min_count}")
        if not self.min_volume > 0:
            raise ConfigError(f"min_volume must be > 0, got {self.min_volume}")

    def selection_weights(self, levels: Iterable[int]) -> np.ndarray:
        avail = np.array([k < self.depth_cap for k in levels], dtype=float)
        total = avail.sum()
        return avail / total if total else avail

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "alpha": list(self.alpha),
            "depth_cap": self.depth_cap,
            "min_count": self.min_count,
            "min_volume": self.min_volume,
        }


@dataclass(frozen=True)
class PhiRecord:
    """Marginal likelihood and posterior OPT parameters of one region."""

    region: Region
    logphi: float
    rho_post: float
    lambda_post: np.ndarray
    alpha_post: np.ndarray
    n: int
    terminal: bool = False

    def to_dict(self) -> dict:
        return {
            "logphi": self.logphi,
            "rho_post": self.rho_post,
            "lambda_post": self.lambda_post.tolist(),
            "alpha_post": self.alpha_post.tolist(),
            "n": self.n,
        }


class PhiCache:
    """Region-keyed store of ``log Phi`` values with hit/miss counters.

    Only ``log Phi`` is stored per region; full records are rebuilt on demand
    from the cached children, which keeps large fits within memory.
    """

    def __init__(self):
        self.store: dict[tuple, float] = {}
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self.store)

    def __contains__(self, region: Region) -> bool:
        return region.key in self.store

    def get(self, region: Region) -> float | None:
        return self.store.get(region.key)

    def insert(self, region: Region, logphi: float) -> float:
        key = region.key
        old = self.store.get(key)
        if old is None:
            self.store[key] = logphi
            return logphi
        if not _close(old, logphi, 1e-12):
            raise IntegrityError(
                f"cache conflict for {region.code()}: stored {old!r}, new {logphi!r}"
            )
        return old

    def clear(self) -> None:
        self.store.clear()


def _close(a: float, b: float, rtol: float) -> bool:
    return abs(a - b) <= rtol * max(abs(a), abs(b), 1.0)


def log_uniform_likelihood(region: Region, count: int) -> float:
    """Log-likelihood of ``count`` points uniform on ``region``: ``-n log mu(A)``."""
    if count < 0:
        raise ConfigError("count must be >= 0")
    return count * region.level * LOG2


def log_D(t) -> float:
    """``log( prod Gamma(t_i) / Gamma(sum t_i) )`` via log-gamma."""
    t = [float(v) for v in np.ravel(t)]
    if any(not v > 0 for v in t):
        raise ConfigError(f"log_D needs positive entries, got {t}")
    return sum(math.lgamma(v) for v in t) - math.lgamma(sum(t))


def _logsumexp(terms: list[float]) -> float:
    m = max(terms)
    if m == -math.inf:
        return m
    return m + math.log(math.fsum(math.exp(t - m) for t in terms))


class PhiEngine:
    """Evaluates the recursion for one dataset.

    Parameters
    ----------
    samples : SampleSet
    prior : OptPrior
    mode : {"cached", "depth-first", "ni"}
        ``cached`` memoizes every region, ``depth-first`` never memoizes, and
        ``ni`` memoizes and additionally closes regions with fewer than
        ``prior.min_count`` samples or volume below ``prior.min_volume``.
    horizon : int, optional
        Absolute tree level at which regions are closed with the uniform
        likelihood (limited lookahead).
    thresholds : bool, optional
        Force the count/volume closure on or off regardless of ``mode``.
    time_budget : float, optional
        Wall-clock seconds before a ``ResourceError``.
    max_regions : int, optional
        Cache size before a ``ResourceError``.
    """

    def __init__(
        self,
        samples: SampleSet,
        prior: OptPrior | None = None,
        mode: str = "cached",
        horizon: int | None = None,
        thresholds: bool | None = None,
        time_budget: float | None = None,
        max_regions: int | None = None,
    ):
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
        self.samples = samples
        self.prior = prior or OptPrior()
        self.mode = mode
        self.p = samples.p
        self.horizon = horizon
        use_thresholds = (mode == "ni") if thresholds is None else thresholds
        self._min_count = self.prior.min_count if use_thresholds else 0
        # regions with level > this have volume below min_volume
        self._max_level = (
            math.floor(-math.log2(self.prior.min_volume)) if use_thresholds else None
        )
        g = samples.grid(GRID_DEPTH)
        self._cols = [np.ascontiguousarray(g[:, j]) for j in range(self.p)]
        self.cache = PhiCache() if mode != "depth-first" else None
        self._memo = self.cache.store if self.cache is not None else None
        a1, a2 = self.prior.alpha
        self._a1, self._a2 = a1, a2
        self._closed_n = 1 if a1 == a2 else 0
        self._log_d_prior = log_D((a1, a2))
        self._log_rho = math.log(self.prior.rho)
        self._log_1mrho = math.log1p(-self.prior.rho)
        self._cap = self.prior.depth_cap
        self._log_lambda = {}
        self.expansions = 0
        self.max_level_seen = 0
        self._time_budget = time_budget
        self._max_regions = max_regions
        self._t0 = time.perf_counter()

    # -- configuration helpers -------------------------------------------------

    def reset(self, horizon: int | None = None) -> None:
        """Drop memoized values and set a new lookahead horizon."""
        if self.cache is not None:
            self.cache.clear()
        self.horizon = horizon

    def _avail(self, lev: tuple) -> tuple[int, ...]:
        cap = self._cap
        return tuple(j for j, k in enumerate(lev) if k < cap)

    def _loglam(self, navail: int) -> float:
        v = self._log_lambda.get(navail)
        if v is None:
            v = self._log_lambda[navail] = -math.log(navail)
        return v

    def is_closed(self, lev: tuple, n: int) -> bool:
        """Whether a region is evaluated with the uniform closed form."""
        if n <= self._closed_n:
            return True
        level = sum(lev)
        if self.horizon is not None and level >= self.horizon:
            return True
        if n < self._min_count:
            return True
        if self._max_level is not None and level > self._max_level:
            return True
        return not any(k < self._cap for k in lev)

    def _check_budget(self) -> None:
        if self._time_budget is not None and time.perf_counter() - self._t0 > self._time_budget:
            raise ResourceError(
                f"time budget of {self._time_budget:g}s exceeded after {self.expansions} expansions"
            )
        if self._max_regions is not None and self._memo is not None and len(self._memo) > self._max_regions:
            raise ResourceError(f"cache grew beyond {self._max_regions} regions")

    # -- recursion ----------------------------------------------------------------

    def _logphi(self, lev: tuple, idx: tuple, members: np.ndarray) -> float:
        n = members.size
        level = sum(lev)
        if level > self.max_level_seen:
            self.max_level_seen = level
        if n <= self._closed_n:
            return n * level * LOG2
        memo = self._memo
        if memo is not None:
            key = lev + idx
            v = memo.get(key)
            if v is not None:
                self.cache.hits += 1
                return v
            self.cache.misses += 1
        if self.is_closed(lev, n):
            v = n * level * LOG2
        else:
            v = self._expand(lev, idx, members, n, level)[0]
        if memo is not None:
            memo[key] = v
        return v

    def _expand(self, lev, idx, members, n, level):
        self.expansions += 1
        if not self.expansions & 0xFFF:
            self._check_budget()
        avail = self._avail(lev)
        loglam = self._loglam(len(avail))
        base = self._log_1mrho + loglam - self._log_d_prior
        a1, a2 = self._a1, self._a2
        lg = math.lgamma
        stop = self._log_rho + n * level * LOG2
        splits = []
        counts = []
        for j in avail:
            k = lev[j]
            bit = (self._cols[j][members] >> (GRID_DEPTH - k - 1)) & 1
            mask = bit.astype(bool)
            right = members[mask]
            left = members[~mask]
            nr = right.size
            nl = n - nr
            clev = lev[:j] + (k + 1,) + lev[j + 1:]
            s = idx[j] << 1
            lphi = self._logphi(clev, idx[:j] + (s,) + idx[j + 1:], left)
            rphi = self._logphi(clev, idx[:j] + (s + 1,) + idx[j + 1:], right)
            logd = lg(nl + a1) + lg(nr + a2) - lg(n + a1 + a2)
            splits.append(base + logd + lphi + rphi)
            counts.append((nl, nr))
        logphi = _logsumexp([stop] + splits)
        return logphi, stop, splits, avail, counts

    # -- public API ------------------------------------------------------------

    def logphi(self, region: Region | None = None, members: np.ndarray | None = None) -> float:
        region = region or Region.root(self.p)
        if members is None:
            members = self.members(region)
        return self._logphi(region.levels, region.index, np.asarray(members, dtype=np.int64))

    def members(self, region: Region) -> np.ndarray:
        mask = np.ones(self.samples.n, dtype=bool)
        for j, (k, s) in enumerate(zip(region.levels, region.index)):
            mask &= (self._cols[j] >> (GRID_DEPTH - k)) == s
        return np.flatnonzero(mask).astype(np.int64)

    def record(self, region: Region | None = None, members: np.ndarray | None = None) -> PhiRecord:
        """Posterior parameters of ``region``; children come from the cache if present."""
        region = region or Region.root(self.p)
        if members is None:
            members = self.members(region)
        members = np.asarray(members, dtype=np.int64)
        lev, idx = region.levels, region.index
        n = members.size
        level = sum(lev)
        prior = self.prior
        alpha = np.array(prior.alpha)
        if self.is_closed(lev, n):
            lam = prior.selection_weights(lev)
            counts = self._counts(lev, members)
            return PhiRecord(
                region,
                n * level * LOG2,
                prior.rho,
                lam,
                alpha[None, :] + counts,
                n,
                terminal=True,
            )
        key = lev + idx
        logphi, stop, splits, avail, counts = self._expand(lev, idx, members, n, level)
        if self._memo is not None:
            old = self._memo.get(key)
            if old is not None and not _close(old, logphi, 1e-12):
                raise IntegrityError(f"recomputed log Phi of {region.code()} disagrees with cache")
            self._memo[key] = logphi
        lam = np.zeros(self.p)
        sp = np.array(splits)
        w = np.exp(sp - sp.max())
        lam[list(avail)] = w / w.sum()
        full_counts = self._counts(lev, members)
        return PhiRecord(
            region,
            logphi,
            float(math.exp(stop - logphi)),
            lam,
            alpha[None, :] + full_counts,
            n,
            terminal=False,
        )

    def _counts(self, lev, members) -> np.ndarray:
        out = np.zeros((self.p, 2))
        n = members.size
        for j, k in enumerate(lev):
            if k >= GRID_DEPTH:
                out[j] = (n, 0)
                continue
            nr = int(((self._cols[j][members] >> (GRID_DEPTH - k - 1)) & 1).sum())
            out[j] = (n - nr, nr)
        return out

    def child_members(self, region: Region, dim: int, members: np.ndarray):
        k = region.levels[dim]
        bit = ((self._cols[dim][members] >> (GRID_DEPTH - k - 1)) & 1).astype(bool)
        return members[~bit], members[bit]


def compute_phi(
    samples: SampleSet,
    prior: OptPrior | None = None,
    mode: str = "cached",
    region: Region | None = None,
    members: np.ndarray | None = None,
    engine: PhiEngine | None = None,
) -> PhiRecord:
    """Evaluate ``Phi`` for ``region`` (default: the root) and its posterior record."""
    eng = engine or PhiEngine(samples, prior, mode=mode)
    region = region or Region.root(samples.p)
    if members is None:
        members = eng.members(region)
    eng.logphi(region, members)
    return eng.record(region, members)


def dump_posterior(engine: PhiEngine) -> dict:
    """JSON-ready map ``code -> record`` for every cached non-terminal region."""
    if engine.cache is None:
        raise ConfigError("posterior dump needs a memoizing engine")
    out = {}
    for key in sorted(engine.cache.store, key=lambda k: (sum(k[: engine.p]), k)):
        region = Region.from_key(key)
        members = engine.members(region)
        if engine.is_closed(region.levels, members.size):
            continue
        out[region.code(ascii=True)] = engine.record(region, members).to_dict()
    return out


def sample_prior(prior: OptPrior | None = None, seed: int = 0, depth_cap: int = 12, p: int = 1):
    """Draw one random piecewise-constant density from the OPT prior.

    The recursion is truncated at tree level ``depth_cap``; regions reaching it
    are terminal. The returned tree's leaf masses are products of Dirichlet
    draws along each path, so they sum to one by construction.
    """
    from .pcdensity import HmapTree, LeafNode, SplitNode

    prior = prior or OptPrior()
    if depth_cap < 0:
        raise ConfigError("depth_cap must be >= 0")
    rng = np.random.default_rng(seed)
    nodes = {}
    stack = [(Region.root(p), 0.0)]
    while stack:
        region, logmass = stack.pop()
        lam = prior.selection_weights(region.levels)
        if region.level >= depth_cap or lam.sum() == 0 or rng.random() < prior.rho:
            nodes[region] = LeafNode(logmass + region.level * LOG2)
            continue
        dim = int(rng.choice(p, p=lam))
        theta = rng.dirichlet(prior.alpha)
        # guard against underflow to an exact zero draw
        theta = np.clip(theta, 1e-300, None)
        theta = theta / theta.sum()
        nodes[region] = SplitNode(dim, (float(theta[0]), float(theta[1])))
        left, right = region.children(dim)
        stack.append((right, logmass + math.log(theta[1])))
        stack.append((left, logmass + math.log(theta[0])))
    return HmapTree(p, nodes)
