"""hMAP tree extraction: exact OPT and limited-lookahead (LL-OPT) fits.

The hMAP decision at a region is read off its posterior record: stop when the
posterior stopping probability is at least one half, otherwise split along
the dimension with the largest posterior selection weight (lowest index on
ties). Committed splits carry the posterior-mean mass split.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import OptPrior, PhiEngine, PhiRecord
from .dataset import SampleSet
from .errors import ConfigError
from .geometry import Region
from .pcdensity import HmapTree, build_tree, pc_hellinger_exact

STOP_RULES = ("identical", "hellinger", "budget")


@dataclass(frozen=True)
class LloptConfig:
    h: int = 2
    prior: OptPrior = field(default_factory=OptPrior)
    thresholds: bool = False
    q: int = 1

    def __post_init__(self):
        if self.q != 1:
            raise ConfigError("only q = 1 (one committed level per lookahead) is supported")
        if self.h < self.q:
            raise ConfigError(f"lookahead depth h must be >= 1, got {self.h}")


def hmap_decide(record: PhiRecord) -> int | None:
    """``None`` to stop, otherwise the split dimension."""
    if record.terminal or record.rho_post >= 0.5:
        return None
    return int(np.argmax(record.lambda_post))


def _theta(record: PhiRecord, dim: int) -> tuple[float, float]:
    a = record.alpha_post[dim]
    t0 = float(a[0] / (a[0] + a[1]))
    return t0, 1.0 - t0


def _grow(engine: PhiEngine, samples: SampleSet, on_frontier=None) -> dict:
    decisions = {}
    root = Region.root(samples.p)
    stack = [(root, np.arange(samples.n, dtype=np.int64))]
    while stack:
        region, mem = stack.pop()
        if on_frontier is not None:
            on_frontier(region)
        rec = engine.record(region, mem)
        dim = hmap_decide(rec)
        if dim is None:
            decisions[region] = None
            continue
        decisions[region] = (dim, _theta(rec, dim))
        left, right = region.children(dim)
        lm, rm = engine.child_members(region, dim, mem)
        stack.append((right, rm))
        stack.append((left, lm))
    return decisions


def exact_hmap_fit(
    samples: SampleSet,
    prior: OptPrior | None = None,
    mode: str = "cached",
    time_budget: float | None = None,
    max_regions: int | None = None,
) -> HmapTree:
    """Full recursion, then hMAP decisions from the root down.

    ``mode`` selects the cached, depth-first or ``ni`` engine. Budgets surface
    as ``ResourceError``.
    """
    prior = prior or OptPrior()
    t0 = time.perf_counter()
    engine = PhiEngine(samples, prior, mode=mode, time_budget=time_budget, max_regions=max_regions)
    logphi = engine.logphi()
    max_depth = engine.max_level_seen
    decisions = _grow(engine, samples)
    meta = {
        "method": {"cached": "opt", "depth-first": "df-opt", "ni": "ni-opt"}[mode],
        "n": samples.n,
        "logphi_root": logphi,
        "recursion_depth": max_depth,
        "regions_cached": len(engine.cache) if engine.cache is not None else 0,
        "expansions": engine.expansions,
        "prior": prior.to_dict(),
        "seconds": time.perf_counter() - t0,
    }
    return build_tree(samples.p, decisions, samples.transform, meta)


def lookahead_phi(
    region: Region,
    members: np.ndarray,
    samples: SampleSet,
    prior: OptPrior | None = None,
    h: int = 1,
    thresholds: bool = False,
) -> PhiRecord:
    """Posterior record of ``region`` with regions ``h`` levels below closed uniformly."""
    if h < 0:
        raise ConfigError("h must be >= 0")
    engine = PhiEngine(samples, prior, mode="cached", thresholds=thresholds)
    engine.reset(horizon=region.level + h)
    return engine.record(region, members)


def llopt_fit(
    samples: SampleSet,
    prior: OptPrior | None = None,
    h: int = 2,
    thresholds: bool = False,
    time_budget: float | None = None,
) -> HmapTree:
    """Limited-lookahead fit committing one level per frontier node."""
    cfg = LloptConfig(h=h, prior=prior or OptPrior(), thresholds=thresholds)
    t0 = time.perf_counter()
    engine = PhiEngine(samples, cfg.prior, mode="cached", thresholds=thresholds, time_budget=time_budget)
    frontier_count = [0]

    def reset(region):
        frontier_count[0] += 1
        engine.reset(horizon=region.level + cfg.h)

    decisions = _grow(engine, samples, on_frontier=reset)
    meta = {
        "method": "llopt",
        "h": cfg.h,
        "n": samples.n,
        "frontier_nodes": frontier_count[0],
        "expansions": engine.expansions,
        "prior": cfg.prior.to_dict(),
        "seconds": time.perf_counter() - t0,
    }
    return build_tree(samples.p, decisions, samples.transform, meta)


@dataclass
class AdaptiveResult:
    tree: HmapTree
    h_used: int
    exhausted: bool
    history: list = field(default_factory=list)


def adaptive_h_fit(
    samples: SampleSet,
    prior: OptPrior | None = None,
    stop_rule: str = "identical",
    tau: float = 0.0,
    max_h: int = 12,
    time_budget: float | None = None,
) -> AdaptiveResult:
    """Run LL-OPT for ``h = 1, 2, ...`` until the stop rule fires.

    ``identical`` stops once two successive trees share the same partition
    and returns the earlier tree; ``hellinger`` stops when the exact distance
    between successive fits is at most ``tau``; ``budget`` runs until
    ``max_h`` or ``time_budget`` and returns the last completed fit. Hitting a
    budget under the other rules returns the last fit with ``exhausted=True``.
    """
    if stop_rule not in STOP_RULES:
        raise ConfigError(f"unknown stop rule {stop_rule!r}; expected one of {STOP_RULES}")
    if tau < 0:
        raise ConfigError("tau must be >= 0")
    t0 = time.perf_counter()
    prev = None
    history = []
    for h in range(1, max_h + 1):
        tree = llopt_fit(samples, prior, h)
        history.append({"h": h, "leaves": tree.n_leaves, "seconds": tree.meta["seconds"]})
        if prev is not None and stop_rule != "budget":
            if stop_rule == "identical" and tree.structure() == prev.structure():
                return AdaptiveResult(prev, h, False, history)
            if stop_rule == "hellinger":
                dist = pc_hellinger_exact(prev, tree)
                history[-1]["hellinger_prev"] = dist
                if dist <= tau:
                    return AdaptiveResult(prev, h, False, history)
        prev = tree
        if time_budget is not None and time.perf_counter() - t0 > time_budget:
            break
    return AdaptiveResult(prev, history[-1]["h"], stop_rule != "budget", history)
