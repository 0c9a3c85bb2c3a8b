"""Importance-sampling estimate of the Hellinger distance.

    H(f, g)^2 = 1 - int sqrt(f g) = 1 - E_q[ sqrt(f g) / q ]

The default proposal ``q`` is the equal mixture of ``f`` and ``g``, sampled
in two equal strata. Weights are finite wherever ``f g > 0`` because then
``q > 0`` as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ConfigError

DEFAULT_M = 200_000


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    affinity: float
    m: int

    def __float__(self) -> float:
        return self.value


def _sampler(obj):
    if hasattr(obj, "sample"):
        return obj.sample
    raise ConfigError("density needs a .sample(seed, m) method to act as a proposal")


def hellinger(
    f: Callable,
    g: Callable,
    m: int = DEFAULT_M,
    seed: int = 0,
    proposal=None,
) -> Estimate:
    """Estimate ``H(f, g)``.

    Parameters
    ----------
    f, g : callable
        Densities taking an ``(m, p)`` array. Unless ``proposal`` is given,
        both also need ``.sample(seed, m)``.
    proposal : object with ``__call__`` and ``sample``, optional
        Custom importance density.
    """
    if m < 2:
        raise ConfigError("need at least 2 importance samples")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    if proposal is None:
        s1, s2 = ss.spawn(2)
        m1 = m // 2
        x = np.concatenate([
            np.atleast_2d(_sampler(f)(s1, m1)).reshape(m1, -1),
            np.atleast_2d(_sampler(g)(s2, m - m1)).reshape(m - m1, -1),
        ])
        fx = np.asarray(f(x), dtype=float)
        gx = np.asarray(g(x), dtype=float)
        qx = 0.5 * (fx + gx)
    else:
        x = np.atleast_2d(proposal.sample(ss, m)).reshape(m, -1)
        fx = np.asarray(f(x), dtype=float)
        gx = np.asarray(g(x), dtype=float)
        qx = np.asarray(proposal(x), dtype=float)
    both = (fx > 0) & (gx > 0)
    if np.any(both & (qx <= 0)):
        raise ConfigError("proposal density is zero where f*g > 0; weights would be infinite")
    w = np.zeros(m)
    w[both] = np.sqrt(fx[both] * gx[both]) / qx[both]
    if proposal is None:
        # stratified estimator: mean of the two stratum means
        m1 = m // 2
        a1, a2 = w[:m1].mean(), w[m1:].mean()
        affinity = 0.5 * (a1 + a2)
        var = 0.25 * (w[:m1].var(ddof=1) / m1 + w[m1:].var(ddof=1) / (m - m1))
    else:
        affinity = w.mean()
        var = w.var(ddof=1) / m
    h2 = min(max(1.0 - affinity, 0.0), 1.0)
    h = math.sqrt(h2)
    se_aff = math.sqrt(max(var, 0.0))
    # delta method on sqrt(1 - a); falls back to sqrt(se) near zero
    stderr = se_aff / (2 * h) if h > 1e-6 else math.sqrt(se_aff)
    return Estimate(h, stderr, float(affinity), m)
