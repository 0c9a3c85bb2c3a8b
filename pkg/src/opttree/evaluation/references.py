"""The five simulation densities with exact evaluators and samplers.

All live on the unit cube ``[0,1]^p``. Gamma distributions use the
shape/scale convention ``x^(a-1) exp(-x/b) / (b^a Gamma(a))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from ..errors import ConfigError


@dataclass(frozen=True)
class ReferenceDensity:
    name: str
    p: int
    pdf: Callable[[np.ndarray], np.ndarray]
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    description: str = ""

    @property
    def bbox(self) -> list[tuple[float, float]]:
        return [(0.0, 1.0)] * self.p

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.pdf(x)

    def sample(self, seed, m: int) -> np.ndarray:
        return self.sampler(np.random.default_rng(seed), m)


def _inside(x):
    return np.all((x >= 0.0) & (x <= 1.0), axis=1)


class _TruncGamma:
    """Gamma(shape, scale) restricted to (0, 1) and renormalized."""

    def __init__(self, shape, scale):
        self.dist = stats.gamma(shape, scale=scale)
        self.mass = self.dist.cdf(1.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x > 0) & (x < 1), self.dist.pdf(x) / self.mass, 0.0)

    def sample(self, rng, m):
        u = rng.random(m) * self.mass
        return np.clip(self.dist.ppf(u), 0.0, 1.0)


# -- Example 1: uniform strip plus a uniform x Beta(100, 120) strip --------------

_EX1_W1 = 0.35
_EX1_BOX = ((0.78, 0.80), (0.2, 0.8))
_EX1_X2 = (0.25, 0.4)
_EX1_BETA = stats.beta(100, 120)


def _ex1_pdf(x):
    (a0, a1), (b0, b1) = _EX1_BOX
    in1 = (x[:, 0] >= a0) & (x[:, 0] <= a1) & (x[:, 1] >= b0) & (x[:, 1] <= b1)
    d1 = np.where(in1, _EX1_W1 / ((a1 - a0) * (b1 - b0)), 0.0)
    lo, hi = _EX1_X2
    in2 = (x[:, 0] >= lo) & (x[:, 0] <= hi) & (x[:, 1] >= 0) & (x[:, 1] <= 1)
    d2 = np.where(in2, (1 - _EX1_W1) / (hi - lo) * _EX1_BETA.pdf(np.clip(x[:, 1], 0, 1)), 0.0)
    return d1 + d2


def _ex1_sample(rng, m):
    first = rng.random(m) < _EX1_W1
    out = np.empty((m, 2))
    k = int(first.sum())
    (a0, a1), (b0, b1) = _EX1_BOX
    out[first, 0] = rng.uniform(a0, a1, k)
    out[first, 1] = rng.uniform(b0, b1, k)
    lo, hi = _EX1_X2
    out[~first, 0] = rng.uniform(lo, hi, m - k)
    out[~first, 1] = rng.beta(100, 120, m - k)
    return out


# -- Example 2: bivariate normal in (x, y), uniform in (z, w) ------------------------

_EX2_MEAN = np.array([0.6, 0.4])
_EX2_SD = 0.1


def _ex2_pdf(x):
    d2 = ((x[:, :2] - _EX2_MEAN) ** 2).sum(axis=1)
    dens = np.exp(-d2 / (2 * _EX2_SD**2)) / (2 * np.pi * _EX2_SD**2)
    return np.where(_inside(x), dens, 0.0)


def _ex2_sample(rng, m):
    out = np.empty((m, 4))
    filled = 0
    while filled < m:
        need = m - filled
        xy = rng.normal(_EX2_MEAN, _EX2_SD, size=(need + 16, 2))
        xy = xy[_inside(xy)][:need]
        out[filled:filled + xy.shape[0], :2] = xy
        filled += xy.shape[0]
    out[:, 2:] = rng.random((m, 2))
    return out


# -- Example 3: Gamma(2, 0.1) truncated to (0, 1) ----------------------------------

_EX3 = _TruncGamma(2.0, 0.1)


def _ex3_pdf(x):
    return _EX3.pdf(x[:, 0])


def _ex3_sample(rng, m):
    return _EX3.sample(rng, m)[:, None]


# -- Example 4: uniform x (0.8 Beta(2,10) + 0.2 Beta(7,2)) ---------------------------

_EX4_A = stats.beta(2, 10)
_EX4_B = stats.beta(7, 2)


def _ex4_pdf(x):
    d = 0.8 * _EX4_A.pdf(x[:, 1]) + 0.2 * _EX4_B.pdf(x[:, 1])
    return np.where(_inside(x), d, 0.0)


def _ex4_sample(rng, m):
    out = np.empty((m, 2))
    out[:, 0] = rng.random(m)
    first = rng.random(m) < 0.8
    k = int(first.sum())
    out[first, 1] = rng.beta(2, 10, k)
    out[~first, 1] = rng.beta(7, 2, m - k)
    return out


# -- Example 5: 5-d linear mixing of independent components -------------------------

_EX5_X1 = stats.beta(2, 8)
_EX5_X2 = stats.beta(8, 2)
_EX5_X4 = _TruncGamma(2.0, 1.0)
_EX5_X5 = _TruncGamma(1.0, 2.0)


def _ex5_pdf(x):
    y1, y2, y3, y4, y5 = x.T
    x2 = (3 * y2 - y1) / 2
    x5 = (5 * y5 - y3) / 4
    with np.errstate(invalid="ignore"):
        d = (
            _EX5_X1.pdf(y1)
            * _EX5_X2.pdf(x2) * 1.5
            * np.where((y3 >= 0) & (y3 <= 1), 1.0, 0.0)
            * _EX5_X4.pdf(y4)
            * _EX5_X5.pdf(x5) * 1.25
        )
    return np.where(_inside(x), np.nan_to_num(d), 0.0)


def _ex5_sample(rng, m):
    x1 = rng.beta(2, 8, m)
    x2 = rng.beta(8, 2, m)
    x3 = rng.random(m)
    x4 = _EX5_X4.sample(rng, m)
    x5 = _EX5_X5.sample(rng, m)
    return np.column_stack([x1, x1 / 3 + 2 * x2 / 3, x3, x4, x3 / 5 + 4 * x5 / 5])


REFERENCES = {
    "ex1": ReferenceDensity("ex1", 2, _ex1_pdf, _ex1_sample, "uniform strip + uniform x Beta(100,120)"),
    "ex2": ReferenceDensity("ex2", 4, _ex2_pdf, _ex2_sample, "N(0.6,0.1^2) x N(0.4,0.1^2) x U x U"),
    "ex3": ReferenceDensity("ex3", 1, _ex3_pdf, _ex3_sample, "Gamma(2, 0.1) truncated to (0,1)"),
    "ex4": ReferenceDensity("ex4", 2, _ex4_pdf, _ex4_sample, "U(0,1) x (0.8 Beta(2,10) + 0.2 Beta(7,2))"),
    "ex5": ReferenceDensity("ex5", 5, _ex5_pdf, _ex5_sample, "5-d mixed beta/uniform/gamma vector"),
}


def reference(name: str) -> ReferenceDensity:
    try:
        return REFERENCES[name]
    except KeyError:
        raise ConfigError(f"unknown reference density {name!r}; choose from {sorted(REFERENCES)}") from None
