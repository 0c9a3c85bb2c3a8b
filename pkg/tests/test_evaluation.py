import math

import numpy as np
import pytest

from opttree.dataset import from_unit
from opttree.errors import ConfigError
from opttree.evaluation import (
    REFERENCES,
    Method,
    bench_scaling,
    hellinger,
    parse_method,
    reference,
    run_experiment,
)
from opttree.evaluation.experiments import reports_csv, reports_table
from opttree.geometry import Region
from opttree.pcdensity import build_tree


class Uniform:
    """Uniform density on ``[0, b]`` for closed-form checks."""

    def __init__(self, b):
        self.b = b

    def __call__(self, x):
        x = np.asarray(x).reshape(-1)
        return np.where((x >= 0) & (x <= self.b), 1.0 / self.b, 0.0)

    def sample(self, seed, m):
        return np.random.default_rng(seed).random((m, 1)) * self.b


class Shifted(Uniform):
    def __call__(self, x):
        x = np.asarray(x).reshape(-1)
        return np.where((x >= 2) & (x <= 3), 1.0, 0.0)

    def sample(self, seed, m):
        return 2 + np.random.default_rng(seed).random((m, 1))


def grid_histogram(x, levels):
    """Regular dyadic histogram as a tree with empirical mass splits."""
    p = x.shape[1]
    s = from_unit(x)
    g = s.grid(60)
    decisions = {}
    stack = [(Region.root(p), np.arange(len(x)))]
    while stack:
        r, mem = stack.pop()
        dims = [j for j in range(p) if r.levels[j] < levels]
        if not dims:
            decisions[r] = None
            continue
        j = dims[0]
        bit = (g[mem, j] >> (60 - r.levels[j] - 1)) & 1
        nl, nr = int((bit == 0).sum()), int(bit.sum())
        theta = (0.5, 0.5) if nl + nr == 0 else (nl / (nl + nr), nr / (nl + nr))
        decisions[r] = (j, theta)
        left, right = r.children(j)
        stack.append((left, mem[bit == 0]))
        stack.append((right, mem[bit == 1]))
    return build_tree(p, decisions)


# -- reference densities -------------------------------------------------------


def test_reference_point_values():
    ex1 = reference("ex1")
    assert ex1([[0.79, 0.5]])[0] == pytest.approx(0.35 / 0.012, rel=1e-9)
    assert ex1([[0.5, 0.5]])[0] == 0.0
    ex2 = reference("ex2")
    assert ex2([[0.6, 0.4, 0.3, 0.7]])[0] == pytest.approx(1 / (2 * math.pi * 0.01), rel=1e-3)
    with pytest.raises(ConfigError):
        reference("ex9")


@pytest.mark.parametrize("name", sorted(REFERENCES))
def test_reference_integrates_to_one(name):
    ref = reference(name)
    rng = np.random.default_rng(1)
    u = rng.random((400_000, ref.p))
    est = ref(u).mean()
    se = ref(u).std() / math.sqrt(u.shape[0])
    assert abs(est - 1.0) <= max(0.005, 4 * se)


@pytest.mark.parametrize("name", sorted(REFERENCES))
def test_sampler_stays_in_support(name):
    ref = reference(name)
    x = ref.sample(3, 20_000)
    assert x.shape == (20_000, ref.p)
    assert np.all((x >= 0) & (x <= 1))
    assert np.all(ref(x) > 0)


@pytest.mark.parametrize("name", ["ex1", "ex3"])
def test_histogram_of_sampler_converges(name):
    ref = reference(name)
    dist = []
    for n in (1_000, 10_000, 100_000):
        hist = grid_histogram(ref.sample(5, n), levels=5)
        dist.append(hellinger(hist, ref, m=100_000, seed=2).value)
    assert dist[0] > dist[1] > dist[2]


# -- Hellinger -----------------------------------------------------------------------


def test_identical_densities():
    ref = reference("ex1")
    assert hellinger(ref, ref, m=100_000, seed=0).value <= 0.002


def test_disjoint_supports():
    assert hellinger(Uniform(1.0), Shifted(1.0), m=10_000).value == 1.0


def test_uniform_closed_form():
    est = hellinger(Uniform(1.0), Uniform(0.5), m=200_000, seed=4)
    assert est.value == pytest.approx(math.sqrt(1 - 1 / math.sqrt(2)), abs=0.005)
    assert est.stderr < 0.005


def test_swap_invariance():
    ref = reference("ex3")
    hist = grid_histogram(ref.sample(1, 2000), levels=3)
    a = hellinger(hist, ref, m=100_000, seed=7)
    b = hellinger(ref, hist, m=100_000, seed=8)
    assert abs(a.value - b.value) <= 2 * math.hypot(a.stderr, b.stderr)


class HalfBlind(Uniform):
    def __call__(self, x):
        x = np.asarray(x).reshape(-1)
        return np.where(x >= 0.5, 2.0, 0.0)


def test_bad_proposal_detected():
    with pytest.raises(ConfigError):
        hellinger(Uniform(1.0), Uniform(1.0), m=1000, proposal=HalfBlind(1.0))
    with pytest.raises(ConfigError):
        hellinger(lambda x: x, Uniform(1.0), m=100)


# -- experiments -------------------------------------------------------------------


@pytest.mark.parametrize(
    "text, want",
    [
        ("opt", Method("opt")),
        ("df-opt", Method("df-opt")),
        ("ni-opt", Method("ni-opt")),
        ("llopt:2", Method("llopt", h=2)),
        ("llopt(h=3)", Method("llopt", h=3)),
        ("fee:1e-4", Method("fee", lam=1e-4)),
        ("fee(lambda=1e-4,h=2)", Method("fee", h=2, lam=1e-4)),
        ("fee", Method("fee", lam=1e-3)),
    ],
)
def test_parse_method(text, want):
    assert parse_method(text) == want


@pytest.mark.parametrize("bad", ["llopt", "kde", "fee(mu=1)", "llopt:x"])
def test_parse_method_rejects(bad):
    with pytest.raises(ConfigError):
        parse_method(bad)


def test_run_experiment_reproducible():
    a = run_experiment("ex1", "llopt:1", 300, replicates=2, seed=5, m=20_000)
    b = run_experiment("ex1", "llopt:1", 300, replicates=2, seed=5, m=20_000)
    assert a.row(timing=False) == b.row(timing=False)
    assert len(a.ok) == 2
    h, sd = a.hellinger
    assert 0 < h < 1 and sd >= 0
    text = reports_table([a], "hellinger")
    assert "llopt(h=1)" in text and "300" in text
    assert reports_csv([a], timing=False) == reports_csv([b], timing=False)


def test_failed_replicates_are_recorded():
    rep = run_experiment("ex1", "opt", 5000, replicates=2, seed=0, m=1000, time_budget=0.0)
    assert len(rep.ok) == 0
    assert all("ResourceError" in r.error for r in rep.replicates)
    assert math.isnan(rep.hellinger[0])
    assert rep.row()["hellinger_mean"] == "*"


def test_bench_marks_budget_overruns():
    res = bench_scaling("ex1", ["llopt:1", "llopt:2", "df-opt"], [100, 20_000], budget=0.5)
    assert res.times[("llopt(h=1)", 100)] is not None
    assert res.times[("df-opt", 20_000)] is None
    text = res.text()
    assert "*" in text and "llopt time ratio" in text
    assert res.csv().startswith("example,method,n,seconds")
