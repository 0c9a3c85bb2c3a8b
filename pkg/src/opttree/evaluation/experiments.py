"""Replicate experiments and running-time benchmarks against the reference densities."""

from __future__ import annotations

import csv
import io
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..core import OptPrior
from ..dataset import ingest
from ..errors import ConfigError, OptTreeError, ResourceError
from ..llopt import exact_hmap_fit, llopt_fit
from .hellinger import DEFAULT_M, hellinger
from .references import reference

METHODS = ("opt", "df-opt", "ni-opt", "llopt", "fee")
_ENGINE = {"opt": "cached", "df-opt": "depth-first", "ni-opt": "ni"}


@dataclass(frozen=True)
class Method:
    """A fitting method; ``h`` is the lookahead, ``lam`` the FEE smoothing weight.

    FEE smooths an LL-OPT fit when ``h`` is set and an exact OPT fit otherwise.
    """

    name: str
    h: int | None = None
    lam: float | None = None

    def __post_init__(self):
        if self.name not in METHODS:
            raise ConfigError(f"unknown method {self.name!r}; expected one of {METHODS}")
        if self.name == "llopt" and (self.h is None or self.h < 1):
            raise ConfigError("llopt needs a lookahead h >= 1")
        if self.name == "fee" and (self.lam is None or self.lam < 0):
            raise ConfigError("fee needs a smoothing weight lambda >= 0")

    @property
    def label(self) -> str:
        if self.name == "llopt":
            return f"llopt(h={self.h})"
        if self.name == "fee":
            base = f",h={self.h}" if self.h else ""
            return f"fee(lambda={self.lam:g}{base})"
        return self.name


_METHOD_RE = re.compile(r"^(?P<name>[a-z-]+)(?:[(:](?P<args>[^)]*)\)?)?$")


def parse_method(text: str) -> Method:
    """Parse ``opt``, ``df-opt``, ``ni-opt``, ``llopt:2``, ``llopt(h=2)``, ``fee:1e-3``, ``fee(lambda=1e-4,h=2)``."""
    m = _METHOD_RE.match(text.strip().lower())
    if not m:
        raise ConfigError(f"cannot parse method {text!r}")
    name, args = m["name"], m["args"]
    kw = {}
    if args:
        for i, part in enumerate(a for a in args.split(",") if a.strip()):
            key, sep, val = part.partition("=")
            if not sep:
                key, val = ("h" if name == "llopt" or i > 0 else "lambda"), key
            key = key.strip()
            try:
                if key == "h":
                    kw["h"] = int(val)
                elif key in ("lambda", "lam"):
                    kw["lam"] = float(val)
                else:
                    raise ConfigError(f"unknown method argument {key!r} in {text!r}")
            except ValueError:
                raise ConfigError(f"bad value {val!r} in method {text!r}") from None
    if name == "fee" and "lam" not in kw:
        from ..fee.density import DEFAULT_LAMBDA
        kw["lam"] = DEFAULT_LAMBDA
    return Method(name, **kw)


def fit_method(samples, method: Method, prior: OptPrior | None = None, time_budget: float | None = None):
    """Fit ``method`` and return a density object (tree or FEE)."""
    if method.name in _ENGINE:
        return exact_hmap_fit(samples, prior, mode=_ENGINE[method.name], time_budget=time_budget)
    if method.name == "llopt":
        return llopt_fit(samples, prior, h=method.h, time_budget=time_budget)
    from ..fee.density import fee_fit
    base = (
        llopt_fit(samples, prior, h=method.h, time_budget=time_budget)
        if method.h else exact_hmap_fit(samples, prior, time_budget=time_budget)
    )
    return fee_fit(base, method.lam)


def fitted_mass(fit) -> float:
    """Total mass of a tree (sum of leaf masses) or an FEE density (sum of simplex masses)."""
    if hasattr(fit, "total_mass"):
        return fit.total_mass()
    return math.fsum(fit.leaf_masses())


@dataclass(frozen=True)
class Replicate:
    index: int
    hellinger: float
    stderr: float
    seconds: float
    leaves: int | None = None
    error: str | None = None
    mass: float = math.nan  # integral of the fitted density, as an audit

    @property
    def ok(self) -> bool:
        return self.error is None


def _mean_sd(x) -> tuple[float, float]:
    x = [v for v in x if math.isfinite(v)]
    if not x:
        return math.nan, math.nan
    sd = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
    return float(np.mean(x)), sd


@dataclass
class ExperimentReport:
    example: str
    method: Method
    n: int
    seed: int
    replicates: list[Replicate] = field(default_factory=list)

    @property
    def ok(self) -> list[Replicate]:
        return [r for r in self.replicates if r.ok]

    @property
    def hellinger(self) -> tuple[float, float]:
        return _mean_sd([r.hellinger for r in self.ok])

    @property
    def seconds(self) -> tuple[float, float]:
        return _mean_sd([r.seconds for r in self.ok])

    def row(self, timing: bool = True) -> dict:
        h, hs = self.hellinger
        out = {
            "example": self.example,
            "method": self.method.label,
            "n": self.n,
            "seed": self.seed,
            "replicates": len(self.replicates),
            "completed": len(self.ok),
            "hellinger_mean": _fmt(h),
            "hellinger_sd": _fmt(hs),
        }
        if timing:
            t, ts = self.seconds
            out["time_mean"] = _fmt(t)
            out["time_sd"] = _fmt(ts)
        return out


def _fmt(x: float, digits: int = 4) -> str:
    return "*" if not math.isfinite(x) else f"{x:.{digits}f}"


def _streams(seed: int, index: int):
    """Independent data and evaluation seeds for one replicate."""
    data, ev = np.random.SeedSequence([seed, index]).spawn(2)
    return data, ev


def _one_replicate(args) -> Replicate:
    example, method, n, seed, index, prior, m, time_budget = args
    ref = reference(example)
    data_seed, eval_seed = _streams(seed, index)
    x = ref.sample(data_seed, n)
    samples = ingest(x, bbox=ref.bbox)
    t0 = time.perf_counter()
    try:
        fit = fit_method(samples, method, prior, time_budget)
    except (OptTreeError, MemoryError) as exc:
        return Replicate(index, math.nan, math.nan, time.perf_counter() - t0, None, f"{type(exc).__name__}: {exc}")
    seconds = time.perf_counter() - t0
    est = hellinger(fit, ref, m=m, seed=eval_seed)
    leaves = getattr(fit, "n_leaves", None)
    return Replicate(index, est.value, est.stderr, seconds, leaves, mass=fitted_mass(fit))


def run_experiment(
    example: str,
    method: Method | str,
    n: int,
    replicates: int = 5,
    seed: int = 0,
    prior: OptPrior | None = None,
    m: int = DEFAULT_M,
    time_budget: float | None = None,
    jobs: int = 1,
) -> ExperimentReport:
    """Fit ``replicates`` independent samples of size ``n`` and score them against the truth.

    A replicate that fails (for example by exceeding ``time_budget``) is
    recorded with its error and left out of the summary statistics.
    """
    if isinstance(method, str):
        method = parse_method(method)
    if replicates < 1 or n < 1:
        raise ConfigError("need n >= 1 and at least one replicate")
    reference(example)
    tasks = [(example, method, n, seed, i, prior, m, time_budget) for i in range(replicates)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reps = list(pool.map(_one_replicate, tasks))
    else:
        reps = [_one_replicate(t) for t in tasks]
    return ExperimentReport(example, method, n, seed, reps)


# -- tables ---------------------------------------------------------------------


def reports_csv(reports: list[ExperimentReport], timing: bool = True) -> str:
    rows = [r.row(timing) for r in reports]
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _grid_text(title: str, ns: list[int], labels: list[str], cell) -> str:
    """Aligned table: per sample size a mean row, then an sd row if any sd is given."""
    head = ["n"] + labels
    body = []
    for n in ns:
        means, sds = [], []
        for lab in labels:
            mean, sd = cell(n, lab)
            means.append(mean)
            sds.append(sd)
        body.append([str(n)] + means)
        if any(sds):
            body.append([""] + sds)
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    line = lambda row: "  ".join(s.rjust(w) for s, w in zip(row, widths))
    rule = "-" * len(line(head))
    return "\n".join([title, rule, line(head), rule] + [line(r) for r in body] + [rule]) + "\n"


def reports_table(reports: list[ExperimentReport], value: str = "hellinger", digits: int = 3) -> str:
    """Grid table of ``value`` ("hellinger" or "time") by sample size and method."""
    if value not in ("hellinger", "time"):
        raise ConfigError("value must be 'hellinger' or 'time'")
    ns = sorted({r.n for r in reports})
    labels = list(dict.fromkeys(r.method.label for r in reports))
    index = {(r.n, r.method.label): r for r in reports}

    def cell(n, lab):
        r = index.get((n, lab))
        if r is None:
            return "", ""
        mean, sd = r.hellinger if value == "hellinger" else r.seconds
        return _fmt(mean, digits), f"({_fmt(sd, digits)})" if math.isfinite(sd) else "*"

    examples = sorted({r.example for r in reports})
    title = f"{'Hellinger distance' if value == 'hellinger' else 'Running time (s)'}: {', '.join(examples)}"
    return _grid_text(title, ns, labels, cell)


# -- scaling benchmark ----------------------------------------------------------------


@dataclass
class BenchResult:
    example: str
    methods: list[Method]
    ns: list[int]
    times: dict = field(default_factory=dict)       # (label, n) -> seconds, or None if over budget
    budget: float | None = None

    def slopes(self) -> dict[str, float]:
        """Least-squares slope of log time against log n per method."""
        out = {}
        for m in self.methods:
            pts = [(n, self.times.get((m.label, n))) for n in self.ns]
            pts = [(n, t) for n, t in pts if t is not None and t > 0]
            out[m.label] = float(np.polyfit(np.log([n for n, _ in pts]), np.log([t for _, t in pts]), 1)[0]) if len(pts) >= 2 else math.nan
        return out

    def h_growth(self) -> dict[int, list[float]]:
        """Per sample size, LL-OPT time ratios between successive lookahead depths."""
        ll = sorted((m for m in self.methods if m.name == "llopt"), key=lambda m: m.h)
        out = {}
        for n in self.ns:
            ratios = []
            for a, b in zip(ll, ll[1:]):
                ta, tb = self.times.get((a.label, n)), self.times.get((b.label, n))
                ratios.append(tb / ta if ta and tb else math.nan)
            out[n] = ratios
        return out

    def text(self) -> str:
        labels = [m.label for m in self.methods]

        def cell(n, lab):
            if (lab, n) not in self.times:
                return "", ""
            t = self.times[(lab, n)]
            return ("*", "") if t is None else (f"{t:.3f}", "")

        out = _grid_text(f"Running time (s): {self.example}", self.ns, labels, cell)
        slopes = self.slopes()
        out += "log-log slope: " + "  ".join(f"{k}={_fmt(v, 2)}" for k, v in slopes.items()) + "\n"
        growth = self.h_growth()
        if any(growth.values()):
            for n, ratios in growth.items():
                if ratios:
                    out += f"llopt time ratio h->h+1 at n={n}: " + " ".join(_fmt(r, 2) for r in ratios) + "\n"
        if self.budget is not None:
            out += f"* = exceeded the {self.budget:g} s budget\n"
        return out

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["example", "method", "n", "seconds"])
        for m in self.methods:
            for n in self.ns:
                if (m.label, n) in self.times:
                    t = self.times[(m.label, n)]
                    w.writerow([self.example, m.label, n, "*" if t is None else f"{t:.6f}"])
        return buf.getvalue()


def bench_scaling(
    example: str,
    methods: list[Method | str],
    ns: list[int],
    seed: int = 0,
    prior: OptPrior | None = None,
    budget: float | None = None,
    replicates: int = 1,
) -> BenchResult:
    """Time each method over the sample sizes, sequentially.

    A fit exceeding ``budget`` seconds is marked ``*`` and larger sizes for
    that method are skipped (also marked ``*``).
    """
    methods = [parse_method(m) if isinstance(m, str) else m for m in methods]
    ns = sorted(ns)
    ref = reference(example)
    res = BenchResult(example, methods, ns, budget=budget)
    for m in methods:
        over = False
        for n in ns:
            if over:
                res.times[(m.label, n)] = None
                continue
            times = []
            for i in range(replicates):
                data_seed, _ = _streams(seed, i)
                samples = ingest(ref.sample(data_seed, n), bbox=ref.bbox)
                t0 = time.perf_counter()
                try:
                    fit_method(samples, m, prior, budget)
                except ResourceError:
                    over = True
                    break
                times.append(time.perf_counter() - t0)
            if budget is not None and times and max(times) > budget:
                over = True
            res.times[(m.label, n)] = None if over else float(np.mean(times))
    return res
