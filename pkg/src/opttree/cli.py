"""Command-line interface: fit, smooth, eval, sample, simulate, bench, plot.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 resource limit. Settings come from command-line flags, then a
``key = value`` config file (``--config``), then built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .core import OptPrior
from .dataset import ingest, read_csv, write_csv
from .errors import (
    CodeParseError,
    ConfigError,
    ConvergenceError,
    DataError,
    DepthCapError,
    IntegrityError,
    ResourceError,
)
from .evaluation.experiments import (
    bench_scaling,
    fit_method,
    parse_method,
    reports_csv,
    reports_table,
    run_experiment,
)
from .evaluation.hellinger import DEFAULT_M, hellinger
from .evaluation.references import REFERENCES, reference
from .llopt import STOP_RULES, adaptive_h_fit, exact_hmap_fit, llopt_fit
from .pcdensity import HmapTree, pc_total_mass

EXIT_USAGE, EXIT_DATA, EXIT_RESOURCE = 1, 2, 3

DEFAULTS = {
    "method": "llopt",
    "h": 2,
    "adaptive": False,
    "stop_rule": "identical",
    "tau": 0.0,
    "max_h": 12,
    "rho": 0.5,
    "alpha": 0.5,
    "depth_cap": 40,
    "m0": 5,
    "v0": 2.0 ** -30,
    "lam": 1e-3,
    "seed": None,
    "deterministic": False,
    "budget": None,
    "jobs": 1,
    "m": DEFAULT_M,
    "n": 1000,
    "replicates": 5,
}

# keys accepted in config files, with their parsers
_PARSERS = {
    "method": str, "h": int, "adaptive": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
    "stop_rule": str, "tau": float, "max_h": int, "rho": float, "alpha": float, "depth_cap": int,
    "m0": int, "v0": float, "lam": float, "lambda": float, "seed": int,
    "deterministic": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
    "budget": float, "jobs": int, "m": int, "n": int, "replicates": int,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _PARSERS:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value' with a known key, got {line!r}")
        try:
            out["lam" if key == "lambda" else key] = _PARSERS[key](val.strip())
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value {val.strip()!r} for {key}") from None
    return out


def effective_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            cfg[key] = val
    if cfg["deterministic"] and cfg["seed"] is None:
        raise ConfigError("--deterministic requires --seed")
    if cfg["seed"] is None:
        cfg["seed"] = 0
    return cfg


def prior_from(cfg: dict) -> OptPrior:
    return OptPrior(
        rho=cfg["rho"], alpha=(cfg["alpha"], cfg["alpha"]), depth_cap=cfg["depth_cap"],
        min_count=cfg["m0"], min_volume=cfg["v0"],
    )


def _header(command: str, cfg: dict, keys) -> str:
    return f"# opttree {command} " + " ".join(f"{k}={cfg[k]}" for k in keys)


def _strip_timing(meta: dict) -> dict:
    return {k: v for k, v in meta.items() if k != "seconds"}


def load_model(path):
    """Load a tree or finite element JSON file."""
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise DataError(f"{path}: not a model file")
    if d.get("type") == "fee":
        from .fee.density import FeeDensity
        return FeeDensity.from_dict(d)
    return HmapTree.from_dict(d)


def _parse_bbox(text: str | None, p: int):
    if not text:
        return None
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 2 * p:
        raise ConfigError(f"--bbox needs {2 * p} numbers (lo,hi per dimension)")
    return [(vals[2 * j], vals[2 * j + 1]) for j in range(p)]


# -- commands -------------------------------------------------------------------------


def cmd_fit(args, cfg) -> int:
    raw = read_csv(args.input)
    samples = ingest(raw, bbox=_parse_bbox(args.bbox, raw.shape[1]))
    prior = prior_from(cfg)
    method = cfg["method"]
    keys = ["method", "h", "adaptive", "stop_rule", "tau", "rho", "alpha", "depth_cap", "m0", "v0", "budget", "seed"]
    print(_header("fit", cfg, keys))
    t0 = time.perf_counter()
    if method in ("exact", "opt"):
        tree = exact_hmap_fit(samples, prior, mode="cached", time_budget=cfg["budget"])
    elif method in ("df-opt", "ni-opt"):
        tree = exact_hmap_fit(samples, prior, mode={"df-opt": "depth-first", "ni-opt": "ni"}[method], time_budget=cfg["budget"])
    elif method == "llopt" and cfg["adaptive"]:
        res = adaptive_h_fit(samples, prior, cfg["stop_rule"], cfg["tau"], cfg["max_h"], time_budget=cfg["budget"])
        tree = res.tree
        tree.meta["adaptive"] = {"h_used": res.h_used, "exhausted": res.exhausted, "history": [
            _strip_timing(h) if cfg["deterministic"] else h for h in res.history]}
        print(f"adaptive h: stopped at h={res.h_used}" + (" (budget exhausted)" if res.exhausted else ""))
    elif method == "llopt":
        tree = llopt_fit(samples, prior, h=cfg["h"], time_budget=cfg["budget"])
    else:
        raise ConfigError(f"unknown method {method!r}; expected exact, opt, df-opt, ni-opt or llopt")
    seconds = time.perf_counter() - t0
    if cfg["deterministic"]:
        tree.meta = _strip_timing(tree.meta)
    if args.output:
        tree.save(args.output)
    pc_total_mass(tree)
    logphi = tree.meta.get("logphi_root")
    print(f"leaves: {tree.n_leaves}")
    print(f"depth: {tree.depth}")
    print(f"log Phi(root): {logphi:.10g}" if logphi is not None else "log Phi(root): n/a (lookahead fit)")
    if not cfg["deterministic"]:
        print(f"wall time: {seconds:.3f} s")
    return 0


def cmd_smooth(args, cfg) -> int:
    from .fee.density import check_mass, fee_fit
    tree = load_model(args.input)
    if not isinstance(tree, HmapTree):
        raise DataError(f"{args.input}: expected a tree file")
    print(_header("smooth", cfg, ["lam"]))
    fee = fee_fit(tree, cfg["lam"])
    if cfg["deterministic"]:
        fee.meta = _strip_timing(fee.meta)
    if args.output:
        fee.save(args.output)
    mass = check_mass(fee)
    print(f"vertices: {fee.meta['vertices']}  simplices: {fee.meta['simplices']}  leaves: {fee.meta['leaves']}")
    print(f"mass audit: {mass:.12f}")
    print(f"objective: {fee.meta['objective']:.10g} (fidelity {fee.meta['fidelity']:.6g}, smoothness {fee.meta['smoothness']:.6g})")
    print(f"kkt residual: {fee.meta['kkt_residual']:.3g}")
    return 0


def cmd_eval(args, cfg) -> int:
    model = load_model(args.model)
    if args.points:
        x = read_csv(args.points)
        dens = model(x)
        if args.output:
            write_csv(args.output, dens[:, None])
        else:
            for v in dens:
                print(repr(float(v)))
        return 0
    if args.truth:
        other, name = reference(args.truth), args.truth
    elif args.against:
        other, name = load_model(args.against), args.against
    else:
        raise ConfigError("eval needs --truth, --against or --points")
    est = hellinger(model, other, m=cfg["m"], seed=cfg["seed"])
    print(_header("eval", cfg, ["m", "seed"]))
    print(f"hellinger({args.model}, {name}) = {est.value:.6f} (se {est.stderr:.6f}, m={est.m})")
    return 0


def cmd_sample(args, cfg) -> int:
    model = load_model(args.model)
    x = model.sample(cfg["seed"], cfg["n"])
    if args.output:
        write_csv(args.output, x)
    else:
        write_csv(sys.stdout, x)
    return 0


def cmd_simulate(args, cfg) -> int:
    names = sorted(REFERENCES) if args.example == "all" else [args.example]
    for name in names:
        ref = reference(name)
        x = ref.sample(cfg["seed"], cfg["n"])
        if args.example == "all" or (args.output and Path(args.output).is_dir()):
            out = Path(args.output or ".") / f"{name}_n{cfg['n']}_seed{cfg['seed']}.csv"
        else:
            out = args.output
        if out:
            write_csv(out, x)
            print(f"wrote {out} ({cfg['n']} rows, p={ref.p})")
        else:
            write_csv(sys.stdout, x)
    return 0


def _int_list(text: str) -> list[int]:
    try:
        return [int(float(v)) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of sizes, got {text!r}") from None


def cmd_bench(args, cfg) -> int:
    methods = [parse_method(m) for m in args.methods.split(";") if m.strip()] if ";" in args.methods \
        else [parse_method(m) for m in args.methods.split() if m.strip()]
    ns = _int_list(args.sizes)
    keys = ["seed", "replicates", "budget", "jobs", "m"]
    print(_header("bench", cfg, keys))
    prior = prior_from(cfg)
    if args.accuracy:
        reports = [
            run_experiment(args.example, m, n, cfg["replicates"], cfg["seed"], prior, cfg["m"], cfg["budget"], cfg["jobs"])
            for n in ns for m in methods
        ]
        print(reports_table(reports, "hellinger"))
        if not cfg["deterministic"]:
            print(reports_table(reports, "time"))
        failures = [(r, rep) for r in reports for rep in r.replicates if not rep.ok]
        for r, rep in failures:
            print(f"replicate {rep.index} of {r.method.label} at n={r.n} failed: {rep.error}")
        if args.csv:
            Path(args.csv).write_text(reports_csv(reports, timing=not cfg["deterministic"]))
        return 0
    res = bench_scaling(args.example, methods, ns, cfg["seed"], prior, cfg["budget"], cfg["replicates"])
    print(res.text())
    if args.csv:
        Path(args.csv).write_text(res.csv())
    return 0


def cmd_plot(args, cfg) -> int:
    from .plotting import plot_svg
    model = load_model(args.model)
    svg = plot_svg(model, fill=not args.no_fill)
    if args.output:
        Path(args.output).write_text(svg)
    else:
        sys.stdout.write(svg)
    return 0


# -- parser ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run settings")
    g.add_argument("--config", help="key = value settings file (flags take precedence)")
    g.add_argument("--seed", type=int)
    g.add_argument("--deterministic", action="store_true", default=None,
                   help="omit timings so identical inputs give byte-identical output; needs --seed")
    g.add_argument("--budget", type=float, help="wall-clock budget in seconds per fit")
    g.add_argument("--jobs", type=int, help="worker processes for replicates")


def _prior_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("prior")
    g.add_argument("--rho", type=float, help="prior stopping probability (default 0.5)")
    g.add_argument("--alpha", type=float, help="symmetric Dirichlet parameter (default 0.5)")
    g.add_argument("--depth-cap", dest="depth_cap", type=int, help="per-dimension depth cap (default 40)")
    g.add_argument("--m0", type=int, help="ni-opt count threshold (default 5)")
    g.add_argument("--v0", type=float, help="ni-opt volume threshold (default 2^-30)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="opttree", description="Optional Polya tree density estimation.")
    parser.add_argument("--version", action="version", version=f"opttree {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit an hMAP tree to a CSV sample")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--method", help="exact (= opt), df-opt, ni-opt or llopt (default llopt)")
    p.add_argument("--h", type=int, help="lookahead depth for llopt (default 2)")
    p.add_argument("--adaptive", action="store_true", default=None, help="choose h by increasing it from 1")
    p.add_argument("--stop-rule", dest="stop_rule", choices=STOP_RULES)
    p.add_argument("--tau", type=float, help="Hellinger threshold for --stop-rule hellinger")
    p.add_argument("--max-h", dest="max_h", type=int)
    p.add_argument("--bbox", help="lo,hi per dimension (default: sample range)")
    _prior_flags(p)
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("smooth", help="fit a finite element density over a tree")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--lambda", dest="lam", type=float, help="smoothness weight (default 1e-3)")
    _common(p)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("eval", help="Hellinger distance to a reference or another model, or densities at points")
    p.add_argument("model")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--truth", choices=sorted(REFERENCES))
    g.add_argument("--against")
    g.add_argument("--points", help="CSV of points to evaluate the density at")
    p.add_argument("-o", "--output")
    p.add_argument("-m", type=int, dest="m", help=f"importance samples (default {DEFAULT_M})")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="draw samples from a fitted model")
    p.add_argument("model")
    p.add_argument("-n", type=int, dest="n")
    p.add_argument("-o", "--output")
    _common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("simulate", help="draw samples from a reference density")
    p.add_argument("example", choices=sorted(REFERENCES) + ["all"])
    p.add_argument("-n", type=int, dest="n")
    p.add_argument("-o", "--output", help="CSV file, or directory for 'all'")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="running-time table, or replicate accuracy tables with --accuracy")
    p.add_argument("example", choices=sorted(REFERENCES))
    p.add_argument("--methods", default="opt llopt:1 llopt:2 llopt:3",
                   help="space-separated methods, e.g. 'opt llopt:2 fee:1e-4'")
    p.add_argument("--sizes", default="100,1000", help="comma-separated sample sizes")
    p.add_argument("--accuracy", action="store_true", help="report Hellinger distances over replicates")
    p.add_argument("--replicates", type=int)
    p.add_argument("-m", type=int, dest="m", help="importance samples per Hellinger estimate")
    p.add_argument("--csv", help="also write the table as CSV")
    _prior_flags(p)
    _common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot", help="SVG partition map (p=2) or density curve (p=1)")
    p.add_argument("model")
    p.add_argument("-o", "--output")
    p.add_argument("--no-fill", action="store_true")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = effective_config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"opttree: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, (DataError, CodeParseError)):
            print(f"opttree: data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"opttree: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, IntegrityError, OSError) as exc:
        print(f"opttree: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ResourceError, DepthCapError, ConvergenceError, MemoryError) as exc:
        print(f"opttree: resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
