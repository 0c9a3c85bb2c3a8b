"""Reference densities, Hellinger distance, replicate experiments and benchmarks."""

from .experiments import ExperimentReport, Method, bench_scaling, parse_method, run_experiment
from .hellinger import Estimate, hellinger
from .references import REFERENCES, ReferenceDensity, reference

__all__ = [
    "REFERENCES",
    "Estimate",
    "ExperimentReport",
    "Method",
    "ReferenceDensity",
    "bench_scaling",
    "hellinger",
    "parse_method",
    "reference",
    "run_experiment",
]
