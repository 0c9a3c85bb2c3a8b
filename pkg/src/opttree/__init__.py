"""Optional Polya tree density estimation with finite element smoothing."""

__version__ = "0.1.0"

from .core import OptPrior, PhiEngine, compute_phi
from .dataset import SampleSet, Transform, ingest, read_csv, write_csv
from .geometry import Region, decode, region_code
from .llopt import adaptive_h_fit, exact_hmap_fit, llopt_fit
from .pcdensity import HmapTree, pc_eval, pc_sample, pc_total_mass

__all__ = [
    "HmapTree",
    "OptPrior",
    "PhiEngine",
    "Region",
    "SampleSet",
    "Transform",
    "adaptive_h_fit",
    "compute_phi",
    "decode",
    "exact_hmap_fit",
    "ingest",
    "llopt_fit",
    "pc_eval",
    "pc_sample",
    "pc_total_mass",
    "read_csv",
    "region_code",
    "write_csv",
]
