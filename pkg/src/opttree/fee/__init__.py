"""Finite element smoothing of piecewise-constant tree densities."""

from .assemble import QP, assemble_qp, lumped_guess
from .balance import balance_partition, is_graded
from .density import FeeDensity, fee_eval, fee_fit, fee_sample
from .qp import brute_force_qp, solve_qp
from .simplex import simplex_integral, simplex_volume, top_face_sq
from .triangulate import Triangulation, audit_triangulation, triangulate

__all__ = [
    "QP",
    "FeeDensity",
    "Triangulation",
    "assemble_qp",
    "audit_triangulation",
    "balance_partition",
    "brute_force_qp",
    "fee_eval",
    "fee_fit",
    "fee_sample",
    "is_graded",
    "lumped_guess",
    "simplex_integral",
    "simplex_volume",
    "solve_qp",
    "top_face_sq",
    "triangulate",
]
