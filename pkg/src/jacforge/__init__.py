"""
jacforge: constructive bi-Lipschitz maps with prescribed Jacobian lower bounds.
"""

from .boundary import build_boundary_corrected, stretch_unit_square
from .core import CompactSetMask, PlanarMap, ScalarField, compose, mask_measure
from .covering import StripFamily, cover_mask, cover_points, disjointify
from .errors import GateViolation, InputError, JacforgeError, ToleranceNotMetError
from .moser import mollify_and_lift, moser_solve
from .solver import choose_tau0, solve_linf, solve_lp, solve_lp_small
from .stretch import build_stretch, stretch_mask
from .verify import jacobian_report

__version__ = "0.1.0"

__all__ = [
    "CompactSetMask",
    "GateViolation",
    "InputError",
    "JacforgeError",
    "PlanarMap",
    "ScalarField",
    "StripFamily",
    "ToleranceNotMetError",
    "build_boundary_corrected",
    "build_stretch",
    "choose_tau0",
    "compose",
    "cover_mask",
    "cover_points",
    "disjointify",
    "jacobian_report",
    "mask_measure",
    "mollify_and_lift",
    "moser_solve",
    "solve_linf",
    "solve_lp",
    "solve_lp_small",
    "stretch_mask",
    "stretch_unit_square",
]
