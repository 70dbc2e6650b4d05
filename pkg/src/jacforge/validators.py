"""
Input validation before dispatch. Validators never raise: they collect
errors and warnings so the caller can report everything at once.
"""

import logging
import math
from typing import List, Sequence, Tuple

import numpy as np

from .constants import MAX_LEVEL, TAU_SQRT_MEASURE_MAX, admissible_measure
from .core import CompactSetMask, ScalarField

logger = logging.getLogger(__name__)

ValidationResult = Tuple[bool, List[str], List[str]]


def validate_mask_for_stretch(mask: CompactSetMask, tau: float) -> ValidationResult:
    """
    Check a mask against the stretch gates at τ.

    Args:
        mask: Set to stretch
        tau: Stretch parameter

    Returns:
        Tuple of (is_valid, errors, warnings)
    """
    errors: List[str] = []
    warnings: List[str] = []
    if tau <= 0:
        errors.append(f"τ must be positive, got {tau}")
        return False, errors, warnings
    if mask.is_empty():
        warnings.append("mask is empty; the stretch is the identity")
        return True, errors, warnings

    root = math.sqrt(mask.measure)
    if tau * root > TAU_SQRT_MEASURE_MAX:
        errors.append(f"τ√|K| = {tau * root:.4g} exceeds 1/32")
    if mask.measure > admissible_measure(tau):
        warnings.append(
            f"|K| = {mask.measure:.4g} above {admissible_measure(tau):.4g}; "
            "the boundary-corrected construction will likely refuse it"
        )
    if mask.level >= MAX_LEVEL - 1:
        warnings.append(f"level {mask.level} leaves no room for refinement")
    return len(errors) == 0, errors, warnings


def validate_field(field: ScalarField, mode: str = "lp") -> ValidationResult:
    """
    Check a right-hand side for the solver pipelines.

    Returns:
        Tuple of (is_valid, errors, warnings)
    """
    errors: List[str] = []
    warnings: List[str] = []
    n = field.n
    if n & (n - 1):
        errors.append(f"field grid must be 2^l × 2^l, got {n}×{n}")
    mass = field.integral()
    if mass >= 1.0:
        errors.append(f"∫f = {mass:.6f} must be below |Ω| = 1")
    if mode == "linf" and not np.all(np.isfinite(field.samples)):
        errors.append("field must be bounded")
    if n < 16:
        warnings.append(f"grid {n}×{n} is coarse; determinant checks are cell averages")
    if not field.samples.any():
        warnings.append("field is identically zero; the solution is the identity")
    return len(errors) == 0, errors, warnings


def validate_polygon_rings(outer: Sequence, holes: Sequence) -> ValidationResult:
    errors: List[str] = []
    warnings: List[str] = []
    if len(outer) < 3:
        errors.append(f"outer ring has {len(outer)} vertices, needs at least 3")
    for k, ring in enumerate(holes):
        if len(ring) < 3:
            errors.append(f"hole {k} has {len(ring)} vertices, needs at least 3")
    if len(outer) > 200:
        warnings.append(f"outer ring has {len(outer)} vertices; decomposition may be slow")
    return len(errors) == 0, errors, warnings
