"""
Constants and configuration for jacforge.
Centralized location for the explicit constants of the constructions, the
verification tolerances and the CLI exit codes.
"""

import math
from typing import Dict, List, Tuple

# ============================================================================
# DYADIC GRID
# ============================================================================

MAX_LEVEL: int = 14
"""Finest dyadic level a mask may be refined to (δ = 2^-14)."""

ABS_TOL: float = 1e-12

# ============================================================================
# STRIP STRETCH (unit square)
# ============================================================================

# Explicit constants of the strip construction on [0,1]².
SUP_DISPLACEMENT_CONSTANT: float = 16.0
DX_LP_CONSTANT: float = 8.0
TAU_SQRT_MEASURE_MAX: float = 1.0 / 32.0

# Default smallness constant c in max{|K|, √|K|·τ} ≤ c.
DEFAULT_SMALLNESS: float = 0.25

# Half-width of the boundary subsquare may not exceed this fraction.
MAX_BOUNDARY_SQRT_MEASURE: float = 0.5

# Lower barrier on the global determinant of a boundary-corrected map.
GLOBAL_DET_FLOOR: float = 0.5

# ============================================================================
# CHARTS AND DOMAINS
# ============================================================================

CHART_SAMPLE_GRID: int = 64
BILINEAR_LINEAR_FALLBACK: float = 1e-14
MAX_CHART_DISTORTION: float = 4.0

# ============================================================================
# MOSER FLOW
# ============================================================================

DEFAULT_RK4_STEPS: int = 64
DEFAULT_MOSER_TOL: float = 5e-2
FIELD_INTEGRAL_TOL: float = 1e-8

# ============================================================================
# SOLVER
# ============================================================================

DEFAULT_MAX_ITER: int = 30
DEFAULT_MEASURE_TOL: float = 1e-4
DEFAULT_PRAGMATIC_TAU0: float = 1.0
DEFAULT_STRETCH_CONSTANT: float = 16.0
DEFAULT_STALL_RATIO: float = 0.9
STALL_PATIENCE: int = 3
TAU0_RELATIVE_TOL: float = 1e-6
EPSILON_CHECK_POINTS: int = 1025
SUPERLEVEL_THRESHOLD: float = 0.5

# ============================================================================
# VERIFICATION
# ============================================================================

DEFAULT_VERIFY_GRID: int = 128
DEFAULT_PAIR_COUNT: int = 2000
DEFAULT_SEED: int = 20240901
REPORT_SCHEMA_VERSION: str = "1.0"
WEAK_FORM_TOL: float = 1e-3

# Tensor-product bump suite (center x, center y, half-width) used for the
# weak-form inequality checks. Supports stay inside the open unit square.
BUMP_SUITE: List[Tuple[float, float, float]] = [
    (0.5, 0.5, 0.3),
    (0.3, 0.3, 0.2),
    (0.7, 0.3, 0.2),
    (0.3, 0.7, 0.2),
    (0.7, 0.7, 0.2),
]

# ============================================================================
# RENDERING
# ============================================================================

SVG_HASH_SALT: str = "jacforge"
DEFORMED_GRID_LINES: int = 32
STRIP_COLORS: List[str] = [
    "#0752E9",
    "#F94D00",
    "#a5d75f",
    "#62E1E9",
    "#0F2866",
    "#c47ad6",
]

# ============================================================================
# CLI
# ============================================================================

EXIT_OK: int = 0
EXIT_INPUT_ERROR: int = 2
EXIT_GATE_VIOLATION: int = 3
EXIT_TOLERANCE: int = 4

ENV_THREADS: str = "JACFORGE_THREADS"
ENV_LOG_LEVEL: str = "JACFORGE_LOG_LEVEL"

LP_REPORT_EXPONENTS: Tuple[float, ...] = (1.0, 2.0, math.inf)


def cell_size(level: int) -> float:
    """
    Side length of a dyadic cell.

    Args:
        level: Dyadic level l

    Returns:
        δ = 2^-l
    """
    return math.ldexp(1.0, -level)


def admissible_measure(tau: float) -> float:
    """Largest unit-frame mask measure the boundary construction accepts at τ."""
    # inner map runs with 2τ on a set of (rescaled) measure ≈ |M|
    return (TAU_SQRT_MEASURE_MAX / (2.0 * tau)) ** 2 if tau > 0 else 1.0


def exponent_label(p: float) -> str:
    """JSON key for an exponent: '1', '2', '1.5', 'inf'."""
    if math.isinf(p):
        return "inf"
    return f"{p:g}"


EXIT_CODE_NAMES: Dict[int, str] = {
    EXIT_OK: "success",
    EXIT_INPUT_ERROR: "input error",
    EXIT_GATE_VIOLATION: "gate violation",
    EXIT_TOLERANCE: "tolerance not met",
}
