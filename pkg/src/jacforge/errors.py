"""
Exception hierarchy. Every error carries the CLI exit code it maps to.
"""

from typing import Optional

from .constants import EXIT_GATE_VIOLATION, EXIT_INPUT_ERROR, EXIT_TOLERANCE


class JacforgeError(Exception):
    """Base class for all jacforge errors."""

    exit_code: int = EXIT_INPUT_ERROR


# ============================================================================
# INPUT ERRORS (exit 2)
# ============================================================================


class InputError(JacforgeError):
    exit_code = EXIT_INPUT_ERROR


class MaskFormatError(InputError):
    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class FieldFormatError(InputError):
    pass


class PolygonFormatError(InputError):
    pass


class ConfigError(InputError):
    pass


class PointOutsideDomainError(InputError):
    pass


class GridMismatchError(InputError):
    pass


class LevelOverflowError(InputError):
    pass


class DomainMismatchError(InputError):
    pass


class DegenerateTriangleError(InputError):
    pass


class NonConvexQuadError(InputError):
    pass


class SelfIntersectingPolygonError(InputError):
    pass


class EtaSupportError(InputError):
    pass


class NonPositiveFieldError(InputError):
    pass


class KinkLineError(InputError):
    """Exact Jacobian requested on a registered kink line."""


# ============================================================================
# GATE VIOLATIONS (exit 3)
# ============================================================================


class GateViolation(JacforgeError):
    exit_code = EXIT_GATE_VIOLATION


class SmallnessError(GateViolation):
    pass


class BoundUnachievableError(GateViolation):
    pass


class CapacityError(GateViolation):
    """Too many strips to separate by 2δ inside the unit interval."""


class DistortionError(GateViolation):
    pass


class DeltaInfeasibleError(GateViolation):
    pass


class InfeasibleExponentsError(GateViolation):
    pass


class DecayStalledError(GateViolation):
    pass


class EpsilonSearchFailedError(GateViolation):
    pass


class NecessaryConditionError(GateViolation):
    pass


# ============================================================================
# TOLERANCE (exit 4)
# ============================================================================


class ToleranceNotMetError(JacforgeError):
    exit_code = EXIT_TOLERANCE

    def __init__(self, message: str, achieved: float) -> None:
        self.achieved = achieved
        super().__init__(f"{message} (achieved {achieved:.3e})")
