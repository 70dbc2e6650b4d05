"""
Explicit strip-stretching map on the unit square.

    φ₂(x,y) = (1−4δNτ)y + 2τ Σ_i clip(y − f_i(x) + δ, 0, 2δ)
    φ₁(x,y) = (1−4δMτ)x + 2τ Σ_j clip(x − g_j(y) + δ, 0, 2δ)

Each horizontal strip is stretched by 1+2τ in y at the cost of a uniform
compression outside, so edges map onto themselves.
"""

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import Field

from .config import CamelModel
from .constants import (
    ABS_TOL,
    DEFAULT_SMALLNESS,
    DX_LP_CONSTANT,
    LP_REPORT_EXPONENTS,
    MAX_LEVEL,
    SUP_DISPLACEMENT_CONSTANT,
    TAU_SQRT_MEASURE_MAX,
    exponent_label,
)
from .core import (
    UNIT_SQUARE,
    CompactSetMask,
    MapKind,
    PlanarMap,
    as_points,
    det2,
    grid_centers,
    mask_measure,
    operator_norm,
    refine_mask,
)
from .covering import StripFamily, cover_mask, disjointify
from .errors import SmallnessError

logger = logging.getLogger(__name__)

# samples closer than this to a kink line are excluded from reports
KINK_EXCLUSION: float = 1e-9


class StretchMap(PlanarMap):
    kind = MapKind.STRIP_STRETCH

    def __init__(
        self,
        family: StripFamily,
        tau: float,
        measure_k: float,
        mask: Optional[CompactSetMask] = None,
    ) -> None:
        super().__init__(UNIT_SQUARE, UNIT_SQUARE)
        self.family = family
        self.tau = float(tau)
        self.measure_k = float(measure_k)
        self.mask = mask
        d = family.delta
        self.coef_y = 1.0 - 4.0 * d * family.N * self.tau
        self.coef_x = 1.0 - 4.0 * d * family.M * self.tau

    @property
    def depth(self) -> int:
        return 0 if self.family.is_empty() else 1

    def _evaluate(self, points: np.ndarray) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        d, t = self.family.delta, self.tau
        out = np.empty_like(points)
        out[:, 0] = self.coef_x * x
        out[:, 1] = self.coef_y * y
        for f in self.family.horizontal:
            out[:, 1] += 2 * t * np.clip(y - f(x) + d, 0.0, 2 * d)
        for g in self.family.vertical:
            out[:, 0] += 2 * t * np.clip(x - g(y) + d, 0.0, 2 * d)
        return out

    def _exact_jacobian(self, points: np.ndarray) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        d, t = self.family.delta, self.tau
        jac = np.zeros((len(points), 2, 2))
        jac[:, 0, 0] = self.coef_x
        jac[:, 1, 1] = self.coef_y
        for f in self.family.horizontal:
            inside = np.abs(y - f(x)) < d
            jac[:, 1, 1] += 2 * t * inside
            jac[:, 1, 0] -= 2 * t * f.slope(x) * inside
        for g in self.family.vertical:
            inside = np.abs(x - g(y)) < d
            jac[:, 0, 0] += 2 * t * inside
            jac[:, 0, 1] -= 2 * t * g.slope(y) * inside
        return jac

    def kink_distance(self, points: np.ndarray) -> np.ndarray:
        p = as_points(points)
        x, y = p[:, 0], p[:, 1]
        d = self.family.delta
        dist = np.full(len(p), math.inf)
        for f in self.family.horizontal:
            gap = np.abs(np.abs(y - f(x)) - d) / math.sqrt(2.0)
            dist = np.minimum(dist, gap)
            dist = np.minimum(dist, f.breakpoint_distance(x))
        for g in self.family.vertical:
            gap = np.abs(np.abs(x - g(y)) - d) / math.sqrt(2.0)
            dist = np.minimum(dist, gap)
            dist = np.minimum(dist, g.breakpoint_distance(y))
        return dist

    def edge_trace_y(self, y: np.ndarray, x_edge: float) -> Tuple[np.ndarray, np.ndarray]:
        """(φ₂, ∂yφ₂) along the vertical edge x = x_edge."""
        pts = np.column_stack([np.full_like(y, x_edge), y])
        return self._evaluate(pts)[:, 1], self._exact_jacobian(pts)[:, 1, 1]

    def edge_trace_x(self, x: np.ndarray, y_edge: float) -> Tuple[np.ndarray, np.ndarray]:
        """(φ₁, ∂xφ₁) along the horizontal edge y = y_edge."""
        pts = np.column_stack([x, np.full_like(x, y_edge)])
        return self._evaluate(pts)[:, 0], self._exact_jacobian(pts)[:, 0, 0]

    # ------------------------------------------------------------------
    # determinant bounds
    # ------------------------------------------------------------------

    def det_lower_bound_in_strips(self) -> float:
        """
        Smallest det∇φ that can occur inside S, taken over the strip
        configurations that can actually occur (one horizontal, one
        vertical, or one of each).
        """
        a, b, t = self.coef_x, self.coef_y, self.tau
        cases: List[float] = []
        if self.family.N:
            cases.append(a * (b + 2 * t))
        if self.family.M:
            cases.append((a + 2 * t) * b)
        if self.family.N and self.family.M:
            cases.append((a + 2 * t) * (b + 2 * t) - 4 * t * t)
        return min(cases) if cases else math.inf

    def det_lower_bound_outside(self) -> float:
        return self.coef_x * self.coef_y

    def closed_form_det_bound(self) -> float:
        """1 + 2τ[1 − 2δ(M+N) − 8τδ(M+N)]."""
        d, t = self.family.delta, self.tau
        nm = self.family.N + self.family.M
        return 1 + 2 * t * (1 - 2 * d * nm - 8 * t * d * nm)

    # ------------------------------------------------------------------
    # exact Lᵖ norms of the piecewise-constant derivatives
    # ------------------------------------------------------------------

    def lp_dx_phi2(self, p: float) -> float:
        """‖∂xφ₂‖_{Lᵖ}, integrated exactly over the strips."""
        d, t = self.family.delta, self.tau
        if math.isinf(p):
            slopes = [np.abs(f.slopes()) for f in self.family.horizontal]
            peak = max((s.max() for s in slopes if s.size), default=0.0)
            return float(2 * t * peak)
        total = 0.0
        for f in self.family.horizontal:
            if f.slopes().size:
                total += 2 * d * float(np.sum(np.diff(f.xs) * (2 * t * np.abs(f.slopes())) ** p))
        return total ** (1.0 / p)

    def lp_dy_phi2_minus_one(self, p: float) -> float:
        """‖∂yφ₂ − 1‖_{Lᵖ}: 2τ−4δNτ on the strips, −4δNτ elsewhere."""
        d, t, n = self.family.delta, self.tau, self.family.N
        inside_area = 2 * n * d
        inside = abs(2 * t - 4 * d * n * t)
        outside = 4 * d * n * t
        if math.isinf(p):
            values = [outside] if inside_area < 1 else []
            if n:
                values.append(inside)
            return float(max(values, default=0.0))
        return float(
            (inside**p * inside_area + outside**p * (1 - inside_area)) ** (1.0 / p)
        )


class StretchReport(CamelModel):
    sup_disp: float
    sup_disp_x: float
    sup_disp_bound: float
    lp_dx_phi2: Dict[str, float]
    lp_dx_phi2_bound: Dict[str, float]
    lp_dy_phi2minus1: Dict[str, float]
    min_det_on_k: Optional[float]
    min_det_global: float
    global_det_bound: float
    grad_det_ratio_max: float
    gate_det_bound: float
    closed_form_det_bound: float
    tau_used: float
    delta_used: float
    N: int = Field(alias="N")
    M: int = Field(alias="M")
    measure_k: float
    kink_exclusions: int


# ============================================================================
# CONSTRUCTION
# ============================================================================


def check_smallness(measure_k: float, tau: float, smallness: float = DEFAULT_SMALLNESS) -> None:
    """
    Raise SmallnessError unless max{|K|, √|K|τ} ≤ c and τ√|K| ≤ 1/32.
    """
    root = math.sqrt(measure_k)
    if tau <= 0:
        raise SmallnessError(f"τ must be positive, got {tau}")
    if max(measure_k, root * tau) > smallness:
        raise SmallnessError(
            f"max{{|K|, √|K|·τ}} = {max(measure_k, root * tau):.4g} exceeds c = {smallness:g}"
        )
    if tau * root > TAU_SQRT_MEASURE_MAX + ABS_TOL:
        raise SmallnessError(
            f"τ√|K| = {tau * root:.4g} violates τ√|K| ≤ 1/32 (τ={tau:g}, |K|={measure_k:.4g})"
        )


def build_stretch(
    family: StripFamily,
    tau: float,
    measure_k: float,
    smallness: float = DEFAULT_SMALLNESS,
    mask: Optional[CompactSetMask] = None,
) -> StretchMap:
    """
    Build the strip-stretching map of a disjointified family.

    Args:
        family: Disjointified strip family
        tau: Stretch parameter τ > 0
        measure_k: |K| of the set the family covers
        smallness: Constant c of the smallness gate
        mask: Optional covered mask, kept for reports

    Returns:
        StretchMap with det∇φ ≥ 1+τ on the strips

    Raises:
        SmallnessError: a smallness or determinant gate fails
    """
    check_smallness(measure_k, tau, smallness)
    is_valid, errors, _ = family.check_invariants()
    if not is_valid:
        raise SmallnessError(f"strip family is not disjointified: {errors[0]}")

    stretch = StretchMap(family, tau, measure_k, mask)
    if stretch.coef_x <= 0 or stretch.coef_y <= 0:
        raise SmallnessError("compression factor 1−4δNτ must stay positive")
    bound = stretch.det_lower_bound_in_strips()
    if bound < 1 + tau - ABS_TOL:
        logger.error(
            f"Strip det bound {bound:.6f} < 1+τ = {1 + tau:.6f} "
            f"(N={family.N}, M={family.M}, δ={family.delta:g})"
        )
        raise SmallnessError(
            f"det∇φ on S bounded below by {bound:.6f} < 1+τ; "
            "the mask is too large for τ (needs 1+2τ[1−2δ(M+N)−8τδ(M+N)]-type smallness)"
        )
    logger.info(
        f"✓ Built strip stretch: τ={tau:g}, N={family.N}, M={family.M}, "
        f"det on S ≥ {bound:.4f}"
    )
    return stretch


def stretch_mask(
    mask: CompactSetMask,
    tau: float,
    smallness: float = DEFAULT_SMALLNESS,
    max_refinements: int = 2,
) -> StretchMap:
    """
    Cover (ε = √|K|), disjointify and stretch a mask, refining the mask level
    when the strip determinant gate fails at the current δ.
    """
    measure_k = mask_measure(mask)
    if mask.is_empty():
        return StretchMap(StripFamily(mask.delta), tau, 0.0, mask)
    check_smallness(measure_k, tau, smallness)

    working = mask
    for attempt in range(max_refinements + 1):
        family = disjointify(cover_mask(working, eps=math.sqrt(measure_k)))
        try:
            return build_stretch(family, tau, measure_k, smallness, mask)
        except SmallnessError:
            if attempt == max_refinements or working.level >= MAX_LEVEL:
                raise
            logger.warning(
                f"Determinant gate failed at level {working.level}; refining once"
            )
            working = refine_mask(working, 1)
    raise SmallnessError("unreachable")  # pragma: no cover


# ============================================================================
# ESTIMATES
# ============================================================================


def stretch_estimates(
    stretch: StretchMap, grid_n: int = 128, mask: Optional[CompactSetMask] = None
) -> StretchReport:
    """
    Quantitative estimates of a strip stretch: displacement, exact Lᵖ norms
    of the y-component derivatives, determinant bounds on K and globally,
    and the ratio |∇φ|/det∇φ off the strips.
    """
    if grid_n < 64:
        raise ValueError("grid_n must be at least 64")
    mask = mask if mask is not None else stretch.mask
    root = math.sqrt(stretch.measure_k)
    t = stretch.tau

    # displacement on a node grid including both edges
    nodes = np.linspace(0.0, 1.0, grid_n + 1)
    X, Y = np.meshgrid(nodes, nodes, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    img = stretch._evaluate(pts)
    sup_y = float(np.max(np.abs(img[:, 1] - pts[:, 1])))
    sup_x = float(np.max(np.abs(img[:, 0] - pts[:, 0])))

    # global determinant and gradient/det ratio at kink-free cell centers
    cx, cy = grid_centers(grid_n)
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    keep = stretch.kink_distance(centers) > KINK_EXCLUSION
    excluded = int((~keep).sum())
    centers = centers[keep]
    jac = stretch._exact_jacobian(centers)
    dets = det2(jac)
    off = ~stretch.family.in_strips(centers)
    ratio = float(np.max(operator_norm(jac[off]) / dets[off])) if off.any() else 0.0

    min_on_k: Optional[float] = None
    if mask is not None and not mask.is_empty():
        samples = mask.cell_offset_points(0.25)
        ok = stretch.kink_distance(samples) > KINK_EXCLUSION
        excluded += int((~ok).sum())
        min_on_k = float(det2(stretch._exact_jacobian(samples[ok])).min())

    lp_dx = {exponent_label(p): stretch.lp_dx_phi2(p) for p in LP_REPORT_EXPONENTS}
    lp_dx_bound = {
        exponent_label(p): DX_LP_CONSTANT * t * (stretch.measure_k ** (0 if math.isinf(p) else 1 / (2 * p)))
        for p in LP_REPORT_EXPONENTS
    }
    lp_dy = {
        exponent_label(p): stretch.lp_dy_phi2_minus_one(p) for p in LP_REPORT_EXPONENTS
    }
    report = StretchReport(
        sup_disp=sup_y,
        sup_disp_x=sup_x,
        sup_disp_bound=SUP_DISPLACEMENT_CONSTANT * t * root,
        lp_dx_phi2=lp_dx,
        lp_dx_phi2_bound=lp_dx_bound,
        lp_dy_phi2minus1=lp_dy,
        min_det_on_k=min_on_k,
        min_det_global=float(dets.min()),
        global_det_bound=1 - SUP_DISPLACEMENT_CONSTANT * t * root,
        grad_det_ratio_max=ratio,
        gate_det_bound=stretch.det_lower_bound_in_strips(),
        closed_form_det_bound=stretch.closed_form_det_bound(),
        tau_used=t,
        delta_used=stretch.family.delta,
        N=stretch.family.N,
        M=stretch.family.M,
        measure_k=stretch.measure_k,
        kink_exclusions=excluded,
    )
    logger.info(
        f"Stretch estimates: sup|φ₂−y|={sup_y:.3e} (bound {report.sup_disp_bound:.3e}), "
        f"min det={report.min_det_global:.4f}"
    )
    return report
