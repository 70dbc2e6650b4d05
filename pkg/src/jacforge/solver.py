"""
Assembly pipelines for det∇φ ≥ f on the unit square.

- `solve_lp_small`: iterated stretching of transported superlevel sets for
  right-hand sides that are small in Lᵖ.
- `solve_lp`: mollify, solve the smooth equation with the Moser flow, and
  correct the defect set with `solve_lp_small`.
- `solve_linf`: bounded right-hand sides with ∫f < 1, one smooth solve
  followed by one stretch.
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
from pydantic import Field, PrivateAttr, model_validator
from scipy.ndimage import distance_transform_edt

from .boundary import stretch_unit_square
from .config import CamelModel, MoserConfig
from .constants import (
    DEFAULT_MAX_ITER,
    DEFAULT_MEASURE_TOL,
    DEFAULT_PRAGMATIC_TAU0,
    DEFAULT_SEED,
    DEFAULT_SMALLNESS,
    DEFAULT_STALL_RATIO,
    DEFAULT_STRETCH_CONSTANT,
    EPSILON_CHECK_POINTS,
    STALL_PATIENCE,
    SUPERLEVEL_THRESHOLD,
    TAU0_RELATIVE_TOL,
    admissible_measure,
)
from .core import (
    UNIT_SQUARE,
    CompactSetMask,
    CompositeMap,
    IdentityMap,
    PlanarMap,
    ScalarField,
    cell_det_field,
    compose_all,
    det2,
    grid_centers,
    lp_norm,
    mask_from_points,
    mask_measure,
)
from .errors import (
    DecayStalledError,
    EpsilonSearchFailedError,
    GridMismatchError,
    InfeasibleExponentsError,
    NecessaryConditionError,
    SmallnessError,
    ToleranceNotMetError,
)
from .moser import mollify, mollify_and_lift, moser_solve, superlevel_defect_set

logger = logging.getLogger(__name__)

# slack on cell-averaged determinants when counting satisfied cells
CELL_DET_TOL: float = 1e-6


# ============================================================================
# PARAMETERS
# ============================================================================


def choose_tau0(p: float, q: float, C: float = DEFAULT_STRETCH_CONSTANT) -> Tuple[float, float]:
    """
    Pick λ at the midpoint of its admissible range and the smallest τ₀ ≥ 1 with
    C^{1/(q−1)}(1+Cτ₀) ≤ (1+τ₀)^{1+λ}.

    Args:
        p: Integrability exponent of f
        q: Sobolev exponent of the solution
        C: Stretch constant

    Returns:
        Tuple of (lambda, tau0)

    Raises:
        InfeasibleExponentsError: no λ > 0 with 2(1+λ)(q−1) < p−1
    """
    if q <= 1 or C <= 0:
        raise InfeasibleExponentsError(f"need q > 1 and C > 0, got q={q}, C={C}")
    lam = ((p - 1) / (2 * (q - 1)) - 1) / 2
    if lam <= 0:
        raise InfeasibleExponentsError(
            f"exponents p={p:g}, q={q:g} violate q < (p+1)/2 (λ = {lam:.4g})"
        )

    def gap(tau: float) -> float:
        return (1 + lam) * math.log1p(tau) - math.log(C) / (q - 1) - math.log1p(C * tau)

    if gap(1.0) >= 0:
        return lam, 1.0
    lo, hi = 1.0, 2.0
    while gap(hi) < 0:
        lo, hi = hi, 2 * hi
        if hi > 1e300:
            raise InfeasibleExponentsError(f"no τ₀ found for p={p:g}, q={q:g}")
    while (hi - lo) > TAU0_RELATIVE_TOL * hi:
        mid = 0.5 * (lo + hi)
        if gap(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return lam, hi


class LpConfig(CamelModel):
    """Exponents and iteration controls of the Lᵖ pipeline."""

    p: float = Field(3.0, gt=1)
    q: float = Field(1.5, gt=1)
    lam: float = Field(0.5, gt=0)
    tau0_certified: float = Field(1.0, ge=1)
    tau0: float = Field(DEFAULT_PRAGMATIC_TAU0, gt=0)
    C: float = Field(DEFAULT_STRETCH_CONSTANT, gt=0)
    max_iter: int = Field(DEFAULT_MAX_ITER, ge=1)
    measure_tol: float = Field(DEFAULT_MEASURE_TOL, gt=0)
    stall_ratio: float = Field(DEFAULT_STALL_RATIO, gt=0)
    lp_gate: Optional[float] = None
    smallness: float = Field(DEFAULT_SMALLNESS, gt=0)
    boundary: bool = True

    @model_validator(mode="after")
    def _check_relation(self) -> "LpConfig":
        if not 2 * (1 + self.lam) * (self.q - 1) < self.p - 1:
            raise ValueError(
                f"λ={self.lam:g} violates 2(1+λ)(q−1) < p−1 for p={self.p:g}, q={self.q:g}"
            )
        if self.lp_gate is None:
            self.lp_gate = admissible_measure(self.tau0) ** (1.0 / self.p) / 2.0
        return self

    @classmethod
    def for_exponents(cls, p: float, q: float, **overrides) -> "LpConfig":
        C = overrides.get("C", DEFAULT_STRETCH_CONSTANT)
        lam, certified = choose_tau0(p, q, C)
        return cls(p=p, q=q, lam=lam, tau0_certified=certified, **overrides)


class LinfConfig(CamelModel):
    C: float = Field(DEFAULT_STRETCH_CONSTANT, gt=0)
    smallness: float = Field(DEFAULT_SMALLNESS, gt=0)
    initial_width: float = Field(0.125, gt=0)
    measure_tol: float = Field(DEFAULT_MEASURE_TOL, gt=0)
    boundary: bool = True


# ============================================================================
# SUPERLEVEL SETS AND TRANSPORT
# ============================================================================


def _level_of(n: int) -> int:
    if n & (n - 1):
        raise GridMismatchError(f"field grid must be 2^l, got {n}")
    return n.bit_length() - 1


def superlevel_mask(f: ScalarField, det_field: Optional[np.ndarray] = None) -> CompactSetMask:
    """Cells where f/det ≥ 1/2 at the center (det ≡ 1 when omitted)."""
    samples = f.samples
    if det_field is None:
        det = np.ones_like(samples)
    else:
        det = det_field.samples if isinstance(det_field, ScalarField) else np.asarray(det_field)
        if det.shape != samples.shape:
            raise GridMismatchError(f"field grid {samples.shape} vs det grid {det.shape}")
    _level_of(f.n)
    return CompactSetMask.from_array(samples >= SUPERLEVEL_THRESHOLD * det)


def transport_mask(m: PlanarMap, mask: CompactSetMask, offset: float = 0.25) -> CompactSetMask:
    """Rasterized image φ(A): cell centers and four offset points, at A's level."""
    if mask.is_empty():
        return mask
    pts = np.concatenate([mask.centers(), mask.cell_offset_points(offset)])
    return mask_from_points(m._evaluate(pts), mask.level)


# ============================================================================
# Lᵖ ITERATION
# ============================================================================


class IterationRecord(CamelModel):
    i: int
    measure_mi: float
    measure_ai: float
    min_det_on_mi: Optional[float]
    min_det_global: float
    w1q_increment: float
    depth: int
    ratio: Optional[float]


class IterationTrace(CamelModel):
    tau0: float
    tau0_certified: float
    lam: float
    records: List[IterationRecord] = []
    converged: bool = False
    final_measure: float = 0.0
    _masks: List[CompactSetMask] = PrivateAttr(default_factory=list)

    @property
    def masks(self) -> List[CompactSetMask]:
        """The stretched sets M_i, in iteration order."""
        return self._masks

    @property
    def iterations(self) -> int:
        return sum(1 for r in self.records if r.min_det_on_mi is not None)


def _w1q_increment(
    prev: PlanarMap, cur: PlanarMap, pts: np.ndarray, q: float, weight: float
) -> float:
    disp = np.linalg.norm(cur._evaluate(pts) - prev._evaluate(pts), axis=1)
    grad = np.linalg.norm(cur._jacobian_any(pts) - prev._jacobian_any(pts), axis=(1, 2))
    return lp_norm(disp, q, weight) + lp_norm(grad, q, weight)


def solve_lp_small(f: ScalarField, cfg: LpConfig) -> Tuple[PlanarMap, IterationTrace]:
    """
    Iterate φ_i = stretch of M_i = Φ_{i−1}(A_i) with
    A_i = A_{i−1} ∩ {f ≥ ½ det∇Φ_{i−1}} and Φ_i = φ_i∘Φ_{i−1}.

    Args:
        f: Right-hand side on a 2^l grid, small in Lᵖ
        cfg: Exponents, τ₀ and iteration controls

    Returns:
        Tuple of (composed map, per-iteration trace)

    Raises:
        SmallnessError: ‖f‖_{Lᵖ} above the configured gate
        DecayStalledError: |M_i| stops decaying
    """
    n = f.n
    _level_of(n)
    norm = f.lp_norm(cfg.p)
    if norm > cfg.lp_gate:
        logger.error(f"‖f‖_{cfg.p:g} = {norm:.4g} exceeds gate {cfg.lp_gate:.4g}")
        raise SmallnessError(
            f"‖f‖_Lp = {norm:.4g} exceeds the gate {cfg.lp_gate:.4g} (p={cfg.p:g})"
        )

    trace = IterationTrace(tau0=cfg.tau0, tau0_certified=cfg.tau0_certified, lam=cfg.lam)
    cx, cy = grid_centers(n)
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    weight = 1.0 / (n * n)

    factors: List[PlanarMap] = []
    running: PlanarMap = IdentityMap(UNIT_SQUARE)
    det_field = np.ones((n, n))
    active = superlevel_mask(f)
    prev_measure: Optional[float] = None
    stalled = 0

    for i in range(1, cfg.max_iter + 1):
        if i > 1:
            active = active.intersection(superlevel_mask(f, det_field))
        target = transport_mask(running, active)
        measure = mask_measure(target)
        ratio = measure / prev_measure if prev_measure else None

        if target.is_empty() or measure < cfg.measure_tol:
            trace.records.append(
                IterationRecord(
                    i=i,
                    measure_mi=measure,
                    measure_ai=mask_measure(active),
                    min_det_on_mi=None,
                    min_det_global=float(det_field.min()),
                    w1q_increment=0.0,
                    depth=running.depth,
                    ratio=ratio,
                )
            )
            trace.converged = True
            trace.final_measure = measure
            logger.info(f"✓ Lp iteration converged at i={i}: |M_i| = {measure:.3e}")
            break

        if ratio is not None and ratio > cfg.stall_ratio:
            stalled += 1
            if stalled >= STALL_PATIENCE:
                raise DecayStalledError(
                    f"|M_i| ratio above {cfg.stall_ratio:g} for {stalled} iterations "
                    f"(last {ratio:.4f})"
                )
        else:
            stalled = 0

        trace.masks.append(target)
        step = stretch_unit_square(target, cfg.tau0, cfg.boundary, cfg.smallness)
        factors.append(step)
        previous = running
        running = CompositeMap(factors)

        det_field = cell_det_field(running, n)
        on_target = det2(step._jacobian_any(target.cell_offset_points(0.25)))
        increment = _w1q_increment(previous, running, centers, cfg.q, weight)
        trace.records.append(
            IterationRecord(
                i=i,
                measure_mi=measure,
                measure_ai=mask_measure(active),
                min_det_on_mi=float(on_target.min()),
                min_det_global=float(det_field.min()),
                w1q_increment=increment,
                depth=running.depth,
                ratio=ratio,
            )
        )
        logger.info(
            f"Iteration {i}: |M_i| = {measure:.3e}, det on M_i ≥ {on_target.min():.4f}, "
            f"global det ≥ {det_field.min():.4f}, W1q increment {increment:.3e}"
        )
        prev_measure = measure
    else:
        trace.final_measure = trace.records[-1].measure_mi if trace.records else 0.0
        logger.warning(f"Lp iteration stopped at max_iter={cfg.max_iter}")

    return running, trace


# ============================================================================
# Lᵖ PIPELINE
# ============================================================================


class LpSolveReport(CamelModel):
    epsilon: float
    l_eps: float
    defect_measure: float
    transported_measure: float
    moser_residual: float
    iterations: int
    fraction_satisfied: float
    min_det_global: float
    tau0: float
    tau0_certified: float


def fraction_satisfied(m: PlanarMap, f: ScalarField) -> Tuple[float, float]:
    """Fraction of grid cells whose average det is at least f, and the min det."""
    dets = cell_det_field(m, f.n)
    ok = dets >= f.samples - CELL_DET_TOL
    return float(ok.mean()), float(dets.min())


def require_fraction(frac: float, measure_tol: float, pipeline: str) -> None:
    """
    Final gate of both pipelines.

    Raises:
        ToleranceNotMetError: det ≥ f fails on more than measure_tol of the cells
    """
    if frac < 1.0 - measure_tol:
        logger.error(f"{pipeline}: det ≥ f holds on only {100 * frac:.2f}% of cells")
        raise ToleranceNotMetError(f"{pipeline}: det ≥ f fails on some cells", frac)


def transported_rhs(
    psi: PlanarMap, f: ScalarField, f_eps: ScalarField, defect: CompactSetMask
) -> ScalarField:
    """(f/f_ε)χ_A carried through ψ: each image cell takes the largest value landing in it."""
    n = f.n
    g = np.zeros((n, n))
    if defect.is_empty():
        return ScalarField(g)
    pts = np.concatenate([defect.centers(), defect.cell_offset_points(0.25)])
    ratio = f.evaluate(pts) / f_eps.evaluate(pts)
    img = psi._evaluate(pts)
    i = np.clip(np.floor(img[:, 0] * n).astype(int), 0, n - 1)
    j = np.clip(np.floor(img[:, 1] * n).astype(int), 0, n - 1)
    np.maximum.at(g, (i, j), ratio)
    return ScalarField(g)


def solve_lp(
    f: ScalarField,
    p: float = 3.0,
    q: float = 1.5,
    delta: float = 0.1,
    eps: float = 0.125,
    cfg: Optional[LpConfig] = None,
    moser_cfg: Optional[MoserConfig] = None,
) -> Tuple[PlanarMap, LpSolveReport, Optional[IterationTrace]]:
    """
    φ = φ_ε∘ψ_ε: Moser flow on the mollified and lifted field, then the
    small-norm iteration on the transported defect.

    Args:
        f: Nonnegative right-hand side with ∫f < 1
        p, q: Exponents
        delta: Lift δ with (1+δ)∫f < 1−δ
        eps: Initial mollifier width, halved until the transported defect
            is admissible for the stretch
        cfg: Iteration config (default derived from p, q)
        moser_cfg: Moser flow settings

    Returns:
        Tuple of (map, report, trace of the defect iteration or None)

    Raises:
        NecessaryConditionError: ∫f ≥ |Ω|
        ToleranceNotMetError: the composed map misses det ≥ f on the cell grid
    """
    if f.integral() >= 1.0:
        raise NecessaryConditionError(f"∫f = {f.integral():.6f} must be below |Ω| = 1")
    cfg = cfg if cfg is not None else LpConfig.for_exponents(p, q)
    moser_cfg = moser_cfg if moser_cfg is not None else MoserConfig()
    allowance = admissible_measure(cfg.tau0) / 2.0

    while True:
        mollified = mollify_and_lift(f, delta, eps)
        psi = moser_solve(mollified.result, moser_cfg.tol, moser_cfg.rk4_steps, raise_on_miss=False)
        defect = superlevel_defect_set(f, mollified.result, delta)
        moved = transport_mask(psi, defect)
        if mask_measure(moved) <= allowance or int(math.floor(eps * f.n)) == 0:
            break
        logger.info(
            f"Defect |ψ(A_ε)| = {mask_measure(moved):.3e} above {allowance:.3e}; halving ε={eps:g}"
        )
        eps /= 2.0

    g = transported_rhs(psi, f, mollified.result, defect)
    trace: Optional[IterationTrace] = None
    if g.samples.any():
        phi_eps, trace = solve_lp_small(g, cfg)
        result = compose_all([psi, phi_eps])
    else:
        result = psi

    frac, min_det = fraction_satisfied(result, f)
    require_fraction(frac, cfg.measure_tol, "Lp solve")
    report = LpSolveReport(
        epsilon=eps,
        l_eps=mollified.l_eps,
        defect_measure=mask_measure(defect),
        transported_measure=mask_measure(moved),
        moser_residual=psi.report.det_residual_inf if psi.report else 0.0,
        iterations=trace.iterations if trace else 0,
        fraction_satisfied=frac,
        min_det_global=min_det,
        tau0=cfg.tau0,
        tau0_certified=cfg.tau0_certified,
    )
    logger.info(f"✓ Lp solve: det ≥ f on {100 * frac:.2f}% of cells (ε={eps:g})")
    return result, report, trace


# ============================================================================
# L∞ PIPELINE
# ============================================================================


class LinfSolveReport(CamelModel):
    beta: float
    tau0: float
    eps0: float
    width: float
    f_nu_min: float
    f_nu_max: float
    measure_a: float
    measure_phi_a: float
    moser_residual: float
    fraction_satisfied: float
    min_det_global: float


def linf_epsilon(beta: float, sup_f: float, tau0: float, C: float, smallness: float) -> float:
    """
    Largest ε₀ with (1 − Cτ₀√((‖f‖∞+1)ε₀))(β/2 + y) ≥ y on [0, ‖f‖∞] that
    also keeps the stretched set within the smallness gates.

    Raises:
        EpsilonSearchFailedError: the inequality fails on the check grid
    """
    big = sup_f + 1.0
    root = (beta / 2) / ((beta / 2 + sup_f) * C * tau0)
    eps0 = min(root * root / big, smallness / big, (smallness / tau0) ** 2 / big)
    eps0 = min(eps0, admissible_measure(tau0) / big)

    ys = np.linspace(0.0, sup_f, EPSILON_CHECK_POINTS)
    factor = 1.0 - C * tau0 * math.sqrt(big * eps0)
    if not (eps0 > 0 and np.all(factor * (beta / 2 + ys) >= ys - 1e-12)):
        raise EpsilonSearchFailedError(
            f"no admissible ε₀ for β={beta:.4g}, ‖f‖∞={sup_f:.4g}, τ₀={tau0:.4g}"
        )
    return eps0


def solve_linf(
    f: ScalarField,
    cfg: Optional[LinfConfig] = None,
    moser_cfg: Optional[MoserConfig] = None,
) -> Tuple[PlanarMap, LinfSolveReport]:
    """
    Bounded right-hand side: φ = ψ∘ϕ with ϕ the Moser flow of f_ν and ψ the
    stretch of ϕ(A), A = {f_ν < β/2 + f}.

    Raises:
        NecessaryConditionError: ∫f ≥ |Ω|
        EpsilonSearchFailedError: no admissible ε₀, or |A| > ε₀ at every width
        ToleranceNotMetError: the composed map misses det ≥ f on the cell grid
    """
    cfg = cfg if cfg is not None else LinfConfig()
    moser_cfg = moser_cfg if moser_cfg is not None else MoserConfig()
    n = f.n
    _level_of(n)
    beta = 1.0 - f.integral()
    if beta <= 0:
        raise NecessaryConditionError(f"∫f = {f.integral():.6f} must be below |Ω| = 1")
    sup_f = f.sup()
    tau0 = max(1.0, 2.0 * sup_f / beta - 1.0)
    eps0 = linf_epsilon(beta, sup_f, tau0, cfg.C, cfg.smallness)
    logger.info(f"L∞ solve: β={beta:.4f}, τ₀={tau0:.4f}, ε₀={eps0:.3e}")

    width = cfg.initial_width
    while True:
        conv = mollify(f.samples, width, outside=1.0)
        f_nu = conv + (1.0 - conv.mean())
        defect = CompactSetMask.from_array(f_nu < beta / 2 + f.samples)
        sandwich = f_nu.min() >= beta / 2 - 1e-12 and f_nu.max() <= sup_f + 1 + 1e-12
        if (sandwich and mask_measure(defect) <= eps0) or int(math.floor(width * n)) == 0:
            break
        width /= 2.0
    if not sandwich:
        raise EpsilonSearchFailedError(
            f"f_ν leaves [β/2, ‖f‖∞+1] = [{beta / 2:.4g}, {sup_f + 1:.4g}]"
        )
    if mask_measure(defect) > eps0:
        raise EpsilonSearchFailedError(
            f"|A| = {mask_measure(defect):.3e} stays above ε₀ = {eps0:.3e} down to the grid scale"
        )

    phi = moser_solve(ScalarField(f_nu), moser_cfg.tol, moser_cfg.rk4_steps, raise_on_miss=False)
    moved = transport_mask(phi, defect)
    if moved.is_empty():
        result: PlanarMap = phi
    else:
        psi = stretch_unit_square(moved, tau0, cfg.boundary, cfg.smallness)
        result = compose_all([phi, psi])

    frac, min_det = fraction_satisfied(result, f)
    require_fraction(frac, cfg.measure_tol, "L∞ solve")
    report = LinfSolveReport(
        beta=beta,
        tau0=tau0,
        eps0=eps0,
        width=width,
        f_nu_min=float(f_nu.min()),
        f_nu_max=float(f_nu.max()),
        measure_a=mask_measure(defect),
        measure_phi_a=mask_measure(moved),
        moser_residual=phi.report.det_residual_inf if phi.report else 0.0,
        fraction_satisfied=frac,
        min_det_global=min_det,
    )
    logger.info(f"✓ L∞ solve: det ≥ f on {100 * frac:.2f}% of cells, |A| = {report.measure_a:.3e}")
    return result, report


# ============================================================================
# SHARPNESS
# ============================================================================


class C1ObstructionReport(CamelModel):
    net_measure: float
    det_lipschitz: float
    integral_lower_bound: float
    contradiction: bool


def c1_obstruction(mask: CompactSetMask, det_lipschitz: float) -> C1ObstructionReport:
    """
    Lower bound ∫max(2 − L·dist(x, net), 0) on ∫det∇φ for any candidate with
    det ≥ 2 on the net and det L-Lipschitz. Exceeding |Ω| = 1 rules it out.
    """
    grid = mask.to_array()
    if not grid.any():
        bound = 0.0
    else:
        dist = distance_transform_edt(~grid) * mask.delta
        bound = float(np.maximum(2.0 - det_lipschitz * dist, 0.0).mean())
    report = C1ObstructionReport(
        net_measure=mask_measure(mask),
        det_lipschitz=det_lipschitz,
        integral_lower_bound=bound,
        contradiction=bound > 1.0,
    )
    logger.info(
        f"C¹ obstruction: ∫det ≥ {bound:.4f} (L={det_lipschitz:g}), "
        f"contradiction={report.contradiction}"
    )
    return report


def dense_mask(level: int, density: float = 0.45, seed: int = DEFAULT_SEED) -> CompactSetMask:
    """Random mask of about the given density meeting every 4×4 block of cells."""
    n = 1 << level
    rng = np.random.default_rng(seed)
    grid = rng.random((n, n)) < density
    block = 4 if n >= 4 else 1
    for a in range(0, n, block):
        for b in range(0, n, block):
            if not grid[a : a + block, b : b + block].any():
                di, dj = rng.integers(0, block, size=2)
                grid[a + di, b + dj] = True
    return CompactSetMask.from_array(grid)
