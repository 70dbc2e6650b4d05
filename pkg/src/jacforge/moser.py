"""
Numerical stand-in for the smooth prescribed-Jacobian solve: mollification
with an integral-preserving lift, and the Moser flow on the unit square.

The flow pushes the density f forward to the uniform density along
ρ_t = (1−t)f + t, so its time-one map ψ satisfies det∇ψ ≈ f. The velocity is
v_t = w/ρ_t with w = ∇u and Δu = f − 1 under zero Neumann data, solved with
a cosine transform.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.fft import dctn, idctn
from scipy.interpolate import RectBivariateSpline
from scipy.ndimage import convolve

from .config import CamelModel, MoserConfig
from .constants import DEFAULT_MOSER_TOL, DEFAULT_RK4_STEPS, FIELD_INTEGRAL_TOL
from .core import (
    UNIT_SQUARE,
    CompactSetMask,
    JacobianMode,
    MapKind,
    PlanarMap,
    ScalarField,
    cell_det_field,
)
from .errors import (
    DeltaInfeasibleError,
    FieldFormatError,
    GridMismatchError,
    NonPositiveFieldError,
    ToleranceNotMetError,
)

logger = logging.getLogger(__name__)


# ============================================================================
# MOLLIFICATION
# ============================================================================


@dataclass(frozen=True)
class MollifiedField:
    base: ScalarField
    delta: float
    epsilon: float
    l_eps: float
    result: ScalarField


def bump_kernel(radius_cells: int) -> np.ndarray:
    """Normalized smooth bump exp(−1/(1−r²)) sampled on integer offsets."""
    if radius_cells <= 0:
        return np.ones((1, 1))
    k = np.arange(-radius_cells, radius_cells + 1, dtype=float) / (radius_cells + 1)
    r2 = k[:, None] ** 2 + k[None, :] ** 2
    kernel = np.where(r2 < 1, np.exp(-1.0 / np.maximum(1.0 - r2, 1e-300)), 0.0)
    return kernel / kernel.sum()


def mollify(samples: np.ndarray, eps: float, outside: float = 0.0) -> np.ndarray:
    """Convolve with a bump of width eps, extending the field by `outside`."""
    n = samples.shape[0]
    radius = int(math.floor(eps * n))
    if radius == 0:
        return np.array(samples, dtype=float)
    return convolve(samples, bump_kernel(radius), mode="constant", cval=outside)


def mollify_and_lift(f: ScalarField, delta: float, eps: float) -> MollifiedField:
    """
    f_ε = (1+δ)ρ_ε∗f + l_ε with f extended by 0, l_ε fixing ∫f_ε = |Ω|.

    Raises:
        DeltaInfeasibleError: (1+δ)∫f ≥ |Ω|(1−δ)
    """
    if delta <= 0:
        raise DeltaInfeasibleError(f"δ must be positive, got {delta}")
    mass = f.integral()
    if (1 + delta) * mass >= 1 - delta:
        raise DeltaInfeasibleError(
            f"(1+δ)∫f = {(1 + delta) * mass:.6f} must be below 1−δ = {1 - delta:.6f}"
        )
    conv = mollify(f.samples, eps)
    lifted = (1 + delta) * conv
    l_eps = 1.0 - float(lifted.mean())
    result = ScalarField(lifted + l_eps)
    logger.info(f"Mollified field: ε={eps:g}, δ={delta:g}, l_ε={l_eps:.6f}")
    return MollifiedField(f, delta, eps, l_eps, result)


def superlevel_defect_set(f: ScalarField, f_eps: ScalarField, delta: float) -> CompactSetMask:
    """Cells where f_ε ≤ (1+δ)f at the center."""
    f.check_same_grid(f_eps)
    n = f.n
    if n & (n - 1):
        raise GridMismatchError(f"defect sets need a 2^l grid, got {n}")
    return CompactSetMask.from_array(f_eps.samples <= (1 + delta) * f.samples)


# ============================================================================
# SPECTRAL NEUMANN POISSON
# ============================================================================


def neumann_potential_coefficients(g: np.ndarray) -> np.ndarray:
    """
    Cosine coefficients û[k, m] of u with Δu = g (mean removed) and zero
    normal derivative, for g sampled at cell centers.
    """
    n = g.shape[0]
    coef = dctn(g, type=2) / (n * n)
    coef[0, :] *= 0.5
    coef[:, 0] *= 0.5
    k = np.arange(n)
    lam = -(math.pi**2) * (k[:, None] ** 2 + k[None, :] ** 2)
    lam[0, 0] = 1.0
    u_hat = coef / lam
    u_hat[0, 0] = 0.0
    return u_hat


def divergence_residual(g: np.ndarray, u_hat: np.ndarray) -> float:
    """max |Δu − (g − mean g)| at cell centers, evaluated in coefficient space."""
    n = g.shape[0]
    k = np.arange(n)
    lam = -(math.pi**2) * (k[:, None] ** 2 + k[None, :] ** 2)
    coef = u_hat * lam
    coef[0, :] *= 2.0
    coef[:, 0] *= 2.0
    lap = idctn(coef * n * n, type=2)
    return float(np.max(np.abs(lap - (g - g.mean()))))


def _gradient_on_nodes(u_hat: np.ndarray, nodes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    k = np.arange(u_hat.shape[0])
    arg = math.pi * k[:, None] * nodes[None, :]
    cos_m = np.cos(arg)
    dsin = -math.pi * k[:, None] * np.sin(arg)
    wx = dsin.T @ u_hat @ cos_m
    wy = cos_m.T @ u_hat @ dsin
    return wx, wy


def _node_average(samples: np.ndarray) -> np.ndarray:
    padded = np.pad(samples, 1, mode="edge")
    return 0.25 * (padded[:-1, :-1] + padded[1:, :-1] + padded[:-1, 1:] + padded[1:, 1:])


class MoserReport(CamelModel):
    det_residual_inf: float
    mass_error: float
    boundary_max_err: float
    div_residual: float
    grid_n: int
    rk4_steps: int


class MoserFlowMap(PlanarMap):
    """Time-one map of the Moser flow; Jacobian by central differences."""

    kind = MapKind.MOSER_FLOW
    jacobian_mode = JacobianMode.FINITE_DIFFERENCE
    fd_step = 1e-5

    def __init__(
        self,
        wx: RectBivariateSpline,
        wy: RectBivariateSpline,
        density: RectBivariateSpline,
        steps: int,
        trivial: bool = False,
    ) -> None:
        super().__init__(UNIT_SQUARE, UNIT_SQUARE)
        self.wx = wx
        self.wy = wy
        self.density = density
        self.steps = steps
        self.trivial = trivial
        self.report: Optional[MoserReport] = None

    @property
    def depth(self) -> int:
        return 0 if self.trivial else 1

    def _velocity(self, p: np.ndarray, t: float) -> np.ndarray:
        x = np.clip(p[:, 0], 0.0, 1.0)
        y = np.clip(p[:, 1], 0.0, 1.0)
        rho = (1 - t) * self.density.ev(x, y) + t
        return np.column_stack([self.wx.ev(x, y), self.wy.ev(x, y)]) / rho[:, None]

    def _evaluate(self, points: np.ndarray) -> np.ndarray:
        if self.trivial:
            return points.copy()
        p = np.array(points, dtype=float)
        dt = 1.0 / self.steps
        for step in range(self.steps):
            t = step * dt
            k1 = self._velocity(p, t)
            k2 = self._velocity(p + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = self._velocity(p + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = self._velocity(p + dt * k3, t + dt)
            p = np.clip(p + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), 0.0, 1.0)
        return p


def moser_solve(
    f: ScalarField,
    tol: float = DEFAULT_MOSER_TOL,
    steps: int = DEFAULT_RK4_STEPS,
    raise_on_miss: bool = True,
) -> MoserFlowMap:
    """
    Approximate ψ: [0,1]² → [0,1]² with det∇ψ ≈ f.

    Args:
        f: Positive field with ∫f = 1
        tol: Target for max |det∇ψ − f| over interior cells
        steps: Fixed RK4 step count
        raise_on_miss: Raise ToleranceNotMetError when the residual exceeds tol;
            otherwise log a warning and keep the map (the residual is in map.report)

    Returns:
        MoserFlowMap with an attached MoserReport

    Raises:
        NonPositiveFieldError: min f ≤ 0
        ToleranceNotMetError: residual above tol (with raise_on_miss)
    """
    samples = f.samples
    if samples.min() <= 0:
        raise NonPositiveFieldError(f"Moser flow needs f > 0 (min {samples.min():.3e})")
    mass = f.integral()
    if abs(mass - 1.0) > FIELD_INTEGRAL_TOL:
        raise FieldFormatError(f"∫f = {mass:.10f} must equal |Ω| = 1")

    n = f.n
    g = samples - 1.0
    u_hat = neumann_potential_coefficients(g)
    div_res = divergence_residual(g, u_hat)

    nodes = np.linspace(0.0, 1.0, n + 1)
    wx, wy = _gradient_on_nodes(u_hat, nodes)
    trivial = bool(np.max(np.abs(u_hat)) == 0.0)
    flow = MoserFlowMap(
        RectBivariateSpline(nodes, nodes, wx),
        RectBivariateSpline(nodes, nodes, wy),
        RectBivariateSpline(nodes, nodes, _node_average(samples), kx=1, ky=1),
        steps,
        trivial,
    )

    dets = cell_det_field(flow, n)
    interior = (slice(1, n - 1), slice(1, n - 1))
    residual = float(np.max(np.abs(dets[interior] - samples[interior])))
    mass_error = abs(float(dets.mean()) - 1.0)
    t = np.linspace(0.0, 1.0, 4 * n + 1)
    zero, one = np.zeros_like(t), np.ones_like(t)
    edge_pts = np.concatenate(
        [np.column_stack(c) for c in ((t, zero), (t, one), (zero, t), (one, t))]
    )
    img = flow._evaluate(edge_pts)
    to_edge = np.minimum(np.minimum(img, 1 - img).min(axis=1), 1.0)
    boundary_err = float(np.max(np.abs(to_edge)))

    flow.report = MoserReport(
        det_residual_inf=residual,
        mass_error=mass_error,
        boundary_max_err=boundary_err,
        div_residual=div_res,
        grid_n=n,
        rk4_steps=steps,
    )
    logger.info(
        f"Moser flow: det residual {residual:.3e}, mass error {mass_error:.3e}, "
        f"boundary error {boundary_err:.3e} ({n}², {steps} RK4 steps)"
    )
    if residual > tol:
        if raise_on_miss:
            raise ToleranceNotMetError("Moser det residual above tolerance", residual)
        logger.warning(f"Moser det residual {residual:.3e} exceeds tol {tol:.1e}")
    return flow


def moser_from_config(f: ScalarField, cfg: MoserConfig) -> MoserFlowMap:
    return moser_solve(f, cfg.tol, cfg.rk4_steps, cfg.raise_on_miss)
