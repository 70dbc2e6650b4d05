"""
Verification harness shared by every construction: Jacobian reports,
Sobolev norms, the distributional Jacobian, bi-Lipschitz estimates,
measure transport and degree checks.

All quantities are sampled or integrated by midpoint quadrature; random
pair sampling is seeded per call so reports are reproducible.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import shapely
from shapely.geometry import Polygon

from .boundary import BoundaryCorrectedMap
from .config import CamelModel
from .constants import (
    BUMP_SUITE,
    DEFAULT_PAIR_COUNT,
    DEFAULT_SEED,
    DEFAULT_VERIFY_GRID,
    REPORT_SCHEMA_VERSION,
    WEAK_FORM_TOL,
    exponent_label,
)
from .core import (
    UNIT_SQUARE,
    Box,
    CompactSetMask,
    CompositeMap,
    PlanarMap,
    ScalarField,
    adjugate,
    as_points,
    cell_det_field,
    det2,
    grid_centers,
    lp_norm,
    node_grid,
)
from .domain import FramedMask
from .errors import EtaSupportError

logger = logging.getLogger(__name__)

KINK_EXCLUSION: float = 1e-9
RASTER_REFINEMENT: int = 2


def domain_frame(m: PlanarMap) -> Box:
    """Bounding box of a map's domain, used as the frame of masks and grids."""
    x0, y0, x1, y1 = m.domain.bounds()
    if not all(math.isfinite(v) for v in (x0, y0, x1, y1)):
        return UNIT_SQUARE
    return Box(x0, y0, x1, y1)


def _frame_centers(frame: Box, n: int) -> np.ndarray:
    cx, cy = grid_centers(n)
    return frame.from_unit(np.column_stack([cx.ravel(), cy.ravel()]))


# ============================================================================
# TEST FUNCTIONS AND THE DISTRIBUTIONAL JACOBIAN
# ============================================================================


def _bump_1d(t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    inside = np.abs(t) < 1.0
    s = np.where(inside, 1.0 - t * t, 1.0)
    b = np.where(inside, np.exp(-1.0 / s), 0.0)
    db = np.where(inside, b * (-2.0 * t / (s * s)), 0.0)
    return b, db


@dataclass(frozen=True)
class BumpFunction:
    """Tensor-product bump η(x, y) = b((x−cx)/r)·b((y−cy)/r), b(t) = exp(−1/(1−t²))."""

    cx: float
    cy: float
    radius: float

    @property
    def support(self) -> Box:
        r = self.radius
        return Box(self.cx - r, self.cy - r, self.cx + r, self.cy + r)

    @property
    def sup(self) -> float:
        return math.exp(-2.0)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        p = as_points(points)
        bx, _ = _bump_1d((p[:, 0] - self.cx) / self.radius)
        by, _ = _bump_1d((p[:, 1] - self.cy) / self.radius)
        return bx * by

    def gradient(self, points: np.ndarray) -> np.ndarray:
        p = as_points(points)
        bx, dbx = _bump_1d((p[:, 0] - self.cx) / self.radius)
        by, dby = _bump_1d((p[:, 1] - self.cy) / self.radius)
        return np.column_stack([dbx * by, bx * dby]) / self.radius


def bump_suite(frame: Box = UNIT_SQUARE) -> List[BumpFunction]:
    """The fixed five-bump suite laid over a square frame."""
    width = frame.x1 - frame.x0
    out = []
    for cx, cy, r in BUMP_SUITE:
        center = frame.from_unit([[cx, cy]])[0]
        out.append(BumpFunction(float(center[0]), float(center[1]), r * width))
    return out


def _check_support(m: PlanarMap, support: Box) -> None:
    inner = Box(support.x0, support.y0, support.x1, support.y1)
    frame = domain_frame(m)
    margin = 1e-12
    if (
        inner.x0 <= frame.x0 + margin
        or inner.y0 <= frame.y0 + margin
        or inner.x1 >= frame.x1 - margin
        or inner.y1 >= frame.y1 - margin
        or not m.domain.contains_region(inner)
    ):
        raise EtaSupportError(
            f"test function support [{inner.x0:g},{inner.x1:g}]×[{inner.y0:g},{inner.y1:g}] "
            "must lie strictly inside the domain"
        )


def _quadrature_points(support: Box, n: int) -> Tuple[np.ndarray, float]:
    pts = support.from_unit(np.column_stack([a.ravel() for a in grid_centers(n)]))
    return pts, support.area / (n * n)


def distributional_jacobian(
    m: PlanarMap, eta: Union[BumpFunction, ScalarField], n: int = 256
) -> float:
    """
    Weak determinant 𝒥_φ[η] = −½∫⟨adj∇φ·φ, ∇η⟩ by midpoint quadrature.

    Args:
        m: Map to test
        eta: Bump function, or a sampled field on the unit square that
            vanishes on its boundary cells
        n: Quadrature points per side of the support (bumps only)

    Returns:
        Quadrature value of the weak determinant

    Raises:
        EtaSupportError: the support of η reaches the boundary of the domain
    """
    if isinstance(eta, ScalarField):
        s = eta.samples
        if np.any(s[0, :]) or np.any(s[-1, :]) or np.any(s[:, 0]) or np.any(s[:, -1]):
            raise EtaSupportError("sampled test function must vanish on boundary cells")
        cx, cy = grid_centers(eta.n)
        pts = np.column_stack([cx.ravel(), cy.ravel()])
        gx, gy = np.gradient(s, eta.h)
        grad = np.column_stack([gx.ravel(), gy.ravel()])
        weight = eta.h * eta.h
    else:
        _check_support(m, eta.support)
        pts, weight = _quadrature_points(eta.support, n)
        grad = eta.gradient(pts)

    values = m._evaluate(pts)
    adj = adjugate(m._jacobian_any(pts))
    flux = np.einsum("kij,kj->ki", adj, values)
    return float(-0.5 * np.sum(np.einsum("ki,ki->k", flux, grad)) * weight)


def pointwise_jacobian_integral(m: PlanarMap, eta: BumpFunction, n: int = 256) -> float:
    """∫det∇φ·η by midpoint quadrature over the support of η."""
    pts, weight = _quadrature_points(eta.support, n)
    return float(np.sum(det2(m._jacobian_any(pts)) * eta(pts)) * weight)


def grid_weak_jacobians(
    m: PlanarMap, etas: Sequence[BumpFunction], n: int = DEFAULT_VERIFY_GRID
) -> List[float]:
    """
    𝒥_φ[η] for several bumps from a single evaluation of φ on the node grid
    of the domain's box.

    On each of the n×n cells ∇φ is the centered difference of the four
    corner images and φ their average; the weak determinant is then the
    midpoint rule over the cell centers. The node images come from
    `evaluate_grid`, so a map already sampled at this resolution (for the
    cell determinants) is not evaluated again.

    Args:
        m: Map on a box domain
        etas: Bumps supported strictly inside the domain
        n: Cells per side of the grid

    Returns:
        One quadrature value per bump, in order
    """
    for eta in etas:
        _check_support(m, eta.support)
    img = m.evaluate_grid(n)
    x0, y0, x1, y1 = m.domain.bounds()
    hx, hy = (x1 - x0) / n, (y1 - y0) / n

    values = 0.25 * (img[:-1, :-1] + img[1:, :-1] + img[:-1, 1:] + img[1:, 1:])
    dx = (img[1:, :-1] + img[1:, 1:] - img[:-1, :-1] - img[:-1, 1:]) / (2.0 * hx)
    dy = (img[:-1, 1:] + img[1:, 1:] - img[:-1, :-1] - img[1:, :-1]) / (2.0 * hy)
    jac = np.stack([dx, dy], axis=-1).reshape(-1, 2, 2)
    flux = np.einsum("kij,kj->ki", adjugate(jac), values.reshape(-1, 2))

    X, Y = np.meshgrid(
        x0 + (np.arange(n) + 0.5) * hx, y0 + (np.arange(n) + 0.5) * hy, indexing="ij"
    )
    centers = np.column_stack([X.ravel(), Y.ravel()])
    return [
        float(-0.5 * np.sum(np.einsum("ki,ki->k", flux, eta.gradient(centers))) * hx * hy)
        for eta in etas
    ]


def field_integral_against(f: ScalarField, eta: BumpFunction, n: int = 256) -> float:
    """∫fη with f piecewise constant on its grid."""
    pts, weight = _quadrature_points(eta.support, n)
    return float(np.sum(f.evaluate(pts) * eta(pts)) * weight)


def weak_form_residuals(
    m: PlanarMap, f: ScalarField, n: int = DEFAULT_VERIFY_GRID, tol: float = WEAK_FORM_TOL
) -> Tuple[bool, List[float]]:
    """
    Check 𝒥_φ[η] ≥ ∫fη − tol·‖η‖∞ over the bump suite.

    The map is sampled once on the (n+1)² node grid of the unit square
    and the images are shared by all five bumps.

    Returns:
        Tuple of (all_passed, residuals 𝒥_φ[η] − ∫fη per bump)
    """
    suite = bump_suite(UNIT_SQUARE)
    weak = grid_weak_jacobians(m, suite, n)
    residuals = []
    passed = True
    for eta, jac_eta in zip(suite, weak):
        r = jac_eta - field_integral_against(f, eta, n)
        residuals.append(r)
        if r < -tol * eta.sup:
            passed = False
            logger.warning(
                f"Weak inequality fails for bump at ({eta.cx:g}, {eta.cy:g}): residual {r:.3e}"
            )
    return passed, residuals


# ============================================================================
# BI-LIPSCHITZ AND MEASURE TRANSPORT
# ============================================================================


def _sample_inside(m: PlanarMap, rng: np.random.Generator, count: int) -> np.ndarray:
    frame = domain_frame(m)
    out = np.zeros((0, 2))
    while len(out) < count:
        cand = frame.sample(rng, 2 * count)
        out = np.concatenate([out, cand[m.domain.contains(cand, tol=0.0)]])
    return out[:count]


def bilipschitz_estimate(
    m: PlanarMap,
    pair_count: int = DEFAULT_PAIR_COUNT,
    seed: int = DEFAULT_SEED,
    delta: Optional[float] = None,
) -> Tuple[float, float]:
    """
    Extremes of |φ(x)−φ(y)|/|x−y| over random pairs plus near-diagonal pairs.

    Args:
        m: Map to estimate
        pair_count: Number of random pairs (as many near-diagonal pairs again)
        seed: RNG seed
        delta: Near-diagonal separation (default 1/128 of the frame width)

    Returns:
        Tuple of (lower, upper)
    """
    rng = np.random.default_rng(seed)
    frame = domain_frame(m)
    delta = delta if delta is not None else (frame.x1 - frame.x0) / 128.0

    x = _sample_inside(m, rng, pair_count)
    y = _sample_inside(m, rng, pair_count)
    base = _sample_inside(m, rng, pair_count)
    angle = rng.uniform(0.0, 2.0 * math.pi, pair_count)
    near = base + delta * np.column_stack([np.cos(angle), np.sin(angle)])
    ok = m.domain.contains(near, tol=0.0)

    a = np.concatenate([x, base[ok]])
    b = np.concatenate([y, near[ok]])
    dist = np.linalg.norm(a - b, axis=1)
    keep = dist > 1e-12
    ratios = np.linalg.norm(m._evaluate(a[keep]) - m._evaluate(b[keep]), axis=1) / dist[keep]
    return float(ratios.min()), float(ratios.max())


def _subcell_quads(framed: FramedMask, refinement: int) -> np.ndarray:
    """Corner quads (k, 4, 2) of the mask cells split into 2^r × 2^r subcells."""
    k = 1 << refinement
    d = framed.mask.delta / k
    cells = np.array(framed.mask.sorted_cells(), dtype=float)
    offs = np.arange(k, dtype=float) * d
    ox, oy = np.meshgrid(offs, offs, indexing="ij")
    lower = (cells[:, None, :] * framed.mask.delta
             + np.stack([ox.ravel(), oy.ravel()], axis=1)[None, :, :]).reshape(-1, 2)
    corners = np.array([[0.0, 0.0], [d, 0.0], [d, d], [0.0, d]])
    quads = lower[:, None, :] + corners[None, :, :]
    return framed.frame.from_unit(quads.reshape(-1, 2)).reshape(-1, 4, 2)


def pushforward_crosscheck(
    m: PlanarMap, mask: CompactSetMask, frame: Optional[Box] = None
) -> Tuple[float, float]:
    """
    |φ(M)| two ways: rasterized union of the images of level l+2 subcells,
    and ∫_M det∇φ by midpoint quadrature on the same subcells.

    Returns:
        Tuple of (raster_estimate, quadrature_estimate)
    """
    if mask.is_empty():
        return 0.0, 0.0
    frame = frame if frame is not None else domain_frame(m)
    framed = FramedMask(mask, frame)
    quads = _subcell_quads(framed, RASTER_REFINEMENT)

    images = m._evaluate(quads.reshape(-1, 2)).reshape(-1, 4, 2)
    image = shapely.union_all(shapely.polygons(images))

    h = (frame.x1 - frame.x0) * framed.mask.delta / (1 << RASTER_REFINEMENT)
    bx0, by0, bx1, by1 = image.bounds
    i0, j0 = math.floor(bx0 / h), math.floor(by0 / h)
    i1, j1 = math.ceil(bx1 / h), math.ceil(by1 / h)
    xs = (np.arange(i0, i1) + 0.5) * h
    ys = (np.arange(j0, j1) + 0.5) * h
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    raster = float(np.count_nonzero(shapely.contains_xy(image, X.ravel(), Y.ravel()))) * h * h

    centers = quads.mean(axis=1)
    sub_area = np.abs(Polygon(quads[0]).area)
    quadrature = float(np.sum(det2(m._jacobian_any(centers))) * sub_area)
    return raster, quadrature


def pushforward_measure(m: PlanarMap, mask: CompactSetMask, frame: Optional[Box] = None) -> float:
    """Rasterized measure of φ(M); see pushforward_crosscheck."""
    raster, quadrature = pushforward_crosscheck(m, mask, frame)
    logger.debug(f"Pushforward: raster {raster:.6g}, ∫det {quadrature:.6g}")
    return raster


# ============================================================================
# DEGREE AND BOUNDARY CHECKS
# ============================================================================


def winding_number(curve: Sequence, point: Sequence[float]) -> int:
    """Winding number of a closed polyline (first point not repeated) around a point."""
    c = as_points(curve) - np.asarray(point, dtype=float)
    ang = np.arctan2(c[:, 1], c[:, 0])
    turn = np.diff(np.concatenate([ang, ang[:1]]))
    turn = (turn + math.pi) % (2.0 * math.pi) - math.pi
    return int(round(float(turn.sum()) / (2.0 * math.pi)))


def _box_boundary(frame: Box, samples_per_edge: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, samples_per_edge, endpoint=False)
    unit = np.concatenate(
        [
            np.column_stack([t, np.zeros_like(t)]),
            np.column_stack([np.ones_like(t), t]),
            np.column_stack([1.0 - t, np.ones_like(t)]),
            np.column_stack([np.zeros_like(t), 1.0 - t]),
        ]
    )
    return frame.from_unit(unit)


def boundary_degree(m: PlanarMap, point: Sequence[float], samples_per_edge: int = 400) -> int:
    """Degree of φ at φ(point) read off the image of the frame boundary."""
    curve = m._evaluate(_box_boundary(domain_frame(m), samples_per_edge))
    return winding_number(curve, m.evaluate(as_points(point))[0])


def boundary_error(m: PlanarMap, samples_per_edge: int = 1000) -> float:
    """max |φ(x) − x| over the frame boundary."""
    pts = _box_boundary(domain_frame(m), samples_per_edge)
    return float(np.max(np.linalg.norm(m._evaluate(pts) - pts, axis=1)))


def interface_jumps(m: PlanarMap, samples: int = 500) -> float:
    """Largest interface jump of any boundary-corrected factor (0 if there is none)."""
    factors = m.factors if isinstance(m, CompositeMap) else (m,)
    jumps = [f.interface_jump(samples) for f in factors if isinstance(f, BoundaryCorrectedMap)]
    return max(jumps, default=0.0)


def export_cell_dets(m: PlanarMap, n: int, path: Path) -> pd.DataFrame:
    """Write per-cell average determinants to CSV (columns i, j, x, y, det)."""
    dets = cell_det_field(m, n)
    frame = domain_frame(m)
    centers = _frame_centers(frame, n)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    df = pd.DataFrame(
        {
            "i": ii.ravel(),
            "j": jj.ravel(),
            "x": centers[:, 0],
            "y": centers[:, 1],
            "det": dets.ravel(),
        }
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    logger.info(f"✓ Wrote {len(df)} cell determinants to {path}")
    return df


# ============================================================================
# JACOBIAN REPORT
# ============================================================================


class JacobianReport(CamelModel):
    min_det_on_mask: Optional[float]
    min_det_global: float
    sup_displacement: float
    lp_norms: Dict[str, float]
    w1p_norms: Dict[str, float]
    w1p_constant: Dict[str, Optional[float]]
    bi_lip_lower: float
    bi_lip_upper: float
    distributional_residuals: List[float]
    mass_defect: Optional[float]
    boundary_error: Optional[float]
    sample_count: int
    kink_exclusions: int
    schema_version: str = REPORT_SCHEMA_VERSION


def jacobian_report(
    m: PlanarMap,
    mask: Optional[CompactSetMask] = None,
    grid_n: int = DEFAULT_VERIFY_GRID,
    q: float = 1.5,
    tau: Optional[float] = None,
    pair_count: int = DEFAULT_PAIR_COUNT,
    seed: int = DEFAULT_SEED,
) -> JacobianReport:
    """
    Sampled estimates of a map: determinants on the mask and globally,
    displacement, gradient norms, bi-Lipschitz extremes, distributional
    residuals and the mass defect.

    Args:
        m: Map to verify
        mask: Dyadic mask laid over the bounding box of the map's domain
        grid_n: Samples per side of the global grid (≥ 64)
        q: Extra exponent for the norm table
        tau: Stretch parameter, when the map is a stretch (fills w1pConstant)
        pair_count: Random pairs for the bi-Lipschitz estimate
        seed: RNG seed

    Returns:
        JacobianReport
    """
    if grid_n < 64:
        raise ValueError("grid_n must be at least 64")
    frame = domain_frame(m)
    cell_area = frame.area / (grid_n * grid_n)

    centers = _frame_centers(frame, grid_n)
    centers = centers[m.domain.contains(centers, tol=0.0)]
    keep = m.kink_distance(centers) > KINK_EXCLUSION
    excluded = int((~keep).sum())
    centers = centers[keep]
    jac = m._jacobian_any(centers)
    dets = det2(jac)
    grad_dev = np.linalg.norm(jac - np.eye(2), axis=(1, 2))
    disp_at_centers = np.linalg.norm(m._evaluate(centers) - centers, axis=1)

    nodes = node_grid(frame, grid_n).reshape(-1, 2)
    nodes = nodes[m.domain.contains(nodes)]
    sup_disp = float(np.max(np.linalg.norm(m._evaluate(nodes) - nodes, axis=1)))

    min_on_mask: Optional[float] = None
    measure = 0.0
    if mask is not None and not mask.is_empty():
        framed = FramedMask(mask, frame)
        measure = framed.measure
        samples = framed.sample_points(0.25)
        samples = samples[m.domain.contains(samples, tol=0.0)]
        ok = m.kink_distance(samples) > KINK_EXCLUSION
        excluded += int((~ok).sum())
        if ok.any():
            min_on_mask = float(det2(m._jacobian_any(samples[ok])).min())

    lp: Dict[str, float] = {}
    w1p: Dict[str, float] = {}
    const: Dict[str, Optional[float]] = {}
    for p in (1.0, 2.0, q, math.inf):
        key = exponent_label(p)
        lp[key] = lp_norm(grad_dev, p, cell_area)
        w1p[key] = lp_norm(disp_at_centers, p, cell_area) + lp[key]
        scale = None
        if tau and measure > 0:
            scale = tau * measure ** (0.0 if math.isinf(p) else 1.0 / (2.0 * p))
        const[key] = w1p[key] / scale if scale else None

    lower, upper = bilipschitz_estimate(m, pair_count, seed)

    residuals: List[float] = []
    if frame.x1 - frame.x0 == frame.y1 - frame.y0:
        for eta in bump_suite(frame):
            if not m.domain.contains_region(eta.support):
                continue
            weak = distributional_jacobian(m, eta, 128)
            residuals.append(weak - pointwise_jacobian_integral(m, eta, 128))

    mass_defect: Optional[float] = None
    edge_err: Optional[float] = None
    if isinstance(m.domain, Box):
        mass_defect = abs(float(cell_det_field(m, grid_n).mean()) - 1.0) * frame.area
        edge_err = boundary_error(m, 4 * grid_n)

    report = JacobianReport(
        min_det_on_mask=min_on_mask,
        min_det_global=float(dets.min()),
        sup_displacement=sup_disp,
        lp_norms=lp,
        w1p_norms=w1p,
        w1p_constant=const,
        bi_lip_lower=lower,
        bi_lip_upper=upper,
        distributional_residuals=residuals,
        mass_defect=mass_defect,
        boundary_error=edge_err,
        sample_count=int(len(centers)),
        kink_exclusions=excluded,
    )
    logger.info(
        f"✓ Jacobian report: min det on mask {min_on_mask}, global {report.min_det_global:.4f}, "
        f"bi-Lipschitz [{lower:.4f}, {upper:.4f}]"
    )
    return report
