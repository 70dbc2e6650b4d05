"""
Boundary correction on [−1,1]².

The square is split into the central subsquare S = (−c, c)², c = 1 − √|M|,
and four quadrilaterals Q_l, Q_r, Q_d, Q_u between ∂S and the outer edge.
On S a rescaled strip stretch (built with 2τ) is applied; on each
quadrilateral the map stretches the normal coordinate by 1+2τ and
interpolates the tangential coordinate between the trace on ∂S and the
identity on the outer edge.
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np

from .config import StretchConfig
from .constants import (
    ABS_TOL,
    DEFAULT_SMALLNESS,
    GLOBAL_DET_FLOOR,
    MAX_BOUNDARY_SQRT_MEASURE,
    MAX_LEVEL,
)
from .core import (
    SIGNED_SQUARE,
    UNIT_SQUARE,
    AffineMap,
    CompactSetMask,
    MapKind,
    PlanarMap,
    as_points,
    compose_all,
    mask_measure,
)
from .covering import StripFamily
from .errors import SmallnessError
from .stretch import StretchMap, stretch_mask

logger = logging.getLogger(__name__)


def boundary_scale(measure: float, tau: float) -> float:
    """(1 − √|M|(1+2τ)) / (1 − √|M|) for a native-frame measure |M|."""
    s = math.sqrt(measure)
    return (1 - s * (1 + 2 * tau)) / (1 - s)


def rescale_into_subsquare(mask: CompactSetMask, s: float) -> CompactSetMask:
    """
    Conservative image of mask ∩ S under X' = (X − s/2)/(1 − s) (unit frame),
    rasterized one level finer than the mask.
    """
    level = min(mask.level + 1, MAX_LEVEL)
    n = 1 << level
    cells = set()
    d = mask.delta
    for i, j in mask.sorted_cells():
        lo = (np.array([i * d, j * d]) - s / 2) / (1 - s)
        hi = (np.array([(i + 1) * d, (j + 1) * d]) - s / 2) / (1 - s)
        lo = np.clip(lo, 0.0, 1.0)
        hi = np.clip(hi, 0.0, 1.0)
        if np.any(hi - lo <= 0):
            continue
        i0, j0 = np.floor(lo * n).astype(int)
        i1, j1 = np.ceil(hi * n).astype(int)
        for a in range(i0, min(i1, n)):
            for b in range(j0, min(j1, n)):
                cells.add((a, b))
    return CompactSetMask(level, frozenset(cells))


class BoundaryCorrectedMap(PlanarMap):
    kind = MapKind.BOUNDARY_CORRECTED

    def __init__(
        self,
        inner: StretchMap,
        tau: float,
        measure: float,
        mask: Optional[CompactSetMask] = None,
    ) -> None:
        super().__init__(SIGNED_SQUARE, SIGNED_SQUARE)
        self.inner = inner
        self.tau = float(tau)
        self.measure = float(measure)
        self.mask = mask
        self.s = math.sqrt(self.measure)
        self.c = 1.0 - self.s
        self.scale = boundary_scale(self.measure, self.tau)
        self.normal_rate = 1.0 + 2.0 * self.tau

    @property
    def depth(self) -> int:
        return 0 if self.s == 0 else 1

    # ------------------------------------------------------------------
    # pieces
    # ------------------------------------------------------------------

    def _to_inner(self, points: np.ndarray) -> np.ndarray:
        return (points + self.c) / (2 * self.c)

    def _eval_subsquare(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (-self.c + 2 * self.c * self.inner._evaluate(self._to_inner(points)))

    def _trace(self, t_prime: np.ndarray, sigma: np.ndarray, horizontal: bool) -> Tuple[np.ndarray, np.ndarray]:
        """
        Tangential trace g(t') of the map on ∂S and its derivative g'(t').
        horizontal=True means the edges x = ±c (quadrilaterals Q_l, Q_r).
        """
        t_inner = (t_prime + self.c) / (2 * self.c)
        values = np.empty_like(t_prime)
        slopes = np.empty_like(t_prime)
        for side, edge in ((1.0, 1.0), (-1.0, 0.0)):
            sel = sigma == side
            if not np.any(sel):
                continue
            if horizontal:
                v, dv = self.inner.edge_trace_y(t_inner[sel], edge)
            else:
                v, dv = self.inner.edge_trace_x(t_inner[sel], edge)
            values[sel] = self.scale * (-self.c + 2 * self.c * v)
            slopes[sel] = self.scale * dv
        return values, slopes

    def _quad_parts(self, a: np.ndarray, t: np.ndarray, sigma: np.ndarray, horizontal: bool):
        s, c = self.s, self.c
        t_prime = c * t / a
        g, dg = self._trace(t_prime, sigma, horizontal)
        normal = sigma * (1 - self.normal_rate * (1 - a))
        tangential = (a - c) / (a * s) * t + (1 - a) / s * g
        d_a = t * c / (a * a * s) - g / s - (1 - a) * dg * c * t / (a * a * s)
        d_t = (a - c) / (a * s) + (1 - a) * c * dg / (a * s)
        return normal, tangential, d_a, d_t

    def _eval_horizontal(self, points: np.ndarray) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        sigma = np.where(x >= 0, 1.0, -1.0)
        normal, tangential, _, _ = self._quad_parts(np.abs(x), y, sigma, True)
        return np.column_stack([normal, tangential])

    def _eval_vertical(self, points: np.ndarray) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        sigma = np.where(y >= 0, 1.0, -1.0)
        normal, tangential, _, _ = self._quad_parts(np.abs(y), x, sigma, False)
        return np.column_stack([tangential, normal])

    def regions(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Boolean selectors (S, Q_l ∪ Q_r, Q_d ∪ Q_u)."""
        ax, ay = np.abs(points[:, 0]), np.abs(points[:, 1])
        in_s = np.maximum(ax, ay) <= self.c
        horizontal = ~in_s & (ax >= ay)
        vertical = ~in_s & ~horizontal
        return in_s, horizontal, vertical

    # ------------------------------------------------------------------
    # PlanarMap interface
    # ------------------------------------------------------------------

    def _evaluate(self, points: np.ndarray) -> np.ndarray:
        if self.s == 0:
            return points.copy()
        out = np.empty_like(points)
        in_s, horizontal, vertical = self.regions(points)
        if np.any(in_s):
            out[in_s] = self._eval_subsquare(points[in_s])
        if np.any(horizontal):
            out[horizontal] = self._eval_horizontal(points[horizontal])
        if np.any(vertical):
            out[vertical] = self._eval_vertical(points[vertical])
        return out

    def _exact_jacobian(self, points: np.ndarray) -> np.ndarray:
        jac = np.zeros((len(points), 2, 2))
        if self.s == 0:
            jac[:, 0, 0] = jac[:, 1, 1] = 1.0
            return jac
        in_s, horizontal, vertical = self.regions(points)
        if np.any(in_s):
            jac[in_s] = self.scale * self.inner._exact_jacobian(self._to_inner(points[in_s]))
        if np.any(horizontal):
            p = points[horizontal]
            sigma = np.where(p[:, 0] >= 0, 1.0, -1.0)
            _, _, d_a, d_t = self._quad_parts(np.abs(p[:, 0]), p[:, 1], sigma, True)
            jac[horizontal, 0, 0] = self.normal_rate
            jac[horizontal, 1, 0] = sigma * d_a
            jac[horizontal, 1, 1] = d_t
        if np.any(vertical):
            p = points[vertical]
            sigma = np.where(p[:, 1] >= 0, 1.0, -1.0)
            _, _, d_a, d_t = self._quad_parts(np.abs(p[:, 1]), p[:, 0], sigma, False)
            jac[vertical, 0, 0] = d_t
            jac[vertical, 0, 1] = sigma * d_a
            jac[vertical, 1, 1] = self.normal_rate
        return jac

    def quad_jacobian(self, points) -> np.ndarray:
        """Exact Jacobian at points of Q_l (x < −|y| and x < −c)."""
        pts = as_points(points)
        _, horizontal, _ = self.regions(pts)
        if not np.all(horizontal & (pts[:, 0] < 0)):
            raise ValueError("quad_jacobian expects points of the left quadrilateral")
        return self.jacobian(pts, strict=True)

    def _trace_kinks(self, horizontal: bool, edge: float) -> np.ndarray:
        fam = self.inner.family
        graphs = fam.horizontal if horizontal else fam.vertical
        d = fam.delta
        knots = []
        for h in graphs:
            v = float(h(np.array([edge]))[0])
            knots.extend([v - d, v + d])
        return -self.c + 2 * self.c * np.array(knots)

    def kink_distance(self, points: np.ndarray) -> np.ndarray:
        p = as_points(points)
        if self.s == 0:
            return np.full(len(p), math.inf)
        ax, ay = np.abs(p[:, 0]), np.abs(p[:, 1])
        dist = np.abs(np.maximum(ax, ay) - self.c)
        in_s, horizontal, vertical = self.regions(p)
        outside = ~in_s
        dist[outside] = np.minimum(dist[outside], np.abs(ax - ay)[outside] / math.sqrt(2))
        if np.any(in_s):
            inner_d = self.inner.kink_distance(self._to_inner(p[in_s])) * 2 * self.c
            dist[in_s] = np.minimum(dist[in_s], inner_d)
        for sel, is_h in ((horizontal, True), (vertical, False)):
            if not np.any(sel):
                continue
            a = ax[sel] if is_h else ay[sel]
            t = p[sel, 1] if is_h else p[sel, 0]
            sign = np.sign(p[sel, 0] if is_h else p[sel, 1])
            local = np.full(len(a), math.inf)
            for side, edge in ((1.0, 1.0), (-1.0, 0.0)):
                knots = self._trace_kinks(is_h, edge)
                if knots.size == 0:
                    continue
                rays = a[:, None] * knots[None, :] / self.c
                gap = np.min(np.abs(t[:, None] - rays), axis=1)
                local = np.where(sign == side, np.minimum(local, gap), local)
            dist[sel] = np.minimum(dist[sel], local)
        return dist

    # ------------------------------------------------------------------
    # diagnostics
    # ------------------------------------------------------------------

    def boundary_error(self, samples_per_edge: int = 1000) -> float:
        """max |φ(p) − p| over points of ∂[−1,1]²."""
        t = np.linspace(-1.0, 1.0, samples_per_edge)
        one = np.ones_like(t)
        pts = np.concatenate(
            [
                np.column_stack([t, -one]),
                np.column_stack([t, one]),
                np.column_stack([-one, t]),
                np.column_stack([one, t]),
            ]
        )
        return float(np.max(np.abs(self._evaluate(pts) - pts)))

    def interface_jump(self, samples: int = 500) -> float:
        """
        Largest mismatch between the formulas of adjacent pieces evaluated
        at the same points of ∂S and of the four diagonals.
        """
        if self.s == 0:
            return 0.0
        c = self.c
        t = np.linspace(-c, c, samples)
        ones = np.ones_like(t)
        jumps = []
        for sx in (-1.0, 1.0):
            edge = np.column_stack([sx * c * ones, t])
            jumps.append(np.abs(self._eval_subsquare(edge) - self._eval_horizontal(edge)))
            edge = np.column_stack([t, sx * c * ones])
            jumps.append(np.abs(self._eval_subsquare(edge) - self._eval_vertical(edge)))
        theta = np.linspace(c, 1.0, samples)
        for sx in (-1.0, 1.0):
            for sy in (-1.0, 1.0):
                diag = np.column_stack([sx * theta, sy * theta])
                jumps.append(np.abs(self._eval_horizontal(diag) - self._eval_vertical(diag)))
        return float(max(j.max() for j in jumps))

    def det_bounds(self) -> Tuple[float, float, float]:
        """(det on S-strips, det on quadrilaterals, global det) lower bounds."""
        inner_min = min(self.inner.coef_x, self.inner.coef_y)
        on_strips = self.scale**2 * min(self.inner.det_lower_bound_in_strips(), 1 + 2 * self.tau)
        quads = self.normal_rate * min(1.0, self.scale * inner_min)
        outside = self.scale**2 * self.inner.det_lower_bound_outside()
        return on_strips, quads, min(outside, quads, on_strips)


def build_boundary_corrected(
    mask: CompactSetMask,
    tau: float,
    smallness: float = DEFAULT_SMALLNESS,
    max_refinements: int = 2,
) -> BoundaryCorrectedMap:
    """
    Boundary-corrected stretch on [−1,1]² for a mask given in the unit frame
    (cell (i, j) of the mask is the cell of [−1,1]² at the same position).

    Args:
        mask: Set M to stretch, unit-frame dyadic mask
        tau: Stretch parameter τ
        smallness: Constant c of the smallness gates

    Returns:
        Map equal to the identity on ∂[−1,1]² with det∇φ ≥ 1+τ on M

    Raises:
        SmallnessError: any of the smallness or determinant gates fails
    """
    measure = 4.0 * mask_measure(mask)
    s = math.sqrt(measure)
    if mask.is_empty():
        inner = StretchMap(StripFamily(mask.delta), 2 * tau, 0.0)
        return BoundaryCorrectedMap(inner, tau, 0.0, mask)

    if max(measure, s * tau) > smallness:
        raise SmallnessError(
            f"max{{|M|, √|M|·τ}} = {max(measure, s * tau):.4g} exceeds c = {smallness:g}"
        )
    if s > MAX_BOUNDARY_SQRT_MEASURE:
        raise SmallnessError(f"√|M| = {s:.4g} exceeds 1/2")
    scale = boundary_scale(measure, tau)
    if scale <= 0:
        raise SmallnessError(f"√|M|(1+2τ) = {s * (1 + 2 * tau):.4g} must be below 1")
    if scale**2 * (1 + 2 * tau) < 1 + tau - ABS_TOL:
        raise SmallnessError(
            f"scale²(1+2τ) = {scale**2 * (1 + 2 * tau):.4f} < 1+τ; |M| too large for τ={tau:g}"
        )

    inner_mask = rescale_into_subsquare(mask, s)
    inner = stretch_mask(inner_mask, 2 * tau, smallness, max_refinements)
    corrected = BoundaryCorrectedMap(inner, tau, measure, mask)

    on_strips, quads, global_det = corrected.det_bounds()
    if min(on_strips, quads) < 1 + tau - ABS_TOL:
        raise SmallnessError(
            f"det bound {min(on_strips, quads):.4f} < 1+τ on the stretched set"
        )
    if global_det < GLOBAL_DET_FLOOR:
        raise SmallnessError(f"global det bound {global_det:.4f} < 1/2")
    logger.info(
        f"✓ Built boundary correction: |M|={measure:.4g}, scale={scale:.4f}, "
        f"det ≥ {min(on_strips, quads):.4f} on M, ≥ {global_det:.4f} globally"
    )
    return corrected


def stretch_unit_square(
    mask: CompactSetMask,
    tau: float,
    boundary: bool = True,
    smallness: float = DEFAULT_SMALLNESS,
    max_refinements: int = 2,
) -> PlanarMap:
    """
    Stretch a unit-square mask. With boundary=True the boundary-corrected
    construction is conjugated to [0,1]² (identity on the boundary);
    otherwise the raw strip stretch (edges preserved, not pointwise fixed).
    """
    if not boundary:
        return stretch_mask(mask, tau, smallness, max_refinements)
    corrected = build_boundary_corrected(mask, tau, smallness, max_refinements)
    to_native = AffineMap.box_to_box(UNIT_SQUARE, SIGNED_SQUARE)
    return compose_all([to_native, corrected, to_native.inverse()])


def stretch_from_config(mask: CompactSetMask, cfg: StretchConfig) -> PlanarMap:
    return stretch_unit_square(
        mask, cfg.tau, cfg.boundary, cfg.smallness, cfg.max_refinements
    )
