"""
Polygonal domains: ear-clipping triangulation, three convex quadrilaterals
per triangle, bilinear charts onto the unit square, and conjugation of
unit-square stretch maps to each piece.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import mapbox_earcut as earcut
import numpy as np
import shapely
from shapely.geometry import Polygon
from shapely.geometry.polygon import orient
from shapely.validation import explain_validity

from .boundary import build_boundary_corrected
from .config import worker_pool
from .constants import (
    BILINEAR_LINEAR_FALLBACK,
    CHART_SAMPLE_GRID,
    DEFAULT_SMALLNESS,
    MAX_CHART_DISTORTION,
)
from .core import (
    SIGNED_SQUARE,
    UNIT_SQUARE,
    AffineMap,
    Box,
    CompactSetMask,
    IdentityMap,
    MapKind,
    PlanarMap,
    Region,
    as_points,
    compose_all,
    grid_centers,
    node_grid,
    singular_values,
)
from .errors import (
    DegenerateTriangleError,
    DistortionError,
    NonConvexQuadError,
    PointOutsideDomainError,
    SelfIntersectingPolygonError,
)

logger = logging.getLogger(__name__)


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


# ============================================================================
# QUADRILATERALS AND BILINEAR CHARTS
# ============================================================================


class ConvexQuad(Region):
    """Strictly convex quadrilateral with corners z1..z4 in counter-clockwise order."""

    def __init__(self, corners: Sequence) -> None:
        z = np.array(corners, dtype=float)
        if z.shape != (4, 2):
            raise NonConvexQuadError(f"a quad needs 4 corners, got shape {z.shape}")
        edges = np.roll(z, -1, axis=0) - z
        turns = _cross(edges, np.roll(edges, -1, axis=0))
        if not np.all(turns > 0):
            raise NonConvexQuadError(
                "corners must form a strictly convex counter-clockwise quadrilateral"
            )
        z.setflags(write=False)
        self.corners = z
        self.alpha, self.beta = self._normalized_corner()
        if not (self.alpha > 0 and self.beta > 0 and self.alpha + self.beta > 1):
            raise NonConvexQuadError(
                f"normalized corner (α, β) = ({self.alpha:.4g}, {self.beta:.4g}) "
                "violates α>0, β>0, α+β>1"
            )

    def _normalized_corner(self) -> Tuple[float, float]:
        z1, z2, z3, z4 = self.corners
        basis = np.column_stack([z2 - z1, z4 - z1])
        alpha, beta = np.linalg.solve(basis, z3 - z1)
        return float(alpha), float(beta)

    def __repr__(self) -> str:
        return f"ConvexQuad({self.corners.tolist()})"

    def vertices(self) -> np.ndarray:
        return np.array(self.corners)

    @property
    def area(self) -> float:
        x, y = self.corners[:, 0], self.corners[:, 1]
        return float(0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        p = as_points(points)
        inside = np.ones(len(p), dtype=bool)
        for k in range(4):
            a = self.corners[k]
            edge = self.corners[(k + 1) % 4] - a
            inside &= _cross(edge, p - a) >= -tol * np.linalg.norm(edge)
        return inside

    def to_shapely(self) -> Polygon:
        return Polygon(self.corners)

    def to_dict(self) -> Dict[str, object]:
        return {"corners": self.corners.tolist(), "alpha": self.alpha, "beta": self.beta}


class BilinearQuadMap(PlanarMap):
    """φ(x,y) = z1 + a·x + b·y + e·xy from [0,1]² onto a convex quad."""

    kind = MapKind.BILINEAR_QUAD

    def __init__(self, quad: ConvexQuad) -> None:
        super().__init__(UNIT_SQUARE, quad)
        self.quad = quad
        z1, z2, z3, z4 = quad.corners
        self.origin = z1
        self.a = z2 - z1
        self.b = z4 - z1
        self.e = z3 - z2 - z4 + z1

    def _evaluate(self, points: np.ndarray) -> np.ndarray:
        x, y = points[:, :1], points[:, 1:]
        return self.origin + self.a * x + self.b * y + self.e * (x * y)

    def _exact_jacobian(self, points: np.ndarray) -> np.ndarray:
        x, y = points[:, :1], points[:, 1:]
        jac = np.empty((len(points), 2, 2))
        jac[:, :, 0] = self.a + self.e * y
        jac[:, :, 1] = self.b + self.e * x
        return jac

    def det_gradient(self) -> np.ndarray:
        """det∇φ is affine in (x, y); returns its constant gradient."""
        return np.array([_cross(self.a, self.e), _cross(self.e, self.b)])

    def invert(self, points: np.ndarray, check: bool = True) -> np.ndarray:
        """Preimages in [0,1]² of points of the quad."""
        p = as_points(points)
        if check:
            inside = self.quad.contains(p)
            if not np.all(inside):
                bad = p[~inside][0]
                raise PointOutsideDomainError(
                    f"point ({bad[0]:.6g}, {bad[1]:.6g}) outside the quadrilateral"
                )
        q = p - self.origin
        A = _cross(self.a, self.e)
        B = _cross(self.a, self.b) - _cross(q, self.e)
        C = -_cross(q, self.b)
        scale = max(abs(_cross(self.a, self.b)), 1e-300)

        if abs(A) <= BILINEAR_LINEAR_FALLBACK * scale:
            candidates = [-C / B]
        else:
            disc = np.sqrt(np.maximum(B * B - 4 * A * C, 0.0))
            # numerically stable pair of roots
            sgn = np.where(B >= 0, 1.0, -1.0)
            qq = -0.5 * (B + sgn * disc)
            with np.errstate(divide="ignore", invalid="ignore"):
                r1 = qq / A
                r2 = np.where(qq != 0, C / qq, r1)
            candidates = [r1, r2]

        best_x = best_y = None
        best_violation = None
        for x in candidates:
            y = self._solve_y(q, x)
            violation = (
                np.maximum(0, -x) + np.maximum(0, x - 1) + np.maximum(0, -y) + np.maximum(0, y - 1)
            )
            violation = np.where(np.isfinite(violation), violation, np.inf)
            if best_x is None:
                best_x, best_y, best_violation = x, y, violation
            else:
                take = violation < best_violation
                best_x = np.where(take, x, best_x)
                best_y = np.where(take, y, best_y)
                best_violation = np.where(take, violation, best_violation)
        return np.column_stack([np.clip(best_x, 0, 1), np.clip(best_y, 0, 1)])

    def _solve_y(self, q: np.ndarray, x: np.ndarray) -> np.ndarray:
        den = self.b + self.e * x[:, None]
        num = q - self.a * x[:, None]
        use_first = np.abs(den[:, 0]) >= np.abs(den[:, 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(use_first, num[:, 0] / den[:, 0], num[:, 1] / den[:, 1])


class InverseBilinearMap(PlanarMap):
    kind = MapKind.INVERSE_BILINEAR

    def __init__(self, chart: BilinearQuadMap) -> None:
        super().__init__(chart.quad, UNIT_SQUARE)
        self.chart = chart

    def _evaluate(self, points: np.ndarray) -> np.ndarray:
        return self.chart.invert(points, check=False)

    def _exact_jacobian(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.inv(self.chart._exact_jacobian(self._evaluate(points)))


def bilinear_quad_map(q: ConvexQuad) -> BilinearQuadMap:
    """Bilinear chart [0,1]² → q with (0,0)→z1, (1,0)→z2, (1,1)→z3, (0,1)→z4."""
    return BilinearQuadMap(q)


def invert_bilinear(q: ConvexQuad, p: Sequence[float]) -> np.ndarray:
    """Unique preimage in [0,1]² of a point of the closed quad."""
    return BilinearQuadMap(q).invert(as_points(p))[0]


def chart_distortion(chart: BilinearQuadMap, n: int = CHART_SAMPLE_GRID) -> float:
    """
    Bi-Lipschitz constant of the chart after removing its mean scale √|q|,
    from the extreme singular values of ∇ψ on an n×n grid.
    """
    x, y = grid_centers(n)
    pts = np.column_stack([x.ravel(), y.ravel()])
    sv = singular_values(chart._exact_jacobian(pts))
    rho = math.sqrt(chart.quad.area)
    return float(max(sv[:, 0].max() / rho, rho / sv[:, 1].min()))


# ============================================================================
# TRIANGLES AND POLYGONS
# ============================================================================


def cover_triangle(t: Sequence) -> List[ConvexQuad]:
    """
    Three convex quads (vertex, edge midpoint, centroid, edge midpoint)
    with disjoint interiors whose union is the triangle.
    """
    v = np.array(t, dtype=float)
    if v.shape != (3, 2):
        raise DegenerateTriangleError(f"a triangle needs 3 vertices, got shape {v.shape}")
    twice_area = _cross(v[1] - v[0], v[2] - v[0])
    size = max(np.ptp(v[:, 0]), np.ptp(v[:, 1]), 1e-300)
    if abs(twice_area) <= 1e-12 * size * size:
        raise DegenerateTriangleError("triangle has (near) zero area")
    if twice_area < 0:
        v = v[[0, 2, 1]]
    g = v.mean(axis=0)
    m01, m12, m20 = (v[0] + v[1]) / 2, (v[1] + v[2]) / 2, (v[2] + v[0]) / 2
    return [
        ConvexQuad([v[0], m01, g, m20]),
        ConvexQuad([v[1], m12, g, m01]),
        ConvexQuad([v[2], m20, g, m12]),
    ]


class PolygonRegion(Region):
    def __init__(self, polygon: Polygon) -> None:
        self.polygon = polygon

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        p = as_points(points)
        return shapely.contains_xy(self.polygon.buffer(tol), p[:, 0], p[:, 1])

    def vertices(self) -> np.ndarray:
        return np.array(self.polygon.exterior.coords)[:-1]

    @property
    def area(self) -> float:
        return float(self.polygon.area)


@dataclass
class PolygonDecomposition:
    polygon: Polygon
    pieces: List[Tuple[ConvexQuad, BilinearQuadMap]] = field(default_factory=list)
    triangle_count: int = 0

    @property
    def quads(self) -> List[ConvexQuad]:
        return [q for q, _ in self.pieces]

    def check_invariants(self, tol: float = 1e-9) -> Tuple[bool, List[str], List[str]]:
        """
        Returns:
            Tuple of (is_valid, errors, warnings)
        """
        errors: List[str] = []
        warnings: List[str] = []
        total = sum(q.area for q in self.quads)
        if abs(total - self.polygon.area) > tol:
            errors.append(f"piece areas sum to {total:.12g}, polygon area {self.polygon.area:.12g}")
        shapes = [q.to_shapely() for q in self.quads]
        for i in range(len(shapes)):
            for j in range(i + 1, len(shapes)):
                overlap = shapes[i].intersection(shapes[j]).area
                if overlap > tol:
                    errors.append(f"pieces {i} and {j} overlap by {overlap:.3e}")
        if not self.pieces:
            warnings.append("decomposition is empty")
        return len(errors) == 0, errors, warnings

    def to_dict(self) -> Dict[str, object]:
        return {
            "outer": np.array(self.polygon.exterior.coords)[:-1].tolist(),
            "holes": [np.array(r.coords)[:-1].tolist() for r in self.polygon.interiors],
            "triangles": self.triangle_count,
            "quads": [q.to_dict() for q in self.quads],
        }


def make_polygon(outer: Sequence, holes: Sequence = ()) -> Polygon:
    """Validated, consistently oriented shapely polygon."""
    poly = Polygon(outer, [list(h) for h in holes])
    if not poly.is_valid:
        raise SelfIntersectingPolygonError(f"invalid polygon: {explain_validity(poly)}")
    if poly.area <= 0:
        raise SelfIntersectingPolygonError("polygon has zero area")
    return orient(poly, sign=1.0)


def triangulate(poly: Polygon) -> np.ndarray:
    """Ear-clipping triangulation; returns an array of shape (t, 3, 2)."""
    rings = [np.array(poly.exterior.coords)[:-1]]
    rings += [np.array(r.coords)[:-1] for r in poly.interiors]
    verts = np.concatenate(rings).astype(np.float64)
    ends = np.cumsum([len(r) for r in rings]).astype(np.uint32)
    indices = np.asarray(earcut.triangulate_float64(verts, ends), dtype=int)
    return verts[indices.reshape(-1, 3)]


def decompose_polygon(outer: Sequence, holes: Sequence = ()) -> PolygonDecomposition:
    """
    Triangulate a simple polygon (holes allowed) and cover every triangle by
    three convex quads with bilinear charts.

    Raises:
        SelfIntersectingPolygonError: the polygon is not valid
    """
    poly = make_polygon(outer, holes)
    triangles = triangulate(poly)
    decomposition = PolygonDecomposition(poly)
    for tri in triangles:
        try:
            quads = cover_triangle(tri)
        except DegenerateTriangleError:
            logger.warning("Skipping a degenerate triangle from the triangulation")
            continue
        decomposition.triangle_count += 1
        decomposition.pieces.extend((q, bilinear_quad_map(q)) for q in quads)
    logger.info(
        f"✓ Decomposed polygon into {decomposition.triangle_count} triangles and "
        f"{len(decomposition.pieces)} quads"
    )
    return decomposition


# ============================================================================
# MASKS IN A PHYSICAL FRAME
# ============================================================================


@dataclass(frozen=True)
class FramedMask:
    """Dyadic mask laid over an axis-aligned frame (e.g. a polygon's bounding box)."""

    mask: CompactSetMask
    frame: Box

    @property
    def measure(self) -> float:
        return self.mask.measure * self.frame.area

    def cell_boxes(self) -> List[Box]:
        d = self.mask.delta
        return [
            Box(*self.frame.from_unit([[i * d, j * d]])[0], *self.frame.from_unit([[(i + 1) * d, (j + 1) * d]])[0])
            for i, j in self.mask.sorted_cells()
        ]

    def sample_points(self, offset: float = 0.25) -> np.ndarray:
        return self.frame.from_unit(self.mask.cell_offset_points(offset))


def pull_back_mask(
    chart: BilinearQuadMap, framed: FramedMask, level: Optional[int] = None, per_edge: int = 4
) -> CompactSetMask:
    """
    Conservative chart-coordinate mask covering ψ⁻¹(M ∩ quad): each
    physical cell is clipped to the quad, its boundary sampled and pulled
    back, and every chart cell meeting the padded bounding box is marked.
    """
    level = framed.mask.level if level is None else level
    n = 1 << level
    quad_shape = chart.quad.to_shapely()
    cells = set()
    t = np.linspace(0.0, 1.0, per_edge + 1)[:-1]
    for box in framed.cell_boxes():
        piece = quad_shape.intersection(
            Polygon(box.vertices())
        )
        if piece.is_empty or piece.area <= 0:
            continue
        ring = np.array(piece.exterior.coords)
        samples = np.concatenate(
            [ring[k] + t[:, None] * (ring[k + 1] - ring[k]) for k in range(len(ring) - 1)]
        )
        pre = chart.invert(samples, check=False)
        lo = np.clip(pre.min(axis=0) - 0.5 / n, 0.0, 1.0)
        hi = np.clip(pre.max(axis=0) + 0.5 / n, 0.0, 1.0)
        i0, j0 = np.floor(lo * n).astype(int)
        i1, j1 = np.ceil(hi * n).astype(int)
        for a in range(i0, min(i1, n)):
            for b in range(j0, min(j1, n)):
                cells.add((a, b))
    return CompactSetMask(level, frozenset(cells))


# ============================================================================
# CONJUGATION
# ============================================================================


def conjugate_stretch(
    piece: Tuple[ConvexQuad, BilinearQuadMap],
    mask: FramedMask,
    tau: float,
    smallness: float = DEFAULT_SMALLNESS,
) -> PlanarMap:
    """
    ψ∘φ̃∘ψ⁻¹ on a quad, with φ̃ the boundary-corrected stretch of the
    pulled-back mask built with 2τ.

    Args:
        piece: (quad, chart ψ: [0,1]² → quad)
        mask: Physical mask (framed)
        tau: Target stretch τ on the mask

    Returns:
        Map on the quad, identity on its boundary, det ≥ 1+τ on the mask

    Raises:
        DistortionError: the chart distortion eats the 2τ margin
    """
    quad, chart = piece
    chart_mask = pull_back_mask(chart, mask)
    if chart_mask.is_empty():
        return IdentityMap(quad)

    distortion = chart_distortion(chart)
    if distortion > MAX_CHART_DISTORTION:
        raise DistortionError(
            f"chart bi-Lipschitz constant {distortion:.3f} exceeds {MAX_CHART_DISTORTION:g}"
        )
    inner = build_boundary_corrected(chart_mask, 2 * tau, smallness)

    to_native = AffineMap.box_to_box(UNIT_SQUARE, SIGNED_SQUARE)
    unit_map = compose_all([to_native, inner, to_native.inverse()])

    # det∇ψ is affine: its relative change over the displacement of φ̃ bounds the loss
    nodes = node_grid(UNIT_SQUARE, CHART_SAMPLE_GRID).reshape(-1, 2)
    displacement = float(np.max(np.linalg.norm(unit_map._evaluate(nodes) - nodes, axis=1)))
    min_det = float(np.min(np.linalg.det(chart._exact_jacobian(nodes))))
    loss = np.linalg.norm(chart.det_gradient()) * displacement / min_det
    achieved = (1 + 2 * tau) * (1 - loss)
    if achieved < 1 + tau:
        raise DistortionError(
            f"chart distortion leaves det ≥ {achieved:.4f} < 1+τ on the mask "
            f"(L={distortion:.3f}, displacement {displacement:.3e})"
        )
    logger.info(
        f"✓ Conjugated stretch on quad: L={distortion:.3f}, "
        f"{len(chart_mask)} chart cells, det ≥ {achieved:.4f} on mask"
    )
    return compose_all([InverseBilinearMap(chart), unit_map, chart])


class PiecewiseMap(PlanarMap):
    """Assembly of per-piece maps over a polygon decomposition."""

    kind = MapKind.PIECEWISE

    def __init__(self, decomposition: PolygonDecomposition, maps: Sequence[PlanarMap]) -> None:
        region = PolygonRegion(decomposition.polygon)
        super().__init__(region, region)
        self.decomposition = decomposition
        self.maps = list(maps)

    @property
    def depth(self) -> int:
        return max((m.depth for m in self.maps), default=0)

    def _locate(self, points: np.ndarray) -> np.ndarray:
        owner = np.full(len(points), -1)
        for k, quad in enumerate(self.decomposition.quads):
            free = owner < 0
            if not np.any(free):
                break
            hit = quad.contains(points[free], tol=1e-12)
            idx = np.nonzero(free)[0][hit]
            owner[idx] = k
        if np.any(owner < 0):
            bad = points[owner < 0][0]
            raise PointOutsideDomainError(
                f"point ({bad[0]:.6g}, {bad[1]:.6g}) lies in no piece"
            )
        return owner

    def _evaluate(self, points: np.ndarray) -> np.ndarray:
        owner = self._locate(points)
        out = np.empty_like(points)
        for k in np.unique(owner):
            sel = owner == k
            out[sel] = self.maps[k]._evaluate(points[sel])
        return out

    def _exact_jacobian(self, points: np.ndarray) -> np.ndarray:
        owner = self._locate(points)
        jac = np.empty((len(points), 2, 2))
        for k in np.unique(owner):
            sel = owner == k
            jac[sel] = self.maps[k]._jacobian_any(points[sel])
        return jac

    def kink_distance(self, points: np.ndarray) -> np.ndarray:
        p = as_points(points)
        owner = self._locate(p)
        dist = np.full(len(p), math.inf)
        for k in np.unique(owner):
            sel = owner == k
            edges = shapely.boundary(self.decomposition.quads[k].to_shapely())
            to_edge = shapely.distance(edges, shapely.points(p[sel]))
            dist[sel] = np.minimum(to_edge, self.maps[k].kink_distance(p[sel]))
        return dist


def build_polygon_stretch(
    decomposition: PolygonDecomposition,
    mask: FramedMask,
    tau: float,
    smallness: float = DEFAULT_SMALLNESS,
) -> PiecewiseMap:
    """Conjugated stretch on every piece (in parallel), assembled into one map."""
    with worker_pool() as pool:
        futures = [
            pool.submit(conjugate_stretch, piece, mask, tau, smallness)
            for piece in decomposition.pieces
        ]
        maps = [f.result() for f in futures]
    stretched = sum(1 for m in maps if m.kind != MapKind.IDENTITY)
    logger.info(f"✓ Assembled polygon map: {stretched}/{len(maps)} pieces stretched")
    return PiecewiseMap(decomposition, maps)
