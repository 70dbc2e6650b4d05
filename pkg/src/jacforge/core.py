"""
Foundational geometry: dyadic masks, piecewise-linear functions, scalar
fields, regions and evaluable planar maps with lazy composition.

Conventions:
    - Points are float arrays of shape (k, 2) (a single point may be passed
      as a length-2 sequence to the module-level helpers).
    - Jacobians are arrays of shape (k, 2, 2) with J[:, r, c] = ∂φ_r/∂x_c.
    - Grids are indexed [i, j] with i the x index and j the y index.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .constants import ABS_TOL, MAX_LEVEL, cell_size
from .errors import (
    DomainMismatchError,
    GridMismatchError,
    KinkLineError,
    LevelOverflowError,
    NonPositiveFieldError,
    PointOutsideDomainError,
)

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]


def as_points(points: Sequence) -> np.ndarray:
    """Coerce a point or an array of points to a float array of shape (k, 2)."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected points of shape (k, 2), got {arr.shape}")
    return arr


# ============================================================================
# DYADIC MASKS
# ============================================================================


@dataclass(frozen=True)
class CompactSetMask:
    """Union of closed dyadic cells [iδ,(i+1)δ]×[jδ,(j+1)δ] of the unit square."""

    level: int
    cells: FrozenSet[Cell] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if not 0 <= self.level <= MAX_LEVEL:
            raise LevelOverflowError(
                f"level {self.level} outside [0, {MAX_LEVEL}]"
            )
        n = self.size
        for i, j in self.cells:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"cell ({i}, {j}) outside a {n}x{n} grid")

    @property
    def delta(self) -> float:
        return cell_size(self.level)

    @property
    def size(self) -> int:
        return 1 << self.level

    @property
    def measure(self) -> float:
        return mask_measure(self)

    def is_empty(self) -> bool:
        return not self.cells

    def __len__(self) -> int:
        return len(self.cells)

    @classmethod
    def empty(cls, level: int) -> "CompactSetMask":
        return cls(level, frozenset())

    @classmethod
    def full(cls, level: int) -> "CompactSetMask":
        n = 1 << level
        return cls(level, frozenset((i, j) for i in range(n) for j in range(n)))

    @classmethod
    def from_array(cls, grid: np.ndarray) -> "CompactSetMask":
        """Build from a boolean array indexed [i, j] with a power-of-two side."""
        grid = np.asarray(grid, dtype=bool)
        n = grid.shape[0]
        if grid.shape != (n, n) or n & (n - 1):
            raise GridMismatchError(f"mask grid must be 2^l x 2^l, got {grid.shape}")
        level = n.bit_length() - 1
        ii, jj = np.nonzero(grid)
        return cls(level, frozenset(zip(ii.tolist(), jj.tolist())))

    def to_array(self) -> np.ndarray:
        grid = np.zeros((self.size, self.size), dtype=bool)
        if self.cells:
            idx = np.array(sorted(self.cells), dtype=int)
            grid[idx[:, 0], idx[:, 1]] = True
        return grid

    def sorted_cells(self) -> List[Cell]:
        return sorted(self.cells)

    def centers(self) -> np.ndarray:
        """Cell centers in sorted cell order, shape (k, 2)."""
        if not self.cells:
            return np.zeros((0, 2))
        idx = np.array(self.sorted_cells(), dtype=float)
        return (idx + 0.5) * self.delta

    def cell_offset_points(self, offset: float) -> np.ndarray:
        """Four points per cell at center ± offset·δ in both axes."""
        centers = self.centers()
        d = offset * self.delta
        shifts = np.array([[-d, -d], [d, -d], [-d, d], [d, d]])
        return (centers[:, None, :] + shifts[None, :, :]).reshape(-1, 2)

    def contains_points(self, points: Sequence) -> np.ndarray:
        """Closed-cell membership test for each point."""
        pts = as_points(points)
        n = self.size
        grid = self.to_array()
        inside = np.zeros(len(pts), dtype=bool)
        # a point on a cell edge belongs to every adjacent cell
        for dx in (0.0, -1e-12):
            for dy in (0.0, -1e-12):
                i = np.floor((pts[:, 0] + dx) * n).astype(int)
                j = np.floor((pts[:, 1] + dy) * n).astype(int)
                ok = (i >= 0) & (i < n) & (j >= 0) & (j < n)
                hit = np.zeros(len(pts), dtype=bool)
                hit[ok] = grid[i[ok], j[ok]]
                inside |= hit
        return inside

    def union(self, other: "CompactSetMask") -> "CompactSetMask":
        a, b = _common_level(self, other)
        return CompactSetMask(a.level, a.cells | b.cells)

    def intersection(self, other: "CompactSetMask") -> "CompactSetMask":
        a, b = _common_level(self, other)
        return CompactSetMask(a.level, a.cells & b.cells)


def _common_level(
    a: CompactSetMask, b: CompactSetMask
) -> Tuple[CompactSetMask, CompactSetMask]:
    level = max(a.level, b.level)
    return refine_mask(a, level - a.level), refine_mask(b, level - b.level)


def mask_measure(mask: CompactSetMask) -> float:
    """Exact Lebesgue measure: (#cells)·δ² (a power of two times an integer)."""
    return math.ldexp(float(len(mask.cells)), -2 * mask.level)


def refine_mask(mask: CompactSetMask, delta_level: int) -> CompactSetMask:
    """
    Represent the same point set at level l + Δl.

    Args:
        mask: Mask to refine
        delta_level: Number of levels to add (0 returns an equal mask)

    Returns:
        Refined mask with unchanged measure
    """
    if delta_level < 0:
        raise ValueError("refinement step must be nonnegative")
    if delta_level == 0:
        return mask
    if mask.level + delta_level > MAX_LEVEL:
        raise LevelOverflowError(
            f"cannot refine level {mask.level} by {delta_level} (max {MAX_LEVEL})"
        )
    k = 1 << delta_level
    fine = np.kron(mask.to_array(), np.ones((k, k), dtype=bool))
    return CompactSetMask.from_array(fine)


def mask_from_points(points: Sequence, level: int) -> CompactSetMask:
    """Cells of the given level containing at least one point of [0,1]²."""
    pts = as_points(points)
    n = 1 << level
    if len(pts) == 0:
        return CompactSetMask.empty(level)
    i = np.clip(np.floor(pts[:, 0] * n).astype(int), 0, n - 1)
    j = np.clip(np.floor(pts[:, 1] * n).astype(int), 0, n - 1)
    return CompactSetMask(level, frozenset(zip(i.tolist(), j.tolist())))


# ============================================================================
# PIECEWISE-LINEAR FUNCTIONS ON [0, 1]
# ============================================================================


class PL1D:
    """
    Continuous piecewise-linear function on [0,1], constant outside its
    breakpoint range.
    """

    def __init__(self, xs: Sequence[float], ys: Sequence[float]) -> None:
        xs_arr = np.asarray(xs, dtype=float)
        ys_arr = np.asarray(ys, dtype=float)
        if xs_arr.ndim != 1 or xs_arr.shape != ys_arr.shape or len(xs_arr) == 0:
            raise ValueError("breakpoints and values must be matching 1-D arrays")
        if np.any(np.diff(xs_arr) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        xs_arr.setflags(write=False)
        ys_arr.setflags(write=False)
        self.xs = xs_arr
        self.ys = ys_arr

    @classmethod
    def constant(cls, value: float) -> "PL1D":
        return cls([0.0, 1.0], [value, value])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x, self.xs, self.ys)

    def __repr__(self) -> str:
        return f"PL1D(xs={self.xs.tolist()}, ys={self.ys.tolist()})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PL1D):
            return NotImplemented
        return np.array_equal(self.xs, other.xs) and np.array_equal(self.ys, other.ys)

    def slopes(self) -> np.ndarray:
        if len(self.xs) < 2:
            return np.zeros(0)
        return np.diff(self.ys) / np.diff(self.xs)

    def slope(self, x: np.ndarray) -> np.ndarray:
        """Derivative off breakpoints (0 outside the breakpoint range)."""
        x = np.asarray(x, dtype=float)
        s = self.slopes()
        k = np.searchsorted(self.xs, x, side="right") - 1
        inside = (k >= 0) & (k < len(s))
        out = np.zeros_like(x)
        out[inside] = s[k[inside]]
        return out

    def breakpoint_distance(self, x: np.ndarray) -> np.ndarray:
        """Distance from x to the nearest breakpoint."""
        x = np.asarray(x, dtype=float)
        return np.min(np.abs(x[..., None] - self.xs), axis=-1)

    def is_one_lipschitz(self, tol: float = ABS_TOL) -> bool:
        return bool(np.all(np.abs(np.diff(self.ys)) <= np.diff(self.xs) + tol))

    def shift(self, c: float) -> "PL1D":
        return PL1D(self.xs, self.ys + c)

    def to_dict(self) -> Dict[str, List[float]]:
        return {"xs": self.xs.tolist(), "ys": self.ys.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[float]]) -> "PL1D":
        return cls(data["xs"], data["ys"])


def _simplify(xs: np.ndarray, ys: np.ndarray) -> PL1D:
    """Drop interior breakpoints where the function is locally linear."""
    if len(xs) <= 2:
        return PL1D(xs, ys)
    keep = [0]
    for k in range(1, len(xs) - 1):
        a = keep[-1]
        s_left = (ys[k] - ys[a]) / (xs[k] - xs[a])
        s_right = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])
        if abs(s_left - s_right) > 1e-13:
            keep.append(k)
    keep.append(len(xs) - 1)
    return PL1D(xs[keep], ys[keep])


def pointwise_sorted(funcs: Sequence[PL1D]) -> List[PL1D]:
    """
    Pointwise order statistics of PL functions on [0,1], largest first.

    Breakpoints of the inputs and all pairwise crossings are merged so every
    output is again exact and piecewise linear.
    """
    if not funcs:
        return []
    xs = np.unique(
        np.concatenate([[0.0, 1.0]] + [f.xs[(f.xs > 0) & (f.xs < 1)] for f in funcs])
    )
    values = np.array([f(xs) for f in funcs])
    crossings: List[np.ndarray] = []
    for a, b in combinations(range(len(funcs)), 2):
        d = values[a] - values[b]
        d0, d1 = d[:-1], d[1:]
        hit = d0 * d1 < 0
        if np.any(hit):
            t = d0[hit] / (d0[hit] - d1[hit])
            crossings.append(xs[:-1][hit] + t * np.diff(xs)[hit])
    if crossings:
        xs = np.unique(np.concatenate([xs] + crossings))
        values = np.array([f(xs) for f in funcs])
    ordered = -np.sort(-values, axis=0)
    return [_simplify(xs, row) for row in ordered]


def pl_max(funcs: Sequence[PL1D]) -> PL1D:
    return pointwise_sorted(funcs)[0]


def pl_min(funcs: Sequence[PL1D]) -> PL1D:
    return pointwise_sorted(funcs)[-1]


# ============================================================================
# SCALAR FIELDS
# ============================================================================


class ScalarField:
    """
    Nonnegative samples on an n×n midpoint grid over the unit square.
    samples[i, j] is the value at ((i+1/2)/n, (j+1/2)/n).
    """

    def __init__(self, samples: np.ndarray, allow_negative: bool = False) -> None:
        arr = np.array(samples, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise GridMismatchError(f"field must be square, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonPositiveFieldError("field samples must be finite")
        if not allow_negative and np.any(arr < 0):
            raise NonPositiveFieldError(
                f"field samples must be nonnegative (min {arr.min():.3e})"
            )
        arr.setflags(write=False)
        self.samples = arr

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @classmethod
    def constant(cls, value: float, n: int) -> "ScalarField":
        return cls(np.full((n, n), float(value)))

    @classmethod
    def from_function(cls, fn, n: int) -> "ScalarField":
        """Sample fn(x, y) (vectorized over arrays) at cell centers."""
        x, y = grid_centers(n)
        return cls(np.broadcast_to(fn(x, y), (n, n)))

    @classmethod
    def from_mask(cls, mask: CompactSetMask, value: float = 1.0) -> "ScalarField":
        return cls(mask.to_array().astype(float) * value)

    def integral(self) -> float:
        return float(self.samples.sum() * self.h * self.h)

    def lp_norm(self, p: float) -> float:
        return lp_norm(self.samples, p, self.h * self.h)

    def sup(self) -> float:
        return float(self.samples.max())

    def check_same_grid(self, other: "ScalarField") -> None:
        if self.n != other.n:
            raise GridMismatchError(f"grid {self.n} vs {other.n}")

    def evaluate(self, points: Sequence) -> np.ndarray:
        """Piecewise-constant lookup (cell containing each point)."""
        pts = as_points(points)
        i = np.clip(np.floor(pts[:, 0] * self.n).astype(int), 0, self.n - 1)
        j = np.clip(np.floor(pts[:, 1] * self.n).astype(int), 0, self.n - 1)
        return self.samples[i, j]


def grid_centers(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Cell-center coordinate arrays X[i, j], Y[i, j] of an n×n grid."""
    c = (np.arange(n) + 0.5) / n
    return np.meshgrid(c, c, indexing="ij")


def lp_norm(values: np.ndarray, p: float, weight: float) -> float:
    """Midpoint-quadrature Lᵖ norm with per-sample weight (cell area)."""
    v = np.abs(np.asarray(values, dtype=float))
    if v.size == 0:
        return 0.0
    if math.isinf(p):
        return float(v.max())
    return float((np.sum(v**p) * weight) ** (1.0 / p))


# ============================================================================
# REGIONS
# ============================================================================


class Region(ABC):
    """Closed convex region used as a map domain or codomain."""

    @abstractmethod
    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        ...

    @abstractmethod
    def vertices(self) -> Optional[np.ndarray]:
        """Polygon vertices in counter-clockwise order, None if unbounded."""

    def contains_region(self, other: "Region", tol: float = 1e-9) -> bool:
        verts = other.vertices()
        if verts is None:
            return self.vertices() is None
        return bool(np.all(self.contains(verts, tol)))

    def bounds(self) -> Tuple[float, float, float, float]:
        verts = self.vertices()
        if verts is None:
            return (-math.inf, -math.inf, math.inf, math.inf)
        return (
            float(verts[:, 0].min()),
            float(verts[:, 1].min()),
            float(verts[:, 0].max()),
            float(verts[:, 1].max()),
        )


@dataclass(frozen=True)
class Box(Region):
    x0: float = 0.0
    y0: float = 0.0
    x1: float = 1.0
    y1: float = 1.0

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        p = as_points(points)
        return (
            (p[:, 0] >= self.x0 - tol)
            & (p[:, 0] <= self.x1 + tol)
            & (p[:, 1] >= self.y0 - tol)
            & (p[:, 1] <= self.y1 + tol)
        )

    def vertices(self) -> np.ndarray:
        return np.array(
            [[self.x0, self.y0], [self.x1, self.y0], [self.x1, self.y1], [self.x0, self.y1]]
        )

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def from_unit(self, points: np.ndarray) -> np.ndarray:
        p = as_points(points)
        return np.column_stack(
            [
                self.x0 + (self.x1 - self.x0) * p[:, 0],
                self.y0 + (self.y1 - self.y0) * p[:, 1],
            ]
        )

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.from_unit(rng.random((count, 2)))


class Plane(Region):
    """The whole plane (codomain of maps with no declared image region)."""

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        return np.ones(len(as_points(points)), dtype=bool)

    def vertices(self) -> None:
        return None

    def __repr__(self) -> str:
        return "Plane()"


UNIT_SQUARE = Box(0.0, 0.0, 1.0, 1.0)
SIGNED_SQUARE = Box(-1.0, -1.0, 1.0, 1.0)


# ============================================================================
# MATRIX HELPERS
# ============================================================================


def det2(jac: np.ndarray) -> np.ndarray:
    return jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]


def adjugate(jac: np.ndarray) -> np.ndarray:
    """adj A with adj(A)·A = det(A)·I."""
    adj = np.empty_like(jac)
    adj[..., 0, 0] = jac[..., 1, 1]
    adj[..., 1, 1] = jac[..., 0, 0]
    adj[..., 0, 1] = -jac[..., 0, 1]
    adj[..., 1, 0] = -jac[..., 1, 0]
    return adj


def operator_norm(jac: np.ndarray) -> np.ndarray:
    """Largest singular value of each 2×2 matrix."""
    return np.linalg.svd(jac, compute_uv=False)[..., 0]


def singular_values(jac: np.ndarray) -> np.ndarray:
    return np.linalg.svd(jac, compute_uv=False)


def central_fd_jacobian(fn, points: np.ndarray, h: float) -> np.ndarray:
    """Central finite-difference Jacobian of a vectorized map fn."""
    p = as_points(points)
    jac = np.empty((len(p), 2, 2))
    for c in range(2):
        e = np.zeros(2)
        e[c] = h
        jac[:, :, c] = (fn(p + e) - fn(p - e)) / (2.0 * h)
    return jac


# ============================================================================
# PLANAR MAPS
# ============================================================================


class MapKind(str, Enum):
    IDENTITY = "identity"
    AFFINE = "affine"
    BILINEAR_QUAD = "bilinear-quad"
    INVERSE_BILINEAR = "inverse-bilinear"
    STRIP_STRETCH = "strip-stretch"
    BOUNDARY_CORRECTED = "boundary-corrected"
    MOSER_FLOW = "moser-flow"
    PIECEWISE = "piecewise"
    COMPOSITION = "composition"


class JacobianMode(str, Enum):
    EXACT = "exact"
    FINITE_DIFFERENCE = "finite-difference"


KINK_TOL: float = 1e-12


class PlanarMap(ABC):
    """
    Evaluable map domain → codomain with an exact or finite-difference
    Jacobian. Subclasses implement the vectorized `_evaluate`, and
    `_exact_jacobian` when the mode is exact.
    """

    kind: MapKind
    jacobian_mode: JacobianMode = JacobianMode.EXACT
    fd_step: float = 1e-6

    def __init__(self, domain: Region, codomain: Optional[Region] = None) -> None:
        self.domain = domain
        self.codomain = codomain if codomain is not None else Plane()
        self._grid_cache: Dict[int, np.ndarray] = {}

    @abstractmethod
    def _evaluate(self, points: np.ndarray) -> np.ndarray:
        ...

    def _exact_jacobian(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{self.kind.value} has no exact Jacobian")

    def kink_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance of each point to the nearest registered kink line."""
        return np.full(len(as_points(points)), math.inf)

    @property
    def depth(self) -> int:
        return 0 if self.kind == MapKind.IDENTITY else 1

    def _check_domain(self, points: np.ndarray) -> None:
        inside = self.domain.contains(points)
        if not np.all(inside):
            bad = points[~inside][0]
            raise PointOutsideDomainError(
                f"point ({bad[0]:.6g}, {bad[1]:.6g}) outside the {self.kind.value} domain"
            )

    def evaluate(self, points: Sequence, check: bool = True) -> np.ndarray:
        pts = as_points(points)
        if check:
            self._check_domain(pts)
        return self._evaluate(pts)

    def _jacobian_any(self, points: np.ndarray) -> np.ndarray:
        if self.jacobian_mode == JacobianMode.EXACT:
            return self._exact_jacobian(points)
        return central_fd_jacobian(self._evaluate, points, self.fd_step)

    def jacobian(
        self, points: Sequence, strict: bool = False, check: bool = True
    ) -> np.ndarray:
        """
        Jacobian matrices at the given points.

        Args:
            points: Points in the domain
            strict: Raise KinkLineError for points on a registered kink line.
                Otherwise one-sided (a.e.) values are returned there.
            check: Verify domain membership

        Returns:
            Array of shape (k, 2, 2)
        """
        pts = as_points(points)
        if check:
            self._check_domain(pts)
        if strict and self.jacobian_mode == JacobianMode.EXACT:
            near = self.kink_distance(pts) <= KINK_TOL
            if np.any(near):
                bad = pts[near][0]
                raise KinkLineError(
                    f"point ({bad[0]:.6g}, {bad[1]:.6g}) lies on a kink line"
                )
        return self._jacobian_any(pts)

    def det(self, points: Sequence, check: bool = True) -> np.ndarray:
        return det2(self.jacobian(points, check=check))

    def evaluate_grid(self, n: int) -> np.ndarray:
        """
        Images of the (n+1)×(n+1) node grid of the domain's bounding box,
        memoized per n. Returned shape (n+1, n+1, 2), indexed [i, j].
        """
        if n not in self._grid_cache:
            self._grid_cache[n] = node_images(self, n)
        return self._grid_cache[n]

    def fd_jacobian(self, points: Sequence, h: float) -> np.ndarray:
        return central_fd_jacobian(self._evaluate, as_points(points), h)

    def __call__(self, points: Sequence) -> np.ndarray:
        return self.evaluate(points)


class IdentityMap(PlanarMap):
    kind = MapKind.IDENTITY

    def __init__(self, domain: Region = UNIT_SQUARE) -> None:
        super().__init__(domain, domain)

    def _evaluate(self, points: np.ndarray) -> np.ndarray:
        return points.copy()

    def _exact_jacobian(self, points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.eye(2), (len(points), 2, 2)).copy()


class AffineMap(PlanarMap):
    """x ↦ A·x + b."""

    kind = MapKind.AFFINE

    def __init__(
        self,
        matrix: Sequence,
        offset: Sequence = (0.0, 0.0),
        domain: Optional[Region] = None,
        codomain: Optional[Region] = None,
    ) -> None:
        self.matrix = np.array(matrix, dtype=float).reshape(2, 2)
        self.offset = np.array(offset, dtype=float).reshape(2)
        domain = domain if domain is not None else Plane()
        if codomain is None and isinstance(domain, Box):
            codomain = self._image_box(domain)
        super().__init__(domain, codomain)

    def _image_box(self, box: Box) -> Optional[Box]:
        if self.matrix[0, 1] != 0.0 or self.matrix[1, 0] != 0.0:
            return None
        corners = self._evaluate(box.vertices())
        return Box(
            float(corners[:, 0].min()),
            float(corners[:, 1].min()),
            float(corners[:, 0].max()),
            float(corners[:, 1].max()),
        )

    @classmethod
    def box_to_box(cls, src: Box, dst: Box) -> "AffineMap":
        sx = (dst.x1 - dst.x0) / (src.x1 - src.x0)
        sy = (dst.y1 - dst.y0) / (src.y1 - src.y0)
        return cls(
            [[sx, 0.0], [0.0, sy]],
            [dst.x0 - sx * src.x0, dst.y0 - sy * src.y0],
            domain=src,
            codomain=dst,
        )

    def inverse(self) -> "AffineMap":
        inv = np.linalg.inv(self.matrix)
        return AffineMap(inv, -inv @ self.offset, domain=self.codomain, codomain=self.domain)

    def _evaluate(self, points: np.ndarray) -> np.ndarray:
        return points @ self.matrix.T + self.offset

    def _exact_jacobian(self, points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.matrix, (len(points), 2, 2)).copy()


class CompositeMap(PlanarMap):
    """
    Lazy composition. `factors` are stored in application order: the first
    factor is applied first (the rightmost in φ_m∘⋯∘φ₁).
    """

    kind = MapKind.COMPOSITION

    def __init__(self, factors: Sequence[PlanarMap]) -> None:
        if not factors:
            raise ValueError("composition needs at least one factor")
        self.factors: Tuple[PlanarMap, ...] = tuple(factors)
        super().__init__(self.factors[0].domain, self.factors[-1].codomain)

    @property
    def depth(self) -> int:
        return sum(f.depth for f in self.factors)

    def _evaluate(self, points: np.ndarray) -> np.ndarray:
        p = points
        for f in self.factors:
            p = f._evaluate(p)
        return p

    def _exact_jacobian(self, points: np.ndarray) -> np.ndarray:
        p = points
        jac = np.broadcast_to(np.eye(2), (len(points), 2, 2)).copy()
        for f in self.factors:
            jac = f._jacobian_any(p) @ jac
            p = f._evaluate(p)
        return jac

    def kink_distance(self, points: np.ndarray) -> np.ndarray:
        p = as_points(points)
        dist = np.full(len(p), math.inf)
        for f in self.factors:
            dist = np.minimum(dist, f.kink_distance(p))
            p = f._evaluate(p)
        return dist


def node_grid(region: Region, n: int) -> np.ndarray:
    x0, y0, x1, y1 = region.bounds()
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([X, Y], axis=-1)


def node_images(m: PlanarMap, n: int) -> np.ndarray:
    nodes = node_grid(m.domain, n)
    return m._evaluate(nodes.reshape(-1, 2)).reshape(n + 1, n + 1, 2)


def compose(outer: PlanarMap, inner: PlanarMap) -> CompositeMap:
    """
    Lazy composition outer∘inner.

    Raises:
        DomainMismatchError: when inner's codomain is not inside outer's domain
    """
    if not outer.domain.contains_region(inner.codomain):
        raise DomainMismatchError(
            f"codomain of {inner.kind.value} is not contained in the domain of "
            f"{outer.kind.value}"
        )
    factors: List[PlanarMap] = []
    for m in (inner, outer):
        if isinstance(m, CompositeMap):
            factors.extend(m.factors)
        else:
            factors.append(m)
    return CompositeMap(factors)


def compose_all(maps: Iterable[PlanarMap]) -> PlanarMap:
    """Compose maps given in application order (first applied first)."""
    result: Optional[PlanarMap] = None
    for m in maps:
        result = m if result is None else compose(m, result)
    if result is None:
        raise ValueError("nothing to compose")
    return result


def eval_map(m: PlanarMap, p: Sequence[float]) -> np.ndarray:
    """Image of a single point."""
    return m.evaluate(as_points(p))[0]


def eval_jacobian(m: PlanarMap, p: Sequence[float]) -> np.ndarray:
    """Jacobian at a single point, refusing registered kink lines."""
    return m.jacobian(as_points(p), strict=True)[0]


def cell_det_field(m: PlanarMap, n: int) -> np.ndarray:
    """
    Average determinant over each cell of an n×n grid of the domain's
    bounding box: area of the image of the cell boundary (corners and edge
    midpoints) divided by the cell area.
    """
    img = m.evaluate_grid(2 * n)
    # boundary of cell (i, j): 8 points counter-clockwise
    ring = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
    pts = np.stack([img[a : a + 2 * n : 2, b : b + 2 * n : 2] for a, b in ring], axis=2)
    x, y = pts[..., 0], pts[..., 1]
    area = 0.5 * np.sum(x * np.roll(y, -1, axis=2) - np.roll(x, -1, axis=2) * y, axis=2)
    x0, y0, x1, y1 = m.domain.bounds()
    return area / (((x1 - x0) / n) * ((y1 - y0) / n))
