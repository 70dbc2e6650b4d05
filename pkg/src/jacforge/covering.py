"""
Covering of dyadic masks by 1-Lipschitz strips.

A finite point set is split into graphs over x (chains) and graphs over y
(antichains) of the 45°-rotated product order. Graphs are thickened to
strips of half-width δ and then disjointified into the unit square.
"""

import logging
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .constants import ABS_TOL, MAX_LEVEL
from .core import (
    PL1D,
    CompactSetMask,
    as_points,
    mask_measure,
    pl_max,
    pl_min,
    pointwise_sorted,
    refine_mask,
)
from .errors import BoundUnachievableError, CapacityError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StripFamily:
    """
    Horizontal strips {|y − f_i(x)| < δ} and vertical strips {|x − g_j(y)| < δ}.
    After disjointification both lists are ordered decreasing.
    """

    delta: float
    horizontal: Tuple[PL1D, ...] = field(default_factory=tuple)
    vertical: Tuple[PL1D, ...] = field(default_factory=tuple)

    @property
    def N(self) -> int:
        return len(self.horizontal)

    @property
    def M(self) -> int:
        return len(self.vertical)

    def is_empty(self) -> bool:
        return self.N == 0 and self.M == 0

    def horizontal_hits(self, points: np.ndarray) -> np.ndarray:
        """Boolean array (k, N): point inside the open horizontal strip i."""
        p = as_points(points)
        if not self.horizontal:
            return np.zeros((len(p), 0), dtype=bool)
        return np.stack(
            [np.abs(p[:, 1] - f(p[:, 0])) < self.delta for f in self.horizontal],
            axis=1,
        )

    def vertical_hits(self, points: np.ndarray) -> np.ndarray:
        p = as_points(points)
        if not self.vertical:
            return np.zeros((len(p), 0), dtype=bool)
        return np.stack(
            [np.abs(p[:, 0] - g(p[:, 1])) < self.delta for g in self.vertical],
            axis=1,
        )

    def in_strips(self, points: np.ndarray) -> np.ndarray:
        """Membership in S, the union of all open strips."""
        return self.horizontal_hits(points).any(axis=1) | self.vertical_hits(
            points
        ).any(axis=1)

    def covers_closed(self, points: np.ndarray, tol: float = ABS_TOL) -> np.ndarray:
        """Membership in the union of the closed strips."""
        p = as_points(points)
        hit = np.zeros(len(p), dtype=bool)
        for f in self.horizontal:
            hit |= np.abs(p[:, 1] - f(p[:, 0])) <= self.delta + tol
        for g in self.vertical:
            hit |= np.abs(p[:, 0] - g(p[:, 1])) <= self.delta + tol
        return hit

    def check_invariants(self, tol: float = ABS_TOL) -> Tuple[bool, List[str], List[str]]:
        """
        Validate the disjointified-family invariants.

        Returns:
            Tuple of (is_valid, errors, warnings)
        """
        errors: List[str] = []
        warnings: List[str] = []
        for name, graphs in (("f", self.horizontal), ("g", self.vertical)):
            for i, h in enumerate(graphs):
                if not h.is_one_lipschitz(tol):
                    errors.append(f"{name}_{i + 1} is not 1-Lipschitz")
                if h.ys.min() < self.delta - tol or h.ys.max() > 1 - self.delta + tol:
                    errors.append(f"{name}_{i + 1} leaves [δ, 1−δ]")
            for i in range(len(graphs) - 1):
                upper, lower = graphs[i], graphs[i + 1]
                xs = np.union1d(upper.xs, lower.xs)
                xs = np.union1d(xs, [0.0, 1.0])
                gap = upper(xs) - lower(xs)
                if np.any(gap < 2 * self.delta - tol):
                    errors.append(
                        f"{name}_{i + 2} is closer than 2δ to {name}_{i + 1} "
                        f"(min gap {gap.min():.3e})"
                    )
        if self.is_empty():
            warnings.append("strip family is empty")
        return len(errors) == 0, errors, warnings

    def to_dict(self) -> Dict[str, Any]:
        return {
            "delta": self.delta,
            "horizontal": [f.to_dict() for f in self.horizontal],
            "vertical": [g.to_dict() for g in self.vertical],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StripFamily":
        return cls(
            float(data["delta"]),
            tuple(PL1D.from_dict(f) for f in data.get("horizontal", [])),
            tuple(PL1D.from_dict(g) for g in data.get("vertical", [])),
        )


# ============================================================================
# CHAIN / ANTICHAIN DECOMPOSITION
# ============================================================================


def _rotated(points: np.ndarray) -> List[Tuple[Fraction, Fraction]]:
    # dyadic centers convert exactly; generic floats convert exactly too
    return [
        (Fraction(float(x)) - Fraction(float(y)), Fraction(float(x)) + Fraction(float(y)))
        for x, y in points
    ]


def comparable(p: Sequence[float], q: Sequence[float]) -> bool:
    """p, q lie on a common 1-Lipschitz graph over x (|Δy| ≤ |Δx|, exact)."""
    dx = Fraction(float(p[0])) - Fraction(float(q[0]))
    dy = Fraction(float(p[1])) - Fraction(float(q[1]))
    return abs(dy) <= abs(dx)


def _longest_chain(keys: List[Tuple[Fraction, Fraction]], order: List[int]) -> List[int]:
    """Longest non-decreasing w-subsequence of `order` (already sorted by (u, w))."""
    tails: List[Fraction] = []
    tail_idx: List[int] = []
    prev: Dict[int, int] = {}
    for idx in order:
        w = keys[idx][1]
        pos = bisect_right(tails, w)
        if pos > 0:
            prev[idx] = tail_idx[pos - 1]
        if pos == len(tails):
            tails.append(w)
            tail_idx.append(idx)
        else:
            tails[pos] = w
            tail_idx[pos] = idx
    if not tail_idx:
        return []
    chain = [tail_idx[-1]]
    while chain[-1] in prev:
        chain.append(prev[chain[-1]])
    return chain[::-1]


def _mirsky_layers(keys: List[Tuple[Fraction, Fraction]], order: List[int]) -> List[List[int]]:
    """Split into antichains by height (length of the longest chain ending there)."""
    tails: List[Fraction] = []
    layers: List[List[int]] = []
    for idx in order:
        w = keys[idx][1]
        pos = bisect_right(tails, w)
        if pos == len(tails):
            tails.append(w)
            layers.append([idx])
        else:
            tails[pos] = w
            layers[pos].append(idx)
    return layers


def _graph_through(pairs: np.ndarray) -> PL1D:
    """PL graph through (t, value) pairs with distinct t, clamped to [0, 1]."""
    order = np.argsort(pairs[:, 0], kind="stable")
    t = pairs[order, 0]
    v = np.clip(pairs[order, 1], 0.0, 1.0)
    return PL1D(t, v)


def cover_points(points: Sequence) -> Tuple[List[PL1D], List[PL1D]]:
    """
    Cover a finite point set by graphs over x and graphs over y.

    Args:
        points: Distinct points of [0,1]²

    Returns:
        (fs, gs) with at most ⌈√n⌉ graphs each; every point lies on one graph
    """
    pts = as_points(points) if len(points) else np.zeros((0, 2))
    n = len(pts)
    if n == 0:
        return [], []
    k = math.ceil(math.sqrt(n))
    keys = _rotated(pts)
    remaining = sorted(range(n), key=lambda idx: keys[idx])

    fs: List[PL1D] = []
    while remaining:
        chain = _longest_chain(keys, remaining)
        if len(chain) < k:
            break
        fs.append(_graph_through(pts[chain]))
        taken = set(chain)
        remaining = [idx for idx in remaining if idx not in taken]

    gs: List[PL1D] = []
    for layer in _mirsky_layers(keys, remaining):
        gs.append(_graph_through(pts[layer][:, ::-1]))

    logger.debug(f"Covered {n} points with {len(fs)} x-graphs and {len(gs)} y-graphs")
    return fs, gs


def check_cover(
    points: Sequence, fs: Sequence[PL1D], gs: Sequence[PL1D], tol: float = ABS_TOL
) -> bool:
    """Every point lies on some returned graph."""
    pts = as_points(points) if len(points) else np.zeros((0, 2))
    on = np.zeros(len(pts), dtype=bool)
    for f in fs:
        on |= np.abs(pts[:, 1] - f(pts[:, 0])) <= tol
    for g in gs:
        on |= np.abs(pts[:, 0] - g(pts[:, 1])) <= tol
    return bool(on.all())


# ============================================================================
# MASK COVERING AND DISJOINTIFICATION
# ============================================================================


def cover_mask(mask: CompactSetMask, eps: Optional[float] = None) -> StripFamily:
    """
    Strips of half-width δ around graphs through the mask's cell centers.

    The mask is refined until δ·⌈√#cells⌉ ≤ √|K| + eps, which bounds both
    δN and δM.

    Args:
        mask: Mask to cover
        eps: Slack in the count bound (defaults to one cell width)

    Returns:
        StripFamily before disjointification

    Raises:
        BoundUnachievableError: bound fails even at the finest level
    """
    if mask.is_empty():
        return StripFamily(mask.delta)
    eps = mask.delta if eps is None else eps
    if eps <= 0:
        raise ValueError("eps must be positive")
    root = math.sqrt(mask_measure(mask))

    working = mask
    while working.delta * math.ceil(math.sqrt(len(working))) > root + eps:
        if working.level >= MAX_LEVEL:
            raise BoundUnachievableError(
                f"δ·⌈√n⌉ ≤ √|K| + ε unreachable up to level {MAX_LEVEL} (ε={eps:g})"
            )
        working = refine_mask(working, 1)
    if working.level != mask.level:
        logger.info(f"Refined mask from level {mask.level} to {working.level} for the count bound")

    fs, gs = cover_points(working.centers())
    family = StripFamily(working.delta, tuple(fs), tuple(gs))
    logger.info(
        f"✓ Covered {len(working)} cells: N={family.N}, M={family.M}, "
        f"δN={family.delta * family.N:.4g}, δM={family.delta * family.M:.4g}, "
        f"√|K|={root:.4g}"
    )
    return family


def _separate(graphs: Sequence[PL1D], delta: float) -> Tuple[PL1D, ...]:
    n = len(graphs)
    if n == 0:
        return ()
    if 2 * n * delta > 1.0 + ABS_TOL:
        raise CapacityError(
            f"{n} strips of half-width {delta:g} cannot be 2δ-separated in [0,1]"
        )
    ordered = pointwise_sorted(graphs)
    out: List[PL1D] = []
    for i, g in enumerate(ordered, start=1):
        floor_ = PL1D.constant((1 + 2 * (n - i)) * delta)
        ceiling = PL1D.constant(1 - delta) if i == 1 else out[-1].shift(-2 * delta)
        out.append(pl_min([pl_max([g, floor_]), ceiling]))
    return tuple(out)


def disjointify(family: StripFamily) -> StripFamily:
    """
    Reorder and clamp the graphs so that f_{i+1} ≤ f_i − 2δ, δ ≤ f_i ≤ 1−δ
    (same for g), keeping every point of the old strips inside the new ones.

    Raises:
        CapacityError: 2Nδ > 1 or 2Mδ > 1, or the clamped graphs fail
            the separation checks
    """
    result = StripFamily(
        family.delta,
        _separate(family.horizontal, family.delta),
        _separate(family.vertical, family.delta),
    )
    is_valid, errors, _ = result.check_invariants()
    if not is_valid:
        logger.error(f"Disjointified family failed validation: {errors}")
        raise CapacityError(
            f"disjointified strips are not 2δ-separated: {'; '.join(errors)}"
        )
    return result


def covering_preserved(
    before: StripFamily, after: StripFamily, samples: np.ndarray
) -> bool:
    """Points of [0,1]² in the old closed strips are in the new closed strips."""
    p = as_points(samples)
    inside = (p >= 0).all(axis=1) & (p <= 1).all(axis=1)
    old = before.covers_closed(p) & inside
    return bool(np.all(after.covers_closed(p[old])))


def overlap_count(family: StripFamily, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Number of open horizontal and vertical strips containing each point."""
    return (
        family.horizontal_hits(points).sum(axis=1),
        family.vertical_hits(points).sum(axis=1),
    )


def mask_covered(family: StripFamily, mask: CompactSetMask) -> bool:
    """Every mask cell lies in the closed strip union (corners and center checked)."""
    if mask.is_empty():
        return True
    pts = np.concatenate([mask.centers(), mask.cell_offset_points(0.5)])
    return bool(np.all(family.covers_closed(pts)))
