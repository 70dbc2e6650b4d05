"""
Tests for covering masks by 1-Lipschitz strips and for disjointification.

Prerequisites:
- numpy installed; no external services needed
"""

import math
import sys
import logging
from pathlib import Path

import numpy as np
import pytest

# Configure logging for tests
logging.basicConfig(level=logging.INFO, format='%(levelname)s - %(name)s - %(message)s')
logger = logging.getLogger(__name__)

# Add src to path for imports
src_path = Path(__file__).parent.parent.parent / 'src'
sys.path.insert(0, str(src_path))

from jacforge.core import PL1D, CompactSetMask
from jacforge.covering import (
    StripFamily,
    check_cover,
    comparable,
    cover_mask,
    cover_points,
    covering_preserved,
    disjointify,
    mask_covered,
    overlap_count,
)
from jacforge.errors import CapacityError


@pytest.fixture(scope="module")
def scattered_points():
    """Reproducible cloud of 50 points in the unit square"""
    return np.random.default_rng(7).random((50, 2))


class TestCoverPoints:
    """Graphs through finite point sets"""

    def test_comparable_is_the_lipschitz_cone(self):
        """Two points share an x-graph exactly when |Δy| ≤ |Δx|"""
        assert comparable((0.0, 0.0), (1.0, 0.5))
        assert comparable((0.0, 0.0), (0.5, 0.5))
        assert not comparable((0.0, 0.0), (0.1, 0.5))

    def test_every_point_on_a_graph(self, scattered_points):
        """The returned graphs cover every point"""
        fs, gs = cover_points(scattered_points)
        assert check_cover(scattered_points, fs, gs)
        logger.info(f"✓ 50 points covered by {len(fs)} + {len(gs)} graphs")

    def test_graph_count_bound(self, scattered_points):
        """At most ⌈√n⌉ graphs of each kind"""
        fs, gs = cover_points(scattered_points)
        k = math.ceil(math.sqrt(len(scattered_points)))
        assert len(fs) <= k
        assert len(gs) <= k

    def test_graphs_are_one_lipschitz(self, scattered_points):
        fs, gs = cover_points(scattered_points)
        assert all(f.is_one_lipschitz() for f in fs)
        assert all(g.is_one_lipschitz() for g in gs)

    def test_diagonal_is_one_chain(self):
        """Points on the diagonal lie on a single x-graph"""
        pts = np.array([[t, t] for t in np.linspace(0.05, 0.95, 9)])
        fs, gs = cover_points(pts)
        assert len(fs) == 1
        assert gs == []

    def test_empty_input(self):
        assert cover_points(np.zeros((0, 2))) == ([], [])


class TestCoverMask:
    """Strip families around mask cells"""

    def test_empty_mask_gives_empty_family(self):
        family = cover_mask(CompactSetMask.empty(4))
        assert family.is_empty()
        assert family.delta == 1 / 16

    def test_single_cell(self):
        """One cell: one horizontal strip through its center"""
        mask = CompactSetMask(3, frozenset({(2, 5)}))
        family = cover_mask(mask)
        assert (family.N, family.M) == (1, 0)
        assert family.horizontal[0](np.array([0.3]))[0] == pytest.approx(5.5 / 8)
        assert mask_covered(family, mask)

    def test_count_bound_on_block(self):
        """δ·max(N, M) stays within √|K| plus one cell width"""
        mask = CompactSetMask(4, frozenset((i, j) for i in range(4, 8) for j in range(6, 10)))
        family = cover_mask(mask)
        root = math.sqrt(mask.measure)
        assert family.delta * max(family.N, family.M) <= root + mask.delta + 1e-15
        assert mask_covered(family, mask)
        logger.info(f"✓ Block covered: N={family.N}, M={family.M}, δ={family.delta}")

    def test_eps_must_be_positive(self):
        mask = CompactSetMask(2, frozenset({(0, 0)}))
        with pytest.raises(ValueError):
            cover_mask(mask, eps=0.0)

    def test_dict_roundtrip(self):
        mask = CompactSetMask(3, frozenset({(1, 1), (5, 2)}))
        family = cover_mask(mask)
        assert StripFamily.from_dict(family.to_dict()) == family


class TestDisjointify:
    """Separation of overlapping strips"""

    def test_coincident_strips_are_separated(self):
        """Two strips at y = 0.5 become 0.5 and 0.3 for δ = 0.1"""
        family = StripFamily(0.1, (PL1D.constant(0.5), PL1D.constant(0.5)))
        result = disjointify(family)
        xs = np.linspace(0, 1, 5)
        assert np.allclose(result.horizontal[0](xs), 0.5)
        assert np.allclose(result.horizontal[1](xs), 0.3)
        is_valid, errors, _ = result.check_invariants()
        assert is_valid, errors

    def test_covering_is_preserved(self):
        """Points in the old strips stay inside the new ones"""
        family = StripFamily(
            0.05,
            (PL1D([0.0, 1.0], [0.2, 0.6]), PL1D([0.0, 1.0], [0.5, 0.3]), PL1D.constant(0.02)),
            (PL1D([0.0, 0.5, 1.0], [0.4, 0.6, 0.4]),),
        )
        result = disjointify(family)
        samples = np.random.default_rng(3).random((4000, 2))
        assert covering_preserved(family, result, samples)
        assert result.check_invariants()[0]

    def test_disjoint_strips_do_not_overlap(self):
        family = disjointify(
            StripFamily(0.05, tuple(PL1D.constant(0.5) for _ in range(4)))
        )
        samples = np.random.default_rng(4).random((2000, 2))
        horizontal, vertical = overlap_count(family, samples)
        assert horizontal.max() <= 1
        assert vertical.max() == 0

    def test_capacity(self):
        """Six strips of half-width 0.1 cannot fit in [0, 1]"""
        family = StripFamily(0.1, tuple(PL1D.constant(0.5) for _ in range(6)))
        with pytest.raises(CapacityError):
            disjointify(family)

    def test_failed_separation_is_an_error(self, monkeypatch):
        """A result that fails its own invariants is never handed on"""
        monkeypatch.setattr(
            StripFamily,
            "check_invariants",
            lambda self, tol=0.0: (False, ["f_2 is closer than 2δ to f_1"], []),
        )
        family = StripFamily(0.1, (PL1D.constant(0.5), PL1D.constant(0.5)))
        with pytest.raises(CapacityError) as exc:
            disjointify(family)
        assert "f_2 is closer than 2δ to f_1" in str(exc.value)
        assert exc.value.exit_code == 3


class TestRandomMasks:
    """Count bounds, coverage and disjointness over random sparse masks"""

    def test_sweep(self):
        """50 masks at levels 5 and 6 with 1-10% of the cells set"""
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(50):
            level = int(rng.choice([5, 6]))
            n = 1 << level
            density = rng.uniform(0.01, 0.10)
            grid = rng.random((n, n)) < density
            grid[rng.integers(n), rng.integers(n)] = True
            mask = CompactSetMask.from_array(grid)

            family = cover_mask(mask)
            root = math.sqrt(mask.measure)
            assert family.delta * family.N <= 2 * root + 1e-15
            assert family.delta * family.M <= 2 * root + 1e-15
            assert mask_covered(family, mask)

            separated = disjointify(family)
            assert mask_covered(separated, mask)
            horizontal, vertical = overlap_count(separated, rng.random((10_000, 2)))
            assert horizontal.max() <= 1
            assert vertical.max() <= 1
            worst = max(worst, family.delta * max(family.N, family.M) / root)
        logger.info(f"✓ 50 random masks: max δ·max(N, M)/√|K| = {worst:.3f}")
