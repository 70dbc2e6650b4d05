"""
Tests for the core types: dyadic masks, piecewise-linear functions,
scalar fields and map composition.

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

from jacforge.core import (
    PL1D,
    UNIT_SQUARE,
    AffineMap,
    Box,
    CompactSetMask,
    CompositeMap,
    IdentityMap,
    ScalarField,
    cell_det_field,
    compose,
    compose_all,
    eval_jacobian,
    eval_map,
    mask_from_points,
    mask_measure,
    pl_max,
    pl_min,
    pointwise_sorted,
    refine_mask,
)
from jacforge.errors import (
    DomainMismatchError,
    GridMismatchError,
    LevelOverflowError,
    NonPositiveFieldError,
    PointOutsideDomainError,
)


@pytest.fixture(scope="module")
def l_shape():
    """Three cells of a 4x4 grid forming an L"""
    return CompactSetMask(2, frozenset({(0, 0), (1, 0), (0, 1)}))


class TestCompactSetMask:
    """Measure, refinement and set operations on dyadic masks"""

    def test_measure_is_cell_count_times_area(self, l_shape):
        """|K| = #cells · δ²"""
        assert l_shape.delta == 0.25
        assert mask_measure(l_shape) == 3 / 16
        assert l_shape.measure == 3 / 16
        logger.info(f"✓ L-shape measure {l_shape.measure}")

    def test_empty_mask(self):
        """The empty mask has measure zero"""
        empty = CompactSetMask.empty(5)
        assert empty.is_empty()
        assert empty.measure == 0.0
        assert empty.centers().shape == (0, 2)

    def test_refine_keeps_measure(self, l_shape):
        """Refining changes the level but not the point set"""
        fine = refine_mask(l_shape, 2)
        assert fine.level == 4
        assert len(fine) == 3 * 16
        assert fine.measure == l_shape.measure
        assert refine_mask(l_shape, 0) is l_shape

    def test_refine_past_max_level(self, l_shape):
        """Refinement beyond the maximum level is refused"""
        with pytest.raises(LevelOverflowError):
            refine_mask(l_shape, 64)

    def test_cell_outside_grid_rejected(self):
        """Cells must lie inside the 2^l grid"""
        with pytest.raises(ValueError):
            CompactSetMask(1, frozenset({(2, 0)}))

    def test_array_roundtrip_indexing(self, l_shape):
        """to_array is indexed [i, j] with i along x"""
        grid = l_shape.to_array()
        assert grid[1, 0] and grid[0, 1] and not grid[1, 1]
        assert CompactSetMask.from_array(grid) == l_shape

    def test_from_array_rejects_non_power_of_two(self):
        """A 3x3 grid is not dyadic"""
        with pytest.raises(GridMismatchError):
            CompactSetMask.from_array(np.ones((3, 3), dtype=bool))

    def test_union_and_intersection_across_levels(self, l_shape):
        """Set operations refine to the finer level first"""
        coarse = CompactSetMask(1, frozenset({(0, 0)}))
        assert l_shape.intersection(coarse).measure == 3 / 16
        assert l_shape.union(coarse).measure == 0.25

    def test_closed_cell_membership(self, l_shape):
        """Points on shared edges belong to the mask"""
        inside = l_shape.contains_points([[0.25, 0.1], [0.5, 0.25], [0.6, 0.6]])
        assert inside.tolist() == [True, True, False]

    def test_mask_from_points_clips(self):
        """Points on the far boundary land in the last cell"""
        mask = mask_from_points([[1.0, 1.0], [0.1, 0.1]], 2)
        assert mask.cells == frozenset({(3, 3), (0, 0)})


class TestPL1D:
    """Piecewise-linear functions and their order statistics"""

    def test_evaluation_and_slopes(self):
        f = PL1D([0.0, 0.5, 1.0], [0.0, 0.5, 0.0])
        assert f(np.array([0.25]))[0] == pytest.approx(0.25)
        assert f.slopes().tolist() == [1.0, -1.0]
        assert f.is_one_lipschitz()
        assert not PL1D([0.0, 1.0], [0.0, 2.0]).is_one_lipschitz()

    def test_breakpoints_must_increase(self):
        with pytest.raises(ValueError):
            PL1D([0.0, 0.0], [1.0, 2.0])

    def test_sorted_order_statistics_at_crossings(self):
        """max and min of two crossing lines switch at the crossing"""
        up = PL1D([0.0, 1.0], [0.0, 1.0])
        down = PL1D([0.0, 1.0], [1.0, 0.0])
        hi, lo = pointwise_sorted([up, down])
        xs = np.linspace(0, 1, 11)
        assert np.allclose(hi(xs), np.maximum(xs, 1 - xs))
        assert np.allclose(lo(xs), np.minimum(xs, 1 - xs))
        assert 0.5 in pl_max([up, down]).xs.tolist()
        assert pl_min([up, down])(np.array([0.5]))[0] == pytest.approx(0.5)
        logger.info("✓ Order statistics exact at crossing")

    def test_dict_roundtrip(self):
        f = PL1D([0.0, 0.3, 1.0], [0.2, 0.4, 0.1])
        assert PL1D.from_dict(f.to_dict()) == f


class TestScalarField:
    """Midpoint-grid fields"""

    def test_negative_samples_rejected(self):
        with pytest.raises(NonPositiveFieldError):
            ScalarField(np.array([[0.1, -0.2], [0.0, 0.0]]))

    def test_nan_rejected(self):
        with pytest.raises(NonPositiveFieldError):
            ScalarField(np.array([[math.nan, 0.0], [0.0, 0.0]]))

    def test_integral_and_norms(self):
        f = ScalarField.constant(0.5, 8)
        assert f.integral() == pytest.approx(0.5)
        assert f.lp_norm(2) == pytest.approx(0.5)
        assert f.lp_norm(math.inf) == 0.5
        assert f.sup() == 0.5

    def test_from_function_samples_centers(self):
        f = ScalarField.from_function(lambda x, y: x, 4)
        assert f.samples[:, 0].tolist() == [0.125, 0.375, 0.625, 0.875]

    def test_evaluate_is_piecewise_constant(self):
        f = ScalarField.from_function(lambda x, y: x + 2 * y, 2)
        assert f.evaluate([[0.9, 0.1]])[0] == pytest.approx(0.75 + 0.5)

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatchError):
            ScalarField.constant(0.1, 4).check_same_grid(ScalarField.constant(0.1, 8))


class TestMaps:
    """Planar maps and their lazy composition"""

    def test_identity(self):
        m = IdentityMap()
        pts = np.array([[0.2, 0.3], [1.0, 0.0]])
        assert np.array_equal(m(pts), pts)
        assert np.allclose(m.det(pts), 1.0)
        assert m.depth == 0

    def test_domain_is_checked(self):
        with pytest.raises(PointOutsideDomainError):
            IdentityMap().evaluate([[1.5, 0.5]])

    def test_box_to_box_and_inverse(self):
        src, dst = Box(0, 0, 1, 1), Box(-1, -1, 1, 1)
        a = AffineMap.box_to_box(src, dst)
        assert np.allclose(a([[0.5, 0.5]]), [[0.0, 0.0]])
        assert np.allclose(a.det([[0.1, 0.9]]), 4.0)
        back = compose(a.inverse(), a)
        pts = UNIT_SQUARE.sample(np.random.default_rng(0), 20)
        assert np.allclose(back(pts), pts)

    def test_composition_order_and_chain_rule(self):
        """Factors apply first-to-last and determinants multiply"""
        scale = AffineMap([[2.0, 0.0], [0.0, 1.0]], domain=UNIT_SQUARE)
        shear = AffineMap([[1.0, 1.0], [0.0, 1.0]])
        m = compose(shear, scale)
        assert isinstance(m, CompositeMap)
        assert np.allclose(m([[0.5, 0.5]]), [[1.5, 0.5]])
        assert np.allclose(m.det([[0.3, 0.3]]), 2.0)
        assert m.depth == 2

    def test_compose_flattens(self):
        a = IdentityMap()
        m = compose_all([a, a, a])
        assert isinstance(m, CompositeMap)
        assert len(m.factors) == 3

    def test_domain_mismatch(self):
        grow = AffineMap([[2.0, 0.0], [0.0, 2.0]], domain=UNIT_SQUARE)
        with pytest.raises(DomainMismatchError):
            compose(IdentityMap(), grow)

    def test_cell_det_field_of_affine_map(self):
        """Cell averages of a linear map equal its determinant"""
        m = AffineMap([[1.5, 0.2], [0.1, 0.8]], domain=UNIT_SQUARE)
        dets = cell_det_field(m, 8)
        assert dets.shape == (8, 8)
        assert np.allclose(dets, 1.5 * 0.8 - 0.2 * 0.1)

    def test_evaluate_grid_is_memoized(self):
        m = CompositeMap([IdentityMap()])
        first = m.evaluate_grid(4)
        assert first.shape == (5, 5, 2)
        assert m.evaluate_grid(4) is first

    def test_cell_dets_reuse_the_node_grid(self, monkeypatch):
        """cell_det_field(m, n) samples the 2n node grid through the cache"""
        calls = []
        original = AffineMap._evaluate

        def counting(self, points):
            calls.append(len(points))
            return original(self, points)

        monkeypatch.setattr(AffineMap, "_evaluate", counting)
        m = AffineMap([[1.5, 0.2], [0.1, 0.8]], domain=UNIT_SQUARE)
        cell_det_field(m, 8)
        images = m.evaluate_grid(16)
        cell_det_field(m, 8)
        assert calls == [17 * 17]
        assert np.allclose(images[16, 16], [1.7, 0.9])

    def test_single_point_evaluation(self):
        m = AffineMap([[2.0, 0.0], [0.0, 0.5]], domain=UNIT_SQUARE)
        assert np.allclose(eval_map(m, (0.25, 0.5)), [0.5, 0.25])
        assert np.allclose(eval_jacobian(m, (0.25, 0.5)), [[2.0, 0.0], [0.0, 0.5]])
        logger.info("✓ Single-point evaluation matches the batch form")
