"""
Tests for the assembly pipelines: parameter choice, the small-norm
iteration, the Lᵖ and L∞ solvers and the C¹ obstruction.

Prerequisites:
- numpy, scipy and pydantic installed
"""

import math
import sys
import logging
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

# Configure logging for tests
logging.basicConfig(level=logging.INFO, format='%(levelname)s - %(name)s - %(message)s')
logger = logging.getLogger(__name__)

# Add src to path for imports
src_path = Path(__file__).parent.parent.parent / 'src'
sys.path.insert(0, str(src_path))

from jacforge.core import CompactSetMask, IdentityMap, ScalarField
from jacforge.errors import (
    EpsilonSearchFailedError,
    InfeasibleExponentsError,
    NecessaryConditionError,
    SmallnessError,
    ToleranceNotMetError,
)
from jacforge.solver import (
    LinfConfig,
    LpConfig,
    c1_obstruction,
    choose_tau0,
    dense_mask,
    fraction_satisfied,
    linf_epsilon,
    require_fraction,
    solve_linf,
    solve_lp,
    solve_lp_small,
    superlevel_mask,
    transport_mask,
)
from jacforge.verify import weak_form_residuals


@pytest.fixture(scope="module")
def one_cell_field():
    """f = 0.6 on one cell of a 128×128 grid, 0 elsewhere"""
    samples = np.zeros((128, 128))
    samples[40, 70] = 0.6
    return ScalarField(samples)


class TestParameters:
    def test_lambda_midpoint(self):
        """p = 3, q = 1.5 gives λ = 1/2"""
        lam, tau0 = choose_tau0(3.0, 1.5)
        assert lam == pytest.approx(0.5)
        assert tau0 >= 1.0
        C = 16.0
        lhs = math.log(C) / 0.5 + math.log1p(C * tau0)
        assert lhs <= 1.5 * math.log1p(tau0) + 1e-5
        logger.info(f"✓ Certified τ₀ = {tau0:.4f}")

    def test_infeasible_exponents(self):
        """q = (p+1)/2 leaves no room for λ"""
        with pytest.raises(InfeasibleExponentsError) as exc:
            choose_tau0(2.0, 1.5)
        assert exc.value.exit_code == 3

    def test_config_relation_is_checked(self):
        with pytest.raises(ValidationError):
            LpConfig(p=3.0, q=1.5, lam=2.0)

    def test_default_gate(self):
        cfg = LpConfig.for_exponents(3.0, 1.5)
        assert cfg.lp_gate == pytest.approx(0.03125)
        assert cfg.tau0 == 1.0


class TestSuperlevelSets:
    def test_threshold_half(self):
        samples = np.array([[0.4, 0.5], [0.6, 0.0]])
        mask = superlevel_mask(ScalarField(samples))
        assert mask.cells == frozenset({(0, 1), (1, 0)})

    def test_det_field_raises_threshold(self):
        samples = np.full((2, 2), 0.6)
        det = np.array([[1.0, 2.0], [1.0, 1.0]])
        mask = superlevel_mask(ScalarField(samples), det)
        assert (0, 1) not in mask.cells
        assert len(mask) == 3

    def test_identity_transport(self):
        mask = CompactSetMask(3, frozenset({(1, 2), (5, 5)}))
        assert transport_mask(IdentityMap(), mask) == mask


class TestSmallNormIteration:
    """Iterated stretching of transported superlevel sets"""

    def test_zero_field(self):
        m, trace = solve_lp_small(ScalarField.constant(0.0, 16), LpConfig())
        assert trace.converged
        assert trace.iterations == 0
        pts = np.array([[0.3, 0.6]])
        assert np.allclose(m(pts), pts)

    def test_gate(self):
        with pytest.raises(SmallnessError):
            solve_lp_small(ScalarField.constant(0.5, 16), LpConfig())

    def test_single_cell_is_stretched_once(self, one_cell_field):
        cfg = LpConfig(measure_tol=1e-6)
        m, trace = solve_lp_small(one_cell_field, cfg)
        assert trace.converged
        assert trace.iterations == 1
        assert len(trace.masks) == 1
        first = trace.records[0]
        assert first.min_det_on_mi >= 2.0 - 1e-9
        assert first.min_det_global > 0
        frac, _ = fraction_satisfied(m, one_cell_field)
        assert frac == 1.0
        logger.info(f"✓ One iteration, det on M₁ ≥ {first.min_det_on_mi:.4f}")

    def test_two_level_decay(self):
        """
        f with values 0.6 and 0.9 on a 2×2 block of a 256 grid: |M_{i+1}|/|M_i|
        stays below (1+τ₀)^{−(p−1)}·1.5 and every partial composition keeps
        det ≥ 1/2
        """
        samples = np.zeros((256, 256))
        samples[80:82, 140:142] = 0.6
        samples[81, 141] = 0.9
        f = ScalarField(samples)
        cfg = LpConfig(measure_tol=1e-6)
        assert f.lp_norm(cfg.p) <= cfg.lp_gate

        m, trace = solve_lp_small(f, cfg)
        assert trace.converged
        bound = (1 + cfg.tau0) ** (-(cfg.p - 1)) * 1.5
        ratios = [r.ratio for r in trace.records if r.ratio is not None]
        assert ratios
        assert all(ratio <= bound for ratio in ratios)
        assert all(r.min_det_global >= 0.5 for r in trace.records)
        assert trace.records[0].min_det_on_mi >= 2.0 - 1e-9
        frac, _ = fraction_satisfied(m, f)
        assert frac == 1.0
        logger.info(f"✓ Decay ratios {ratios} within {bound:.3f}")


class TestLpPipeline:
    def test_zero_field_is_identity(self):
        m, report, trace = solve_lp(ScalarField.constant(0.0, 16))
        assert trace is None
        assert report.defect_measure == 0.0
        assert report.fraction_satisfied == 1.0
        pts = np.array([[0.25, 0.75]])
        assert np.allclose(m(pts), pts)

    def test_mass_condition(self):
        with pytest.raises(NecessaryConditionError):
            solve_lp(ScalarField.constant(1.0, 16))

    def test_composition_with_defect_iteration(self):
        """
        f = 0.95 on one cell: the mollified field stays below (1+δ)f there, so
        the transported defect is stretched once and composed after the flow
        """
        samples = np.zeros((128, 128))
        samples[40, 70] = 0.95
        f = ScalarField(samples)
        cfg = LpConfig.for_exponents(3.0, 1.5, lp_gate=0.1, measure_tol=1e-6)
        m, report, trace = solve_lp(f, 3.0, 1.5, cfg=cfg)
        assert report.epsilon == 0.125
        assert report.defect_measure == pytest.approx(1 / 128**2)
        assert trace is not None
        assert trace.converged
        assert trace.iterations == 1
        assert report.fraction_satisfied == 1.0

        passed, residuals = weak_form_residuals(m, f)
        assert passed
        logger.info(f"✓ Lp solve with one stretch, weak residuals ≥ {min(residuals):.3e}")

    def test_epsilon_is_halved_until_the_defect_fits(self):
        """
        f = 0.95 on a 3×3 block: at ε = 1/8 the defect is nine cells, too
        large for the stretch; at ε = 1/16 the mollified field clears (1+δ)f
        """
        samples = np.zeros((128, 128))
        samples[40:43, 70:73] = 0.95
        f = ScalarField(samples)
        cfg = LpConfig.for_exponents(3.0, 1.5, measure_tol=1e-6)
        m, report, trace = solve_lp(f, 3.0, 1.5, cfg=cfg)
        assert report.epsilon == 0.0625
        assert report.defect_measure == 0.0
        assert trace is None
        assert report.fraction_satisfied == 1.0


class TestLinfPipeline:
    def test_constant_field(self):
        """f ≡ 1/2: β = 1/2, τ₀ = 1, nothing left to stretch"""
        m, report = solve_linf(ScalarField.constant(0.5, 16))
        assert report.beta == pytest.approx(0.5)
        assert report.tau0 == pytest.approx(1.0)
        assert report.measure_a == 0.0
        assert report.f_nu_min >= 0.25
        assert report.fraction_satisfied == 1.0
        logger.info(f"✓ L∞ solve satisfied on {report.fraction_satisfied:.2%} of cells")

    def test_weak_inequality_on_output(self):
        f = ScalarField.constant(0.5, 16)
        m, _ = solve_linf(f)
        passed, residuals = weak_form_residuals(m, f)
        assert passed
        assert min(residuals) > 0

    def test_sharp_field_is_refused(self):
        """
        f = 2 on a dense random set: the flow cannot reach det ≥ f cell by
        cell, and the solver says so instead of returning the map
        """
        f = ScalarField(2.0 * dense_mask(5).to_array())
        with pytest.raises((EpsilonSearchFailedError, ToleranceNotMetError)) as exc:
            solve_linf(f)
        if isinstance(exc.value, ToleranceNotMetError):
            assert exc.value.achieved < 1.0
        assert exc.value.exit_code in (3, 4)

    def test_measure_tolerance_is_configurable(self):
        with pytest.raises(ValidationError):
            LinfConfig(measure_tol=0.0)
        assert LinfConfig().measure_tol == pytest.approx(1e-4)

    def test_epsilon_inequality(self):
        eps0 = linf_epsilon(0.5, 0.5, 1.0, 16.0, 0.25)
        factor = 1 - 16.0 * math.sqrt(1.5 * eps0)
        ys = np.linspace(0, 0.5, 11)
        assert eps0 > 0
        assert np.all(factor * (0.25 + ys) >= ys)

    def test_mass_condition(self):
        with pytest.raises(NecessaryConditionError):
            solve_linf(ScalarField.constant(1.0, 16))


class TestFinalGate:
    """Both pipelines refuse maps that miss det ≥ f on the cell grid"""

    def test_full_fraction_passes(self):
        require_fraction(1.0, 1e-4, "Lp solve")
        require_fraction(1.0 - 5e-5, 1e-4, "Lp solve")

    def test_missing_cells_raise(self):
        with pytest.raises(ToleranceNotMetError) as exc:
            require_fraction(0.61, 1e-4, "L∞ solve")
        assert exc.value.achieved == pytest.approx(0.61)
        assert exc.value.exit_code == 4


class TestC1Obstruction:
    """Dense nets force ∫det > 1 for Lipschitz determinants"""

    def test_dense_mask_meets_every_block(self):
        mask = dense_mask(5, density=0.05, seed=1)
        grid = mask.to_array()
        for a in range(0, 32, 4):
            for b in range(0, 32, 4):
                assert grid[a : a + 4, b : b + 4].any()

    def test_contradiction_for_small_lipschitz_constant(self):
        report = c1_obstruction(dense_mask(6), det_lipschitz=1.0)
        assert report.contradiction
        assert report.integral_lower_bound > 1.0

    def test_no_contradiction_for_steep_determinant(self):
        report = c1_obstruction(dense_mask(6, density=0.2), det_lipschitz=1e4)
        assert not report.contradiction

    def test_empty_mask(self):
        report = c1_obstruction(CompactSetMask.empty(4), 1.0)
        assert report.integral_lower_bound == 0.0
        assert not report.contradiction
