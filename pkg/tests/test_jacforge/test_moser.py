"""
Tests for mollification, the spectral Neumann solve and the Moser flow.

Prerequisites:
- numpy and scipy installed
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

from jacforge.config import MoserConfig
from jacforge.core import ScalarField, grid_centers
from jacforge.errors import (
    DeltaInfeasibleError,
    FieldFormatError,
    NonPositiveFieldError,
    ToleranceNotMetError,
)
from jacforge.moser import (
    bump_kernel,
    divergence_residual,
    mollify,
    mollify_and_lift,
    moser_from_config,
    moser_solve,
    neumann_potential_coefficients,
    superlevel_defect_set,
)


@pytest.fixture(scope="module")
def cosine_field():
    """f = 1 + 0.3·cos(πx)cos(πy) on a 32×32 grid (∫f = 1 exactly)"""
    return ScalarField.from_function(
        lambda x, y: 1.0 + 0.3 * np.cos(math.pi * x) * np.cos(math.pi * y), 32
    )


@pytest.fixture(scope="module")
def cosine_flow(cosine_field):
    return moser_solve(cosine_field, tol=5e-2, steps=32, raise_on_miss=False)


class TestMollify:
    def test_kernel_is_normalized(self):
        k = bump_kernel(3)
        assert k.shape == (7, 7)
        assert k.sum() == pytest.approx(1.0)
        assert np.allclose(k, k.T)

    def test_zero_radius_is_a_copy(self):
        s = np.arange(16, dtype=float).reshape(4, 4)
        assert np.array_equal(mollify(s, 0.1), s)

    def test_lift_restores_unit_mass(self):
        f = ScalarField.constant(0.2, 32)
        lifted = mollify_and_lift(f, 0.1, 0.125)
        assert lifted.result.integral() == pytest.approx(1.0)
        assert lifted.l_eps > 0
        logger.info(f"✓ l_ε = {lifted.l_eps:.4f}")

    def test_infeasible_delta(self):
        with pytest.raises(DeltaInfeasibleError):
            mollify_and_lift(ScalarField.constant(0.9, 16), 0.1, 0.125)
        with pytest.raises(DeltaInfeasibleError):
            mollify_and_lift(ScalarField.constant(0.1, 16), 0.0, 0.125)

    def test_defect_set_of_lifted_zero_field_is_empty(self):
        f = ScalarField.constant(0.0, 16)
        lifted = mollify_and_lift(f, 0.1, 0.125)
        assert superlevel_defect_set(f, lifted.result, 0.1).is_empty()


class TestNeumannSolve:
    def test_single_mode(self):
        """Δu = cos(πx)cos(πy) has u = −cos(πx)cos(πy)/(2π²)"""
        x, y = grid_centers(16)
        g = np.cos(math.pi * x) * np.cos(math.pi * y)
        u_hat = neumann_potential_coefficients(g)
        assert u_hat[1, 1] == pytest.approx(-1.0 / (2 * math.pi**2))
        mask = np.ones_like(u_hat, dtype=bool)
        mask[1, 1] = False
        assert np.allclose(u_hat[mask], 0.0, atol=1e-12)

    def test_residual_is_roundoff(self):
        g = np.random.default_rng(2).random((16, 16))
        assert divergence_residual(g, neumann_potential_coefficients(g)) < 1e-10


class TestMoserFlow:
    """Time-one map of the Moser flow"""

    def test_uniform_density_is_identity(self):
        flow = moser_solve(ScalarField.constant(1.0, 16))
        assert flow.trivial
        assert flow.depth == 0
        pts = np.array([[0.1, 0.2], [0.7, 0.9]])
        assert np.array_equal(flow(pts), pts)
        assert flow.report.det_residual_inf < 1e-12

    def test_prescribed_determinant(self, cosine_flow):
        report = cosine_flow.report
        assert report.det_residual_inf <= 5e-2
        assert report.mass_error <= 1e-2
        logger.info(f"✓ Moser residual {report.det_residual_inf:.3e}")

    def test_boundary_stays_on_boundary(self, cosine_flow):
        assert cosine_flow.report.boundary_max_err <= 1e-9

    def test_flow_is_not_identity(self, cosine_flow):
        pts = np.array([[0.3, 0.3]])
        assert not np.allclose(cosine_flow(pts), pts)

    def test_nonpositive_field(self):
        with pytest.raises(NonPositiveFieldError):
            moser_solve(ScalarField.constant(0.0, 8))

    def test_mass_must_be_one(self):
        with pytest.raises(FieldFormatError):
            moser_solve(ScalarField.constant(0.5, 8))

    def test_tolerance_miss_raises(self, cosine_field):
        with pytest.raises(ToleranceNotMetError) as exc:
            moser_solve(cosine_field, tol=1e-12, steps=4)
        assert exc.value.exit_code == 4

    def test_from_config(self):
        flow = moser_from_config(ScalarField.constant(1.0, 8), MoserConfig(rk4_steps=4))
        assert flow.steps == 4
