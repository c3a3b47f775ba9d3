"""Unit tests for post-processing of fields, on analytic fields with known derivatives."""

import numpy as np
import pytest

from finslercap.core.errors import InvalidArgumentError
from finslercap.geometry.bodies import euclidean_ball, wulff_ball
from finslercap.geometry.sphere import sphere_grid
from finslercap.norms.models import EllipsoidalNorm, EuclideanNorm
from finslercap.pde.analysis import (
    auxiliary_field,
    boundary_flux,
    curvature_decomposition_check,
    decay_brackets,
    finsler_laplacian_apply,
    grid_derivatives,
    proof_diagnostics,
    radial_profile,
    torsion_identities,
)
from finslercap.pde.domain import Boundary, ScalarField, VoxelDomain


def _radius(x):
    return np.linalg.norm(x, axis=-1)


@pytest.fixture
def disc_domain():
    return VoxelDomain.centered_cube(1.0, 21, [Boundary("disc", lambda x: _radius(x) - 1.0)], dimension=2)


@pytest.fixture
def disc_torsion(disc_domain):
    """(|x|^2 - 1)/4, the torsion function of the unit disc."""
    return ScalarField.from_function(disc_domain, lambda x: (_radius(x) ** 2 - 1.0) / 4.0, kind="torsion")


@pytest.fixture
def shell_domain():
    """1 < |x| < 4 in R^3 with spacing 0.4."""
    boundaries = [
        Boundary("body", lambda x: 1.0 - _radius(x), role="inner"),
        Boundary("outer", lambda x: _radius(x) - 4.0, role="outer"),
    ]
    return VoxelDomain.centered_cube(4.0, 25, boundaries, dimension=3)


@pytest.fixture
def ball_potential(shell_domain):
    """1/|x|, the capacitary potential of the unit ball (clamped deep inside it)."""
    return ScalarField.from_function(
        shell_domain, lambda x: 1.0 / np.maximum(_radius(x), 0.5), kind="capacity"
    )


# ============================================================
# Derivatives and the Finsler Laplacian
# ============================================================

class TestDerivatives:
    """Central differences are exact on quadratics."""

    def test_quadratic(self):
        """D(x^2 + 3xy) = (2x + 3y, 3x) and D^2 is constant."""
        axis = np.linspace(-1.0, 1.0, 11)
        x, y = np.meshgrid(axis, axis, indexing="ij")
        grad, hess = grid_derivatives(x * x + 3 * x * y, 0.2)
        inner = (slice(1, -1), slice(1, -1))
        assert np.allclose(grad[0][inner], (2 * x + 3 * y)[inner])
        assert np.allclose(grad[1][inner], (3 * x)[inner])
        assert np.allclose(hess[0, 0][inner], 2.0)
        assert np.allclose(hess[0, 1][inner], 3.0)
        assert np.allclose(hess[1, 1][inner], 0.0)

    def test_laplacian_of_torsion(self, disc_torsion):
        """Delta psi = 1 for the torsion function; the critical point is skipped."""
        lap = finsler_laplacian_apply(disc_torsion, EuclideanNorm(2))
        values = lap.flat()[disc_torsion.domain.interior_nodes]
        assert np.allclose(values[np.isfinite(values)], 1.0)
        assert lap.metadata["skipped_nodes"] == 1

    def test_anisotropic_laplacian(self, disc_domain):
        """Delta_H (x^2 + y^2) = 2 tr A for H(xi) = sqrt(xi^T A xi)."""
        model = EllipsoidalNorm(np.diag([1.0, 3.0]))
        field = ScalarField.from_function(disc_domain, lambda x: _radius(x) ** 2)
        lap = finsler_laplacian_apply(field, model)
        values = lap.flat()[disc_domain.interior_nodes]
        assert np.allclose(values[np.isfinite(values)], 8.0)

    def test_curvature_decomposition(self, disc_domain):
        """Delta u splits into curvature and normal parts on level sets."""
        field = ScalarField.from_function(disc_domain, lambda x: x[:, 0] + 0.3 * x[:, 1] ** 2)
        result = curvature_decomposition_check(field, EuclideanNorm(2))
        assert result["nodes"] > 0
        assert result["relative_residual"] < 0.05

    def test_curvature_decomposition_empty_level(self, disc_domain):
        """A level set that misses the grid is rejected."""
        field = ScalarField.from_function(disc_domain, lambda x: x[:, 0])
        with pytest.raises(InvalidArgumentError, match="level set"):
            curvature_decomposition_check(field, EuclideanNorm(2), level=50.0)


# ============================================================
# Boundary flux and torsion identities
# ============================================================

class TestBoundaryFlux:
    """One-sided differences along the normal."""

    def test_torsion_flux(self, disc_torsion):
        """H(D psi) = 1/2 on the unit circle."""
        model = EuclideanNorm(2)
        flux = boundary_flux(disc_torsion, model, wulff_ball(model, 1.0), side="interior", bc_value=0.0)
        assert flux.mean == pytest.approx(0.5, rel=0.05)
        assert flux.cv < 0.05
        assert flux.integral() == pytest.approx(np.pi, rel=0.05)
        summary = flux.to_dict()
        assert summary["samples"] == sphere_grid(2).size
        assert summary["degraded"] == 0

    def test_rows(self, disc_torsion):
        """CSV rows carry the index, coordinates and flux."""
        model = EuclideanNorm(2)
        flux = boundary_flux(disc_torsion, model, wulff_ball(model, 1.0), side="interior",
                             grid=sphere_grid(2, 16), bc_value=0.0)
        rows = flux.rows()
        assert len(rows) == 16
        assert set(rows[0]) == {"theta_index", "x", "y", "H_Du"}

    def test_bad_side(self, disc_torsion):
        """side is 'exterior' or 'interior'."""
        model = EuclideanNorm(2)
        with pytest.raises(InvalidArgumentError, match="side"):
            boundary_flux(disc_torsion, model, wulff_ball(model, 1.0), side="inside", bc_value=0.0)

    def test_needs_boundary_value(self, disc_torsion):
        """Fields without solver metadata need an explicit boundary value."""
        model = EuclideanNorm(2)
        with pytest.raises(InvalidArgumentError, match="bc_value"):
            boundary_flux(disc_torsion, model, wulff_ball(model, 1.0), side="interior")

    def test_exterior_flux_of_ball_potential(self, ball_potential):
        """H(Du) = 1 on the unit sphere for u = 1/|x|, up to interpolation error on a coarse grid."""
        model = EuclideanNorm(3)
        ball_potential.metadata.update({"boundary_values": [1.0, 0.0], "flux_linearization": [1.0, 0.0]})
        flux = boundary_flux(ball_potential, model, euclidean_ball(1.0), grid=sphere_grid(3, 16, 32))
        assert flux.mean == pytest.approx(1.0, rel=0.1)

    def test_torsion_identities(self, disc_torsion):
        """The flux integral is the area and W = I/N."""
        model = EuclideanNorm(2)
        result = torsion_identities(disc_torsion, model, wulff_ball(model, 1.0))
        assert result["volume"] == pytest.approx(np.pi, rel=1e-10)
        assert result["volume_relative_error"] < 0.05
        assert result["w_trace_max_error"] < 1e-8
        assert result["w_isotropy_max"] < 1e-8


# ============================================================
# Decay, profiles and the auxiliary function
# ============================================================

class TestDecayAndProfiles:
    """Potentials of the unit ball."""

    def test_decay_brackets(self, ball_potential):
        """u |x| = 1 exactly and H(Du) |x|^2 is close to 1 on the shell."""
        result = decay_brackets(ball_potential, EuclideanNorm(3), 1.0, 6.0)
        assert result["shell"] == [2.0, 3.0]
        assert result["nodes"] > 0
        assert result["ratio_A"] == pytest.approx(1.0, abs=1e-12)
        assert result["A1"] == pytest.approx(1.0)
        assert result["ratio_B"] < 1.15

    def test_decay_empty_shell(self, ball_potential):
        """No nodes in the shell gives None."""
        assert decay_brackets(ball_potential, EuclideanNorm(3), 10.0, 30.0) is None

    def test_radial_profile(self, disc_torsion):
        """Profile samples match the closed form up to interpolation error."""
        model = EuclideanNorm(2)
        rows = radial_profile(disc_torsion, model, closed_form=lambda r: (r * r - 1.0) / 4.0, count=16)
        assert rows
        assert {row["direction"] for row in rows} == {0, 1}
        assert max(abs(row["u"] - row["u_closed_form"]) for row in rows) < 0.01

    def test_auxiliary_field(self, ball_potential):
        """v = u^{-2} = |x|^2 in R^3."""
        v = auxiliary_field(ball_potential)
        nodes = ball_potential.domain.interior_nodes
        coords = ball_potential.domain.coordinates()[nodes]
        assert np.allclose(v.flat()[nodes], _radius(coords) ** 2)
        assert v.kind == "auxiliary"

    def test_auxiliary_needs_three_dimensions(self, disc_torsion):
        """The exponent -2/(N-2) is undefined in the plane."""
        with pytest.raises(InvalidArgumentError, match="N >= 3"):
            auxiliary_field(disc_torsion)

    def test_proof_diagnostics_on_ball(self, ball_potential):
        """W = 2 I is isotropic and attains Newton equality; gamma is constant."""
        diag = proof_diagnostics(ball_potential, EuclideanNorm(3), euclidean_ball(1.0), flux_mean=1.0)
        assert diag.nodes > 0
        assert diag.newton["violations"] == 0
        assert diag.newton["isotropy"]["max"] < 1e-8
        assert diag.gamma["relative_mismatch"]["max"] < 1e-8
        assert diag.gamma["expected_boundary"] == pytest.approx(2.0)
        assert diag.gamma["boundary"]["mean"] == pytest.approx(2.0, rel=1e-8)
        assert diag.boundary_identity["nodes"] > 0
        assert diag.cofactor_divergence["max"] < 1e-8
        assert set(diag.to_dict()) >= {"nodes", "newton", "boundary_identity", "gamma", "cofactor_divergence"}
