"""Unit tests for voxel domains, grid energies and the conjugate gradient optimizer."""

import numpy as np
import pytest

from finslercap.core.errors import ConstructionError, ConvergenceFailure, InvalidArgumentError
from finslercap.core.metrics import metrics_collector
from finslercap.norms.models import EllipsoidalNorm, EuclideanNorm, PNorm, RegularizedNorm
from finslercap.pde.domain import Boundary, NodeClass, ScalarField, VoxelDomain, cube_geometry
from finslercap.pde.energy import EnergyAssembly, ReducedEnergy, energy, energy_gradient
from finslercap.pde.optimizer import NCGOptions, minimize_ncg


def _disc_levelset(x):
    return np.linalg.norm(x, axis=-1) - 1.0


@pytest.fixture
def disc_domain():
    """Unit disc on a 21 x 21 grid with spacing 1/8; the origin is a node."""
    return VoxelDomain.centered_cube(1.0, 21, [Boundary("disc", _disc_levelset, role="outer")], dimension=2)


def _origin_index(domain):
    return int(np.argmin(np.linalg.norm(domain.coordinates(), axis=1)))


def _quadratic(diag, rhs):
    def value_and_grad(x):
        return 0.5 * float(np.sum(diag * x * x)) - float(rhs @ x), diag * x - rhs
    return value_and_grad


# ============================================================
# Domain construction
# ============================================================

class TestVoxelDomain:
    """Node classification, ghost map and cut cells."""

    def test_cube_geometry(self):
        """Margins add whole cells outside [-a, a]."""
        lo, h = cube_geometry(1.0, 9, margin=2)
        assert h == pytest.approx(0.5)
        assert lo == pytest.approx(-2.0)

    def test_cube_geometry_too_small(self):
        """The cube needs at least two cells inside the margins."""
        with pytest.raises(InvalidArgumentError, match="too small"):
            cube_geometry(1.0, 6, margin=2)

    def test_classification(self, disc_domain):
        """Interior nodes lie strictly inside; ghosts touch the region."""
        d = disc_domain
        assert d.node_count == 21 * 21
        assert d.spacing == pytest.approx(0.125)
        coords = d.coordinates()
        assert np.all(np.linalg.norm(coords[d.interior_nodes], axis=1) < 1.0)
        assert np.all(np.linalg.norm(coords[d.ghost_nodes], axis=1) >= 1.0)
        assert d.interior_count + d.ghost_count == d.active_nodes.shape[0]
        assert d.node_class[_origin_index(d)] == NodeClass.INTERIOR

    def test_ghost_partners_are_interior(self, disc_domain):
        """Every ghost extrapolates from an interior neighbour with theta in [theta_min, 1]."""
        d = disc_domain
        assert np.all(d.node_class[d.ghost_partner] == NodeClass.INTERIOR)
        assert np.all(d.ghost_theta >= d.theta_min)
        assert np.all(d.ghost_theta <= 1.0)

    def test_cell_fractions(self, disc_domain):
        """Covered cell area approximates the disc area."""
        d = disc_domain
        assert np.all((d.cell_fraction > 0.0) & (d.cell_fraction <= 1.0))
        area = float(np.sum(d.cell_fraction)) * d.spacing ** 2
        assert 0.9 * np.pi < area < 1.1 * np.pi

    def test_constants_are_reproduced(self, disc_domain):
        """A constant equal to the boundary value extends exactly to the ghosts."""
        d = disc_domain
        full = d.expand(np.ones(d.interior_count), [1.0])
        assert np.allclose(full, 1.0)

    def test_ghost_offset_length(self, disc_domain):
        """One boundary value per boundary."""
        with pytest.raises(InvalidArgumentError, match="boundary values"):
            disc_domain.ghost_offset([1.0, 0.0])

    def test_summary_and_helpers(self, disc_domain):
        """summary() describes the grid; cells_across divides by the spacing."""
        summary = disc_domain.summary()
        assert summary["shape"] == [21, 21]
        assert summary["boundaries"] == ["disc"]
        assert summary["cut_cells"] > 0
        assert disc_domain.cells_across(1.0) == pytest.approx(8.0)

    def test_cached(self, disc_domain):
        """cached() computes once per key."""
        calls = []

        def compute():
            calls.append(1)
            return np.zeros(disc_domain.node_count)

        first = disc_domain.cached("zeros", compute)
        second = disc_domain.cached("zeros", compute)
        assert first is second
        assert len(calls) == 1

    def test_bad_role(self):
        """Roles are inner or outer."""
        with pytest.raises(InvalidArgumentError, match="role"):
            Boundary("disc", _disc_levelset, role="middle")

    def test_region_reaching_faces(self):
        """A region touching the box faces is rejected."""
        everywhere = Boundary("all", lambda x: -np.ones(x.shape[0]))
        with pytest.raises(ConstructionError, match="faces"):
            VoxelDomain.centered_cube(1.0, 11, [everywhere], dimension=2)

    def test_empty_region(self):
        """A region with no interior node is rejected."""
        nowhere = Boundary("none", lambda x: np.ones(x.shape[0]))
        with pytest.raises(ConstructionError, match="no interior nodes"):
            VoxelDomain.centered_cube(1.0, 11, [nowhere], dimension=2)

    def test_non_finite_levelset(self):
        """Level sets must be finite on every node."""
        bad = Boundary("nan", lambda x: np.full(x.shape[0], np.nan))
        with pytest.raises(ConstructionError, match="not finite"):
            VoxelDomain.centered_cube(1.0, 11, [bad], dimension=2)

    def test_shape_mismatch(self):
        """Origin and shape must agree on the dimension."""
        with pytest.raises(InvalidArgumentError):
            VoxelDomain([0.0, 0.0, 0.0], 0.1, (5, 5), [Boundary("disc", _disc_levelset)])

    def test_needs_boundary(self):
        """At least one boundary is required."""
        with pytest.raises(InvalidArgumentError, match="at least one boundary"):
            VoxelDomain([0.0, 0.0], 0.1, (5, 5), [])

    def test_boundary_data_reproduces_linear_field(self):
        """Ghosts extrapolated from data sampled at the crossings carry a linear field exactly."""
        boundary = Boundary("disc", _disc_levelset, role="outer", data=lambda x: x[:, 0] - 2.0 * x[:, 1])
        domain = VoxelDomain.centered_cube(1.0, 21, [boundary], dimension=2)
        coords = domain.coordinates()
        linear = coords[:, 0] - 2.0 * coords[:, 1]
        u = linear[domain.interior_nodes]
        assert np.allclose(domain.expand(u, [0.0]), linear[domain.active_nodes], atol=1e-12)
        field = ScalarField.from_solution(domain, u, [0.0], kind="linear")
        assert np.allclose(field.flat(), linear, atol=1e-12)

    def test_boundary_data_must_be_finite(self):
        """Data that is not finite at a crossing is a construction error."""
        boundary = Boundary("disc", _disc_levelset, role="outer", data=lambda x: np.full(x.shape[0], np.nan))
        with pytest.raises(ConstructionError, match="boundary data"):
            VoxelDomain.centered_cube(1.0, 21, [boundary], dimension=2)

    def test_cell_centers(self, disc_domain):
        """One center per active cell, half a cell from its lowest corner."""
        centers = disc_domain.cell_centers()
        assert centers.shape == (disc_domain.cell_corners.shape[0], 2)
        lowest = disc_domain.coordinates()[disc_domain.active_nodes[disc_domain.cell_corners[:, 0]]]
        assert np.allclose(centers - lowest, 0.5 * disc_domain.spacing)


# ============================================================
# Fields
# ============================================================

class TestScalarField:
    """Nodal fields and interpolation."""

    def test_sample_linear(self, disc_domain, rng):
        """Multilinear interpolation reproduces linear functions."""
        f = ScalarField.from_function(disc_domain, lambda x: 2.0 * x[:, 0] - x[:, 1] + 0.5)
        pts = rng.uniform(-0.9, 0.9, size=(20, 2))
        assert np.allclose(f.sample(pts), 2.0 * pts[:, 0] - pts[:, 1] + 0.5)

    def test_sample_outside_is_nan(self, disc_domain):
        """Points outside the grid box give NaN."""
        f = ScalarField.from_function(disc_domain, lambda x: x[:, 0])
        assert np.isnan(f.sample(np.array([[10.0, 0.0]]))[0])

    def test_from_solution(self, disc_domain):
        """Exterior nodes take the boundary value."""
        d = disc_domain
        f = ScalarField.from_solution(d, np.full(d.interior_count, 0.25), [0.0], kind="test")
        exterior = d.node_class == NodeClass.EXTERIOR
        assert np.all(f.flat()[exterior] == 0.0)
        assert np.allclose(f.interior_values(), 0.25)
        assert f.values.shape == (21, 21)

    def test_with_values_merges_metadata(self, disc_domain):
        """with_values keeps the domain and merges metadata."""
        f = ScalarField(disc_domain, np.zeros(disc_domain.node_count), metadata={"a": 1})
        g = f.with_values(np.ones(disc_domain.node_count), kind="ones", b=2)
        assert g.domain is disc_domain
        assert g.kind == "ones"
        assert g.metadata == {"a": 1, "b": 2}


# ============================================================
# Energy
# ============================================================

class TestEnergy:
    """Corner-gradient cell energies."""

    def test_linear_field(self, disc_domain):
        """A linear field has energy V(a) times the covered area."""
        a = np.array([0.6, -0.8])
        f = ScalarField.from_function(disc_domain, lambda x: x @ a)
        covered = float(np.sum(disc_domain.cell_fraction)) * disc_domain.spacing ** 2
        assert energy(f, EuclideanNorm(2)) == pytest.approx(0.5 * covered, rel=1e-12)

    def test_linear_field_anisotropic(self, disc_domain):
        """V(a) = a^T A a / 2 for an ellipsoidal norm."""
        model = EllipsoidalNorm(np.diag([1.0, 4.0]))
        a = np.array([1.0, 1.0])
        f = ScalarField.from_function(disc_domain, lambda x: x @ a)
        covered = float(np.sum(disc_domain.cell_fraction)) * disc_domain.spacing ** 2
        assert energy(f, model) == pytest.approx(2.5 * covered, rel=1e-10)

    def test_source_term(self, disc_domain):
        """A constant c with source s has energy s c |covered|."""
        f = ScalarField(disc_domain, np.full(disc_domain.node_count, 0.5))
        covered = float(np.sum(disc_domain.cell_fraction)) * disc_domain.spacing ** 2
        assert energy(f, EuclideanNorm(2), source=2.0) == pytest.approx(covered, rel=1e-12)

    def test_gradient_vanishes_for_linear_field(self, disc_domain):
        """The discrete Laplacian of a linear field is zero away from cut cells."""
        f = ScalarField.from_function(disc_domain, lambda x: 3.0 * x[:, 0] + x[:, 1])
        grad = energy_gradient(f, EuclideanNorm(2))
        assert abs(grad.flat()[_origin_index(disc_domain)]) < 1e-12
        assert grad.kind == "energy_gradient"

    def test_gradient_matches_differences(self, disc_domain, rng):
        """The analytic gradient matches central differences of the quadratic energy."""
        model = EllipsoidalNorm(np.array([[2.0, 0.5], [0.5, 1.0]]))
        f = ScalarField(disc_domain, rng.normal(size=disc_domain.node_count))
        grad = energy_gradient(f, model).flat()
        step = 1e-4
        for node in disc_domain.interior_nodes[::17]:
            plus = f.flat().copy()
            minus = f.flat().copy()
            plus[node] += step
            minus[node] -= step
            fd = (energy(f.with_values(plus), model) - energy(f.with_values(minus), model)) / (2 * step)
            assert grad[node] == pytest.approx(fd, rel=1e-6, abs=1e-10)

    def test_reduced_energy_gradient(self, disc_domain, rng):
        """The reduced gradient is P^T dJ and matches differences in u."""
        assembly = EnergyAssembly(disc_domain, EuclideanNorm(2))
        reduced = ReducedEnergy(assembly, [0.5])
        u = rng.normal(size=disc_domain.interior_count)
        _, grad = reduced.value_and_grad(u)
        step = 1e-4
        for k in range(0, u.size, 23):
            e = np.zeros_like(u)
            e[k] = step
            fd = (reduced.value(u + e) - reduced.value(u - e)) / (2 * step)
            assert grad[k] == pytest.approx(fd, rel=1e-6, abs=1e-10)

    def test_records_evaluations(self, disc_domain):
        """Every evaluation is counted."""
        f = ScalarField(disc_domain, np.zeros(disc_domain.node_count))
        energy(f, EuclideanNorm(2))
        energy(f, EuclideanNorm(2))
        assert metrics_collector.get_all_metrics()["solver"]["energy_evaluations"] == 2

    def test_cell_mask_splits_energy(self, disc_domain):
        """Energies over complementary cell sets add up to the full energy."""
        f = ScalarField.from_function(disc_domain, lambda x: x[:, 0] ** 2 + x[:, 1])
        model = EllipsoidalNorm(np.diag([1.0, 4.0]))
        right = disc_domain.cell_centers()[:, 0] > 0.0
        total = energy(f, model)
        assert energy(f, model, cell_mask=right) + energy(f, model, cell_mask=~right) == pytest.approx(total, rel=1e-12)
        assert 0.0 < energy(f, model, cell_mask=right) < total

    def test_dimension_mismatch(self, disc_domain):
        """The norm and domain dimensions must agree."""
        with pytest.raises(InvalidArgumentError, match="does not match"):
            EnergyAssembly(disc_domain, EuclideanNorm(3))


# ============================================================
# Nonlinear conjugate gradient
# ============================================================

class TestMinimizeNCG:
    """Polak-Ribiere NCG with strong Wolfe line search."""

    def test_quadratic(self):
        """A diagonal quadratic converges to A^{-1} b."""
        diag = np.arange(1.0, 11.0)
        rhs = np.ones(10)
        result = minimize_ncg(_quadratic(diag, rhs), np.zeros(10), problem="quadratic")
        assert result.converged is True
        assert result.reason in ("gradient", "energy")
        assert np.allclose(result.x, rhs / diag, atol=1e-5)
        assert result.energy == pytest.approx(-0.5 * float(np.sum(1.0 / diag)), rel=1e-8)
        assert result.history[0] == 0.0

    def test_records_solve(self):
        """Converged solves are counted by problem."""
        minimize_ncg(_quadratic(np.ones(3), np.ones(3)), np.zeros(3), problem="quadratic")
        solver = metrics_collector.get_all_metrics()["solver"]
        assert solver["total_solves"] == 1
        assert solver["converged_solves"] == 1
        assert solver["solves_by_problem"]["quadratic"] == 1

    def test_start_at_minimum(self):
        """A zero gradient stops before the first step."""
        result = minimize_ncg(_quadratic(np.ones(4), np.zeros(4)), np.zeros(4))
        assert result.iterations == 0
        assert result.reason == "gradient"

    def test_grad_scale(self):
        """The gradient test is relative to grad_scale."""
        result = minimize_ncg(_quadratic(np.ones(4), np.ones(4)), np.zeros(4), grad_scale=1e12)
        assert result.iterations == 0

    def test_iteration_cap(self):
        """Hitting max_iters raises with the gradient history."""
        diag = np.arange(1.0, 11.0)
        with pytest.raises(ConvergenceFailure, match="no convergence within 2 iterations") as info:
            minimize_ncg(_quadratic(diag, np.ones(10)), np.zeros(10), NCGOptions(max_iters=2), problem="capped")
        assert len(info.value.residual_history) == 2
        assert metrics_collector.get_all_metrics()["solver"]["failed_solves"] == 1

    def test_energy_history_non_increasing(self, disc_domain):
        """Every accepted step lowers the energy, also for a non-quadratic V."""
        model = RegularizedNorm(PNorm(4.0, [1.0, 2.0]), 0.1)
        reduced = ReducedEnergy(EnergyAssembly(disc_domain, model, source=1.0), [0.0])
        result = minimize_ncg(
            reduced.value_and_grad,
            np.zeros(disc_domain.interior_count),
            NCGOptions(grad_tol=1e-8),
            problem="torsion",
        )
        history = np.asarray(result.history)
        assert history.shape[0] == result.iterations + 1
        assert history[0] == 0.0
        assert np.all(np.diff(history) <= 0.0)
        assert history[-1] == result.energy < 0.0
