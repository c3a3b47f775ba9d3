"""Unit tests for norm models and the checked evaluation entry points."""

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from finslercap.core.errors import ConstructionError, InvalidArgumentError, NormDomainError
from finslercap.norms import operations
from finslercap.norms.models import (
    EllipsoidalNorm,
    EuclideanNorm,
    NormFamily,
    PNorm,
    RegularizedNorm,
    SampledNorm,
    SumNorm,
    is_pde_admissible,
)
from finslercap.geometry.sphere import sphere_grid

MODELS = {
    "euclidean": EuclideanNorm(3),
    "ellipsoidal": EllipsoidalNorm([[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 1.5]]),
    "pnorm3": PNorm(3.0, [1.0, 2.0, 0.5]),
    "regularized": RegularizedNorm(PNorm(4.0, [1.0, 1.0, 1.0]), 0.1),
    "sum": SumNorm([EuclideanNorm(3), EllipsoidalNorm(np.diag([1.0, 4.0, 9.0]))], [1.0, 0.5]),
}

signed = st.tuples(st.floats(0.01, 10.0), st.sampled_from([-1.0, 1.0])).map(lambda p: p[0] * p[1])
vectors = st.lists(signed, min_size=3, max_size=3).map(np.array)
scales = st.tuples(st.floats(0.05, 5.0), st.sampled_from([-1.0, 1.0])).map(lambda p: p[0] * p[1])
model_names = st.sampled_from(sorted(MODELS))


# ============================================================
# Closed-form values
# ============================================================

class TestClosedForms:
    """Known values of each family."""

    def test_euclidean(self, euclidean):
        """|(3, 4, 0)| = 5."""
        assert operations.eval_h(euclidean, [3.0, 4.0, 0.0]) == pytest.approx(5.0)

    def test_ellipsoidal_axes(self, ellipsoidal):
        """H(e_i) = sqrt(A_ii) for a diagonal matrix."""
        values = ellipsoidal.h(np.eye(3))
        assert np.allclose(values, np.sqrt([1.0, 2.0, 3.0]))

    def test_pnorm(self, pnorm4):
        """(1 + 1)^(1/4) for the unweighted 4-norm of (1, 1, 0)."""
        assert float(pnorm4.h(np.array([1.0, 1.0, 0.0]))) == pytest.approx(2.0 ** 0.25)

    def test_regularized_mixes_squares(self, pnorm4):
        """H_eps^2 = (1 - eps) H^2 + eps |xi|^2."""
        reg = RegularizedNorm(pnorm4, 0.2)
        xi = np.array([0.3, -1.2, 0.7])
        expected = 0.8 * float(pnorm4.h(xi)) ** 2 + 0.2 * float(xi @ xi)
        assert float(reg.h(xi)) ** 2 == pytest.approx(expected)

    def test_sum_adds_values(self):
        """A sum norm is the weighted sum of its summands."""
        a, b = EuclideanNorm(3), PNorm(3.0, [1.0, 1.0, 1.0])
        total = SumNorm([a, b], [2.0, 0.5])
        xi = np.array([1.0, -2.0, 0.5])
        assert float(total.h(xi)) == pytest.approx(2.0 * float(a.h(xi)) + 0.5 * float(b.h(xi)))

    def test_zero_weight_summands_dropped(self):
        """Summands with weight zero do not survive construction."""
        total = SumNorm([EuclideanNorm(3), PNorm(3.0, [1.0, 1.0, 1.0])], [1.0, 0.0])
        assert len(total.models) == 1


# ============================================================
# Homogeneity, evenness and derivative identities
# ============================================================

class TestHomogeneity:
    """Structural properties shared by all families."""

    @hsettings(max_examples=60, deadline=None)
    @given(name=model_names, xi=vectors, t=scales)
    def test_one_homogeneous(self, name, xi, t):
        """H(t xi) = |t| H(xi)."""
        model = MODELS[name]
        assert float(model.h(t * xi)) == pytest.approx(abs(t) * float(model.h(xi)), rel=1e-10)

    @hsettings(max_examples=60, deadline=None)
    @given(name=model_names, xi=vectors)
    def test_even(self, name, xi):
        """H(-xi) = H(xi)."""
        model = MODELS[name]
        assert float(model.h(-xi)) == pytest.approx(float(model.h(xi)), rel=1e-12)

    @hsettings(max_examples=60, deadline=None)
    @given(name=model_names, xi=vectors, t=scales)
    def test_gradient_zero_homogeneous(self, name, xi, t):
        """grad H(t xi) = sign(t) grad H(xi)."""
        model = MODELS[name]
        assert np.allclose(model.grad_h(t * xi), np.sign(t) * model.grad_h(xi), rtol=1e-9, atol=1e-12)

    @hsettings(max_examples=60, deadline=None)
    @given(name=model_names, xi=vectors)
    def test_euler_relation(self, name, xi):
        """<grad H(xi), xi> = H(xi)."""
        model = MODELS[name]
        assert float(model.grad_h(xi) @ xi) == pytest.approx(float(model.h(xi)), rel=1e-10)

    @hsettings(max_examples=60, deadline=None)
    @given(name=model_names, xi=vectors)
    def test_hessian_kernel(self, name, xi):
        """D^2 H(xi) xi = 0."""
        model = MODELS[name]
        residual = model.hess_h(xi) @ xi
        scale = np.abs(model.hess_h(xi)).max() * np.linalg.norm(xi)
        assert np.linalg.norm(residual) <= 1e-9 * max(scale, 1.0)

    @hsettings(max_examples=40, deadline=None)
    @given(name=model_names, xi=vectors)
    def test_ellipticity_identity(self, name, xi):
        """(H D^2 H + DH x DH)(xi) xi . xi = H(xi)^2."""
        model = MODELS[name]
        hess_v = model.hess_v(xi)
        assert float(xi @ hess_v @ xi) == pytest.approx(float(model.h(xi)) ** 2, rel=1e-9)

    @pytest.mark.parametrize("name", sorted(MODELS))
    def test_gradient_matches_differences(self, name, rng):
        """grad H agrees with central differences of H."""
        model = MODELS[name]
        xi = rng.normal(size=3)
        step = 1e-6
        fd = np.array([
            (float(model.h(xi + step * e)) - float(model.h(xi - step * e))) / (2 * step) for e in np.eye(3)
        ])
        assert np.allclose(model.grad_h(xi), fd, atol=1e-7)

    @pytest.mark.parametrize("name", sorted(MODELS))
    def test_batched_shapes(self, name, rng):
        """Leading axes are preserved by every evaluation method."""
        model = MODELS[name]
        xi = rng.normal(size=(4, 5, 3))
        assert model.h(xi).shape == (4, 5)
        assert model.grad_h(xi).shape == (4, 5, 3)
        assert model.hess_h(xi).shape == (4, 5, 3, 3)


# ============================================================
# Constructor validation
# ============================================================

class TestConstructors:
    """Invalid parameters are rejected at construction."""

    def test_ellipsoidal_not_symmetric(self):
        """A non-symmetric matrix is rejected."""
        with pytest.raises(InvalidArgumentError, match="symmetric"):
            EllipsoidalNorm([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])

    def test_ellipsoidal_not_positive(self):
        """An indefinite matrix is rejected."""
        with pytest.raises(InvalidArgumentError, match="positive definite"):
            EllipsoidalNorm(np.diag([1.0, -1.0, 1.0]))

    def test_pnorm_p_too_small(self):
        """p must exceed 1."""
        with pytest.raises(InvalidArgumentError, match="p must be > 1"):
            PNorm(1.0, [1.0, 1.0, 1.0])

    def test_pnorm_nonpositive_weight(self):
        """p-norm weights must be positive."""
        with pytest.raises(InvalidArgumentError):
            PNorm(3.0, [1.0, 0.0, 1.0])

    @pytest.mark.parametrize("eps", [0.0, 1.0, -0.1])
    def test_regularized_eps_range(self, pnorm4, eps):
        """eps must lie strictly inside (0, 1)."""
        with pytest.raises(InvalidArgumentError, match="eps"):
            RegularizedNorm(pnorm4, eps)

    def test_sum_mixed_dimensions(self):
        """Summands must share a dimension."""
        with pytest.raises(InvalidArgumentError, match="mixed dimensions"):
            SumNorm([EuclideanNorm(2), EuclideanNorm(3)], [1.0, 1.0])

    def test_dimension_one(self):
        """Norms need N >= 2."""
        with pytest.raises(InvalidArgumentError):
            EuclideanNorm(1)


# ============================================================
# Closed-form duals
# ============================================================

class TestDualModels:
    """dual_model returns the expected family and parameters."""

    def test_ellipsoidal_inverse(self, ellipsoidal):
        """The dual of sqrt(xi^T A xi) uses A^{-1}."""
        dual = ellipsoidal.dual_model()
        assert isinstance(dual, EllipsoidalNorm)
        assert np.allclose(dual.matrix, np.diag([1.0, 0.5, 1.0 / 3.0]))

    def test_pnorm_conjugate_exponent(self):
        """The dual of a weighted p-norm is a q-norm with 1/p + 1/q = 1."""
        model = PNorm(3.0, [1.0, 8.0, 1.0])
        dual = model.dual_model()
        assert dual.p == pytest.approx(1.5)
        assert np.allclose(dual.weights, [1.0, 8.0 ** -0.5, 1.0])

    def test_dual_of_dual(self, ellipsoidal, rng):
        """(H_0)_0 = H for the closed-form families."""
        x = rng.normal(size=(10, 3))
        twice = ellipsoidal.dual_model().dual_model()
        assert np.allclose(twice.h(x), ellipsoidal.h(x))

    def test_regularized_has_no_closed_dual(self, regularized_p4):
        """Regularized norms fall back to the numeric dual."""
        assert regularized_p4.dual_model() is None


# ============================================================
# Sampled norms
# ============================================================

class TestSampledNorm:
    """Spline-interpolated norms on the N = 3 product grid."""

    def test_reproduces_nodes(self, ellipsoidal):
        """The interpolant matches the sampled values at the grid nodes."""
        sampled = SampledNorm.from_model(ellipsoidal, 16, 32)
        nodes = sphere_grid(3, 16, 32).nodes
        assert np.allclose(sampled.h(nodes), ellipsoidal.h(nodes), rtol=1e-6)

    def test_is_not_c2(self, euclidean):
        """Second derivatives are finite differences."""
        sampled = SampledNorm.from_model(euclidean, 16, 32)
        assert sampled.is_c2 is False
        assert sampled.family == NormFamily.SAMPLED

    def test_wrong_count(self):
        """The value count must match the grid."""
        with pytest.raises(InvalidArgumentError, match="expects"):
            SampledNorm(np.ones(10), 16, 32)

    def test_odd_azimuth(self):
        """The evenness check needs an even azimuthal order."""
        with pytest.raises(InvalidArgumentError, match="even azimuthal"):
            SampledNorm(np.ones(16 * 31), 16, 31)

    def test_not_even(self, rng):
        """Values that differ between antipodes are rejected."""
        with pytest.raises(ConstructionError, match="not even"):
            SampledNorm(rng.uniform(1.0, 2.0, size=16 * 32), 16, 32)

    def test_nonpositive_values(self):
        """Values must be strictly positive."""
        with pytest.raises(ConstructionError):
            SampledNorm(np.zeros(16 * 32), 16, 32)


# ============================================================
# Checked operations and bookkeeping
# ============================================================

class TestOperations:
    """Validation performed by finslercap.norms.operations."""

    def test_non_finite(self, euclidean):
        """NaN input raises InvalidArgumentError."""
        with pytest.raises(InvalidArgumentError, match="non-finite"):
            operations.eval_h(euclidean, [np.nan, 0.0, 1.0])

    def test_wrong_dimension(self, euclidean):
        """The trailing axis must match the norm dimension."""
        with pytest.raises(InvalidArgumentError, match="trailing dimension"):
            operations.eval_h(euclidean, [1.0, 2.0])

    @pytest.mark.parametrize("fn", [operations.grad_h, operations.hess_h, operations.hess_v, operations.grad_dual])
    def test_derivative_at_origin(self, euclidean, fn):
        """Derivatives at the origin raise NormDomainError."""
        with pytest.raises(NormDomainError):
            fn(euclidean, [0.0, 0.0, 0.0])

    def test_value_at_origin(self, pnorm4):
        """H(0) = 0 is allowed."""
        assert operations.eval_h(pnorm4, [0.0, 0.0, 0.0]) == 0.0

    @pytest.mark.parametrize("name", sorted(MODELS))
    def test_grad_v_at_origin(self, name):
        """grad V(0) = 0 for every family, also inside a batch."""
        model = MODELS[name]
        assert np.array_equal(operations.grad_v(model, [0.0, 0.0, 0.0]), np.zeros(3))
        batch = operations.grad_v(model, [[0.0, 0.0, 0.0], [1.0, -2.0, 0.5]])
        assert np.all(np.isfinite(batch))
        assert np.array_equal(batch[0], np.zeros(3))
        assert np.allclose(batch[1], model.h([1.0, -2.0, 0.5]) * model.grad_h([1.0, -2.0, 0.5]))

    def test_equivalence_constants(self, ellipsoidal):
        """sigma and gamma are the square roots of the extreme eigenvalues."""
        sigma, gamma = operations.equivalence_constants(ellipsoidal)
        assert sigma == pytest.approx(1.0, rel=1e-6)
        assert gamma == pytest.approx(np.sqrt(3.0), rel=1e-6)

    def test_key_ignores_label(self):
        """Cache keys depend on parameters only."""
        assert EuclideanNorm(3, label="a").key() == EuclideanNorm(3, label="b").key()
        assert EuclideanNorm(3).key() != EuclideanNorm(4).key()

    def test_pde_admissibility(self, pnorm4, regularized_p4):
        """Raw p-norms with p != 2 are not uniformly convex."""
        assert is_pde_admissible(pnorm4) is False
        assert is_pde_admissible(regularized_p4) is True
        assert is_pde_admissible(PNorm(2.0, [1.0, 2.0, 3.0])) is True
