"""Unit tests for elementary symmetric functions and the Newton inequality."""

from math import comb

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from finslercap.core.errors import InvalidArgumentError
from finslercap.symfun import (
    det_directional,
    mixed_discriminant,
    newton_check,
    newton_sweep,
    s2_fast,
    s_k,
    s_k_cofactor,
)

sizes = st.integers(2, 6)
seeds = st.integers(0, 2 ** 31 - 1)


def _random(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=(n, n))


# ============================================================
# S_k
# ============================================================

class TestSk:
    """Sums of principal minors."""

    def test_diagonal(self):
        """S_k of a diagonal matrix is the elementary symmetric polynomial of its entries."""
        a = np.diag([1.0, 2.0, 3.0])
        assert s_k(a, 1) == pytest.approx(6.0)
        assert s_k(a, 2) == pytest.approx(11.0)
        assert s_k(a, 3) == pytest.approx(6.0)

    def test_identity(self):
        """S_k(I_n) = C(n, k)."""
        for n in range(2, 7):
            for k in range(1, n + 1):
                assert s_k(np.eye(n), k) == pytest.approx(comb(n, k))

    @hsettings(max_examples=40, deadline=None)
    @given(n=sizes, seed=seeds)
    def test_methods_agree(self, n, seed):
        """Principal minors and characteristic polynomial give the same S_k."""
        a = _random(n, seed)
        for k in range(1, n + 1):
            minors = s_k(a, k, method="minors")
            charpoly = s_k(a, k, method="charpoly")
            assert minors == pytest.approx(charpoly, rel=1e-8, abs=1e-8)

    @hsettings(max_examples=40, deadline=None)
    @given(n=sizes, seed=seeds, t=st.floats(-3.0, 3.0))
    def test_homogeneous(self, n, seed, t):
        """S_k(tA) = t^k S_k(A)."""
        a = _random(n, seed)
        k = 1 + seed % n
        assert s_k(t * a, k) == pytest.approx(t ** k * s_k(a, k), rel=1e-9, abs=1e-9)

    @hsettings(max_examples=40, deadline=None)
    @given(n=sizes, seed=seeds)
    def test_similarity_invariant(self, n, seed):
        """S_k(P A P^{-1}) = S_k(A)."""
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(n, n))
        p = rng.normal(size=(n, n)) + n * np.eye(n)
        b = p @ a @ np.linalg.inv(p)
        k = 1 + seed % n
        assert s_k(b, k) == pytest.approx(s_k(a, k), rel=1e-7, abs=1e-7)

    def test_s2_fast(self, rng):
        """The trace formula matches S_2 on a batch."""
        a = rng.normal(size=(5, 4, 4))
        fast = s2_fast(a)
        assert np.allclose(fast, [s_k(m, 2) for m in a])

    def test_extremes(self, rng):
        """S_1 is the trace and S_n the determinant."""
        a = rng.normal(size=(5, 5))
        assert s_k(a, 1) == pytest.approx(np.trace(a))
        assert s_k(a, 5) == pytest.approx(np.linalg.det(a))

    @pytest.mark.parametrize("k", [0, 4])
    def test_k_out_of_range(self, k):
        """k must satisfy 1 <= k <= n."""
        with pytest.raises(InvalidArgumentError, match="k must satisfy"):
            s_k(np.eye(3), k)

    def test_not_square(self):
        """Non-square input is rejected."""
        with pytest.raises(InvalidArgumentError, match="square"):
            s_k(np.ones((2, 3)), 1)

    def test_non_finite(self):
        """NaN entries are rejected."""
        with pytest.raises(InvalidArgumentError, match="non-finite"):
            s_k(np.array([[1.0, np.nan], [0.0, 1.0]]), 1)

    def test_unknown_method(self):
        """Only 'minors' and 'charpoly' are accepted."""
        with pytest.raises(InvalidArgumentError, match="unknown method"):
            s_k(np.eye(3), 1, method="magic")


# ============================================================
# Cofactors and directional derivatives
# ============================================================

class TestCofactor:
    """S^k_ij(A) = dS_k/da_ij."""

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_matches_differences(self, rng, k):
        """The cofactor matrix equals the finite-difference gradient of S_k."""
        a = rng.normal(size=(4, 4))
        step = 1e-6
        fd = np.zeros_like(a)
        for i in range(4):
            for j in range(4):
                e = np.zeros_like(a)
                e[i, j] = step
                fd[i, j] = (s_k(a + e, k) - s_k(a - e, k)) / (2 * step)
        assert np.allclose(s_k_cofactor(a, k), fd, atol=1e-6)

    def test_s1_cofactor_is_identity(self, rng):
        """dTr(A)/da_ij = delta_ij."""
        assert np.allclose(s_k_cofactor(rng.normal(size=(3, 3)), 1), np.eye(3))

    def test_euler_identity(self, rng):
        """sum_ij S^k_ij a_ij = k S_k."""
        a = rng.normal(size=(5, 5))
        for k in range(1, 6):
            assert np.sum(s_k_cofactor(a, k) * a) == pytest.approx(k * s_k(a, k), rel=1e-9, abs=1e-9)

    def test_det_directional(self, rng):
        """d/dt det(A + tB) at 0 = det(A) Tr(A^{-1} B)."""
        a = rng.normal(size=(4, 4)) + 4 * np.eye(4)
        b = rng.normal(size=(4, 4))
        expected = np.linalg.det(a) * np.trace(np.linalg.solve(a, b))
        assert det_directional(a, b) == pytest.approx(expected, rel=1e-9)

    def test_det_directional_shape_mismatch(self):
        """A and B must have the same shape."""
        with pytest.raises(InvalidArgumentError, match="shape mismatch"):
            det_directional(np.eye(3), np.eye(2))

    def test_mixed_discriminant(self, rng):
        """D(A, A, ..., A) = det(A)."""
        a = rng.normal(size=(3, 3)) + 3 * np.eye(3)
        assert mixed_discriminant(a, a) == pytest.approx(np.linalg.det(a))


# ============================================================
# Newton inequality
# ============================================================

class TestNewtonCheck:
    """S_2(BC) <= (n-1)/(2n) Tr(BC)^2 for B psd, C symmetric."""

    @hsettings(max_examples=60, deadline=None)
    @given(n=sizes, seed=seeds)
    def test_holds_on_random_pairs(self, n, seed):
        """No violation on random psd B and symmetric C."""
        rng = np.random.default_rng(seed)
        g = rng.normal(size=(n, n))
        m = rng.normal(size=(n, n))
        report = newton_check(g @ g.T, 0.5 * (m + m.T))
        assert report.violation is False
        assert report.slack >= -1e-10 * max(1.0, abs(report.bound))

    def test_equality_case_is_rigid(self):
        """B = I, C = lambda I attains equality and is isotropic."""
        report = newton_check(np.eye(4), 2.0 * np.eye(4))
        assert report.equality is True
        assert report.rigidity_holds is True
        assert report.isotropy_residual == pytest.approx(0.0, abs=1e-14)

    def test_strict_inequality(self):
        """A non-isotropic product has positive slack."""
        report = newton_check(np.eye(3), np.diag([1.0, 2.0, 3.0]))
        assert report.equality is False
        assert report.slack > 0.0
        assert report.rigidity_holds is None

    def test_singular_b(self):
        """A singular psd B is accepted and the inequality stays strict."""
        b = np.diag([1.0, 0.0])
        c = np.diag([1.0, -1.0])
        report = newton_check(b, c)
        # A = diag(1, 0): S_2 = 0, bound = Tr^2 / 4 > 0, so no equality here
        assert report.equality is False
        assert report.violation is False

    def test_rejects_non_psd(self):
        """B must be positive semidefinite."""
        with pytest.raises(InvalidArgumentError, match="positive semidefinite"):
            newton_check(np.diag([1.0, -1.0]), np.eye(2))

    def test_rejects_asymmetric_c(self):
        """C must be symmetric."""
        with pytest.raises(InvalidArgumentError, match="C must be symmetric"):
            newton_check(np.eye(2), np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_rejects_mismatched(self):
        """B and C must have the same shape."""
        with pytest.raises(InvalidArgumentError, match="same shape"):
            newton_check(np.eye(2), np.eye(3))


class TestNewtonSweep:
    """Seeded randomized sweep."""

    def test_no_violations(self):
        """The sweep finds no counterexample."""
        result = newton_sweep(trials=2000, dims=(2, 3, 4), seed=0)
        assert result["total_violations"] == 0
        assert [d["n"] for d in result["dimensions"]] == [2, 3, 4]
        assert result["combinations_checked"] == 1 + 3 + 6

    def test_equality_cases_reported(self):
        """Each dimension reports the B = I, C = lambda I cases as rigid equalities."""
        result = newton_sweep(trials=10, dims=(3,), seed=0)
        cases = result["dimensions"][0]["equality_cases"]
        assert len(cases) == 3
        assert all(c["equality"] and c["rigidity_holds"] for c in cases)

    def test_deterministic(self):
        """The same seed gives identical output."""
        assert newton_sweep(trials=200, dims=(2, 5), seed=4) == newton_sweep(trials=200, dims=(2, 5), seed=4)
