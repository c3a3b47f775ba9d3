"""Unit tests for the capacity pipeline, its identities and the symmetry verdict."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from finslercap.core.errors import ConvergenceFailure
from finslercap.geometry.bodies import euclidean_ball, wulff_ball
from finslercap.norms.models import EuclideanNorm
from finslercap.pde.solvers import SolverOptions
from finslercap.schemas import CapacityReport, Residuals, Thresholds, Verdict
from finslercap.services.capacity import (
    boundary_flux_ratio,
    capacity_scaling_check,
    closed_form_capacity,
    domain_monotonicity_check,
    flux_table,
    identity_residuals,
    is_matching_wulff_ball,
    report_identity_residuals,
    run_capacity,
    symmetry_verdict,
)

FAST = SolverOptions(grad_tol=1e-7, min_cells_across=0)


def make_report(**overrides) -> CapacityReport:
    data = {
        "norm": "euclidean",
        "body": "unit_ball",
        "grid": 96,
        "r_out": [4.0, 8.0],
        "cap_value": 13.0,
        "cap_extrapolated": 12.6,
        "flux": {"mean": 1.0, "cv": 0.01, "min": 0.98, "max": 1.02},
        "C_formula": 1.0,
        "residuals": {"r1": 0.01, "r2": 0.02},
        "verdict": "inconclusive",
        "convergence": {"iters": 120, "final_grad": 1e-10},
        "minkowski_slack": 0.0,
        "cells_across": 30.0,
    }
    data.update(overrides)
    return CapacityReport(**data)


# ============================================================
# Verdict
# ============================================================

class TestSymmetryVerdict:
    """wulff-consistent, not-wulff or inconclusive."""

    def test_tight_checks(self):
        """Small cv, slack and residuals give wulff-consistent."""
        assert symmetry_verdict(make_report()) == Verdict.WULFF_CONSISTENT

    def test_varying_flux_at_two_resolutions(self):
        """cv at least 2 tau_cv on the last two grids gives not-wulff."""
        report = make_report(flux={"mean": 1.0, "cv": 0.15, "min": 0.7, "max": 1.3}, cv_history=[0.2, 0.15])
        assert symmetry_verdict(report) == Verdict.NOT_WULFF

    def test_single_resolution_is_inconclusive(self):
        """One large cv is not enough evidence."""
        report = make_report(flux={"mean": 1.0, "cv": 0.15, "min": 0.7, "max": 1.3}, cv_history=[0.15])
        assert symmetry_verdict(report) == Verdict.INCONCLUSIVE

    def test_improving_flux_is_inconclusive(self):
        """A cv that drops below 2 tau_cv on the fine grid is inconclusive."""
        report = make_report(flux={"mean": 1.0, "cv": 0.08, "min": 0.9, "max": 1.1}, cv_history=[0.2, 0.08])
        assert symmetry_verdict(report) == Verdict.INCONCLUSIVE

    def test_slack_blocks_consistency(self):
        """A Minkowski slack above tau_eq rules out wulff-consistent."""
        assert symmetry_verdict(make_report(minkowski_slack=0.01)) == Verdict.INCONCLUSIVE

    def test_residuals_block_consistency(self):
        """Identity residuals above tau_id rule out wulff-consistent."""
        report = make_report(residuals={"r1": 0.2, "r2": 0.01})
        assert symmetry_verdict(report) == Verdict.INCONCLUSIVE

    def test_custom_thresholds(self):
        """Looser thresholds accept a rougher report."""
        report = make_report(flux={"mean": 1.0, "cv": 0.15, "min": 0.7, "max": 1.3})
        assert symmetry_verdict(report, Thresholds(tau_cv=0.2)) == Verdict.WULFF_CONSISTENT

    def test_threshold_validation(self):
        """Thresholds must be positive."""
        with pytest.raises(ValidationError):
            Thresholds(tau_cv=0.0)


class TestReportSchema:
    """CapacityReport field constraints."""

    @pytest.mark.parametrize("field,value", [("cap_value", 0.0), ("cap_extrapolated", -1.0), ("grid", 2)])
    def test_rejects_out_of_range(self, field, value):
        """Capacities are positive and grids have at least three nodes."""
        with pytest.raises(ValidationError):
            make_report(**{field: value})

    def test_negative_cv(self):
        """Flux cv is nonnegative."""
        with pytest.raises(ValidationError):
            make_report(flux={"mean": 1.0, "cv": -0.1, "min": 1.0, "max": 1.0})

    def test_serializes_verdict_value(self):
        """The verdict dumps as its string value."""
        assert make_report().model_dump(mode="json")["verdict"] == "inconclusive"


# ============================================================
# Identities and closed forms
# ============================================================

class TestIdentities:
    """Cap_H = C P_H and (N-2) Cap_H = C^2 N |Omega| on Wulff balls."""

    def test_unit_ball_residuals_vanish(self):
        """Exact unit-ball data gives zero residuals."""
        res = identity_residuals(4 * math.pi, 1.0, 4 * math.pi, 4 * math.pi / 3, 3)
        assert res.r1 == pytest.approx(0.0, abs=1e-14)
        assert res.r2 == pytest.approx(0.0, abs=1e-14)

    def test_ball_of_radius_two(self):
        """For B(2) in R^3: Cap = 8 pi, C = 1/2, P = 16 pi, |B| = 32 pi/3."""
        res = identity_residuals(8 * math.pi, 0.5, 16 * math.pi, 32 * math.pi / 3, 3)
        assert res.r1 == pytest.approx(0.0, abs=1e-14)
        assert res.r2 == pytest.approx(0.0, abs=1e-14)

    def test_wrong_flux(self):
        """A flux off by 10% shows in both residuals."""
        res = identity_residuals(4 * math.pi, 1.1, 4 * math.pi, 4 * math.pi / 3, 3)
        assert res.r1 == pytest.approx(0.1)
        assert res.r2 == pytest.approx(0.21)

    def test_report_identity_residuals(self):
        """The residual pair is read off the report."""
        report = make_report(residuals=Residuals(r1=0.03, r2=0.04))
        assert report_identity_residuals(report) == (0.03, 0.04)

    def test_closed_form_capacity(self, euclidean, ellipsoidal):
        """N (N-2) |B_{H_0}(1)| r^{N-2}."""
        assert closed_form_capacity(euclidean, 1.0) == pytest.approx(4 * math.pi, rel=1e-10)
        assert closed_form_capacity(euclidean, 2.0) == pytest.approx(8 * math.pi, rel=1e-10)
        assert closed_form_capacity(ellipsoidal, 1.0) == pytest.approx(4 * math.pi * math.sqrt(6.0), rel=1e-8)

    def test_matching_wulff_ball(self, euclidean, ellipsoidal, wulff_ellipsoidal, unit_ball):
        """Only Wulff balls of the same norm match."""
        assert is_matching_wulff_ball(wulff_ellipsoidal, ellipsoidal) is True
        assert is_matching_wulff_ball(wulff_ball(EuclideanNorm(3), 1.0), euclidean) is True
        assert is_matching_wulff_ball(wulff_ellipsoidal, euclidean) is False
        assert is_matching_wulff_ball(unit_ball, euclidean) is False


# ============================================================
# Pipeline
# ============================================================

@pytest.mark.slow
class TestRunCapacity:
    """Small end-to-end runs."""

    def test_unit_wulff_ball(self, euclidean):
        """The report carries closed forms, diagnostics and a verdict."""
        body = wulff_ball(euclidean, 1.0, label="unit_wulff")
        run = run_capacity(body, euclidean, r_out=[2.0, 3.0], grid=33, opts=FAST, refine=False, diagnostics=True)
        report = run.report
        assert report.cap_closed_form == pytest.approx(4 * math.pi, rel=1e-10)
        assert report.cap_extrapolated == pytest.approx(4 * math.pi, rel=0.15)
        assert report.cap_truncated[0] > report.cap_truncated[1]
        assert report.C_formula == pytest.approx(1.0, rel=1e-8)
        assert report.minkowski_slack == pytest.approx(0.0, abs=1e-8)
        assert report.cv_history == [report.flux.cv]
        assert report.verdict in tuple(Verdict)
        assert report.sup_error is not None
        assert report.gamma is not None
        assert boundary_flux_ratio(run) == pytest.approx(1.0, rel=0.2)
        assert len(flux_table(run)) == run.flux.values.shape[0]
        rows = run.radial_profile(count=8)
        assert rows and all(np.isfinite(r["u_closed_form"]) for r in rows)

    def test_non_wulff_body_has_no_closed_form(self, euclidean):
        """Bodies other than matching Wulff balls get no closed form or flux ratio."""
        run = run_capacity(euclidean_ball(1.0), euclidean, r_out=[2.0, 3.0], grid=25, opts=FAST, refine=False)
        assert run.report.cap_closed_form is None
        assert run.report.sup_error is None
        assert boundary_flux_ratio(run) is None

    def test_scaling(self, unit_ball, euclidean):
        """Cap_H(t Omega) = t^{N-2} Cap_H(Omega) holds for the scaled discrete problem."""
        result = capacity_scaling_check(unit_ball, euclidean, 2.0, r_out=[2.0, 3.0], grid=25, opts=FAST)
        assert result["expected"] == pytest.approx(2.0 * result["cap"])
        assert result["relative_error"] < 1e-4

    def test_monotone_in_domain(self, unit_ball, euclidean):
        """A larger body has a larger capacity."""
        result = domain_monotonicity_check(
            unit_ball, euclidean_ball(1.5), euclidean, r_out=[2.5, 3.5], grid=25, opts=FAST
        )
        assert result["monotone"] is True
        assert result["cap_inner"] < result["cap_outer"]

    def test_coarse_refinement_error_is_skipped(self, unit_ball, euclidean, monkeypatch):
        """A library error in the coarse pass leaves a one-entry cv history."""
        def fail(*args, **kwargs):
            raise ConvergenceFailure("coarse solve stalled", residual_history=[1.0])

        monkeypatch.setattr("finslercap.services.capacity._coarse_cv", fail)
        run = run_capacity(unit_ball, euclidean, r_out=[2.0, 3.0], grid=33, opts=FAST, refine=True)
        assert run.report.cv_history == [run.report.flux.cv]

    def test_coarse_refinement_bug_propagates(self, unit_ball, euclidean, monkeypatch):
        """Errors that are not library errors are not swallowed by the coarse pass."""
        def fail(*args, **kwargs):
            raise RuntimeError("unexpected")

        monkeypatch.setattr("finslercap.services.capacity._coarse_cv", fail)
        with pytest.raises(RuntimeError, match="unexpected"):
            run_capacity(unit_ball, euclidean, r_out=[2.0, 3.0], grid=33, opts=FAST, refine=True)
