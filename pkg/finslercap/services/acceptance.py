"""Acceptance suite: closed-form and property checks with fixed thresholds.

Each criterion builds its own fixed bodies and norms, so the suite does
not depend on a scenario file. Criteria that share an exterior run (1, 2,
3 and 11) go through the solve cache and solve once.
"""

from __future__ import annotations

import hashlib
import json
import time
from typing import Callable, Iterable

import numpy as np

from finslercap.core.cache import solve_cache
from finslercap.core.config import settings
from finslercap.core.logging_config import get_logger
from finslercap.geometry.bodies import (
    ConvexBody,
    ellipsoid,
    euclidean_ball,
    minkowski_formula_residual,
    minkowski_inequality_check,
    minkowski_sum,
    mixed_volume_vbbk,
    mixed_volume_vbkk,
    wulff_ball,
)
from finslercap.geometry.sphere import sphere_grid
from finslercap.norms.duality import check_duality_identities
from finslercap.norms.models import EllipsoidalNorm, EuclideanNorm, NormModel, PNorm, RegularizedNorm
from finslercap.oracles import mixed_volumes_by_fit
from finslercap.pde.solvers import SolverOptions, solve_annulus
from finslercap.schemas import CriterionResult, Thresholds, Verdict
from finslercap.services.capacity import CapacityRun, run_capacity
from finslercap.services.torsion import run_torsion
from finslercap.symfun import newton_sweep

logger = get_logger(__name__)

# Fixed thresholds
SUP_ERROR_MAX = 0.03
FLUX_BAND = (0.95, 1.05)
FLUX_CV_MAX = 0.02
IDENTITY_RESIDUAL_MAX = 0.05
C_FORMULA_TOL = 1e-6
ANNULUS_SUP_MAX = 0.02
ANNULUS_RATIO_MIN = 1.7
ANNULUS_RADII = (1.0, 2.0)
NEWTON_TRIALS = 10_000
NEWTON_DIMS = (2, 3, 4, 5, 6)
ISOTROPY_MAX = 1e-12
MINKOWSKI_VALIDITY = 1e-8
MIXED_VOLUME_REL = 0.01
MIXED_VOLUME_EXACT = 1e-6
DUALITY_MAX = 1e-6
DUALITY_SAMPLES = 1000
DUALITY_SECONDS = 1.0
TORSION_SUP_MAX = 0.03
TORSION_VOLUME_MAX = 0.05
MINKOWSKI_FORMULA_MAX = 0.02
DECAY_RATIO_MAX = 3.0


def _norms() -> dict[str, NormModel]:
    return {
        "euclidean": EuclideanNorm(3, label="euclidean"),
        "ellipsoidal": EllipsoidalNorm(np.diag([1.0, 2.0, 3.0]), label="ellipsoidal-diag(1,2,3)"),
        "p4": RegularizedNorm(PNorm(4.0, [1.0, 1.0, 1.0], label="p4"), 0.05, label="p4-regularized"),
    }


class AcceptanceSuite:
    """The twelve acceptance criteria at one grid resolution."""

    def __init__(
        self,
        grid: int | None = None,
        r_out: list[float] | None = None,
        seed: int = 0,
        opts: SolverOptions | None = None,
        deterministic: bool = False,
        thresholds: Thresholds | None = None,
    ):
        self.grid = grid or settings.DEFAULT_GRID
        self.r_out = r_out
        self.seed = seed
        self.opts = opts or SolverOptions()
        self.deterministic = deterministic
        self.thresholds = thresholds or Thresholds()
        self.norms = _norms()
        self.sphere = sphere_grid(3)

    # -- shared runs ----------------------------------------------------

    def _wulff_run(self, key: str) -> CapacityRun:
        model = self.norms[key]
        return run_capacity(
            wulff_ball(model, 1.0, label=f"wulff({key})"),
            model,
            r_out=self.r_out,
            grid=self.grid,
            opts=self.opts,
            thresholds=self.thresholds,
            refine=False,
            sphere=self.sphere,
        )

    def _timed(self, details: dict, seconds: float) -> dict:
        if not self.deterministic:
            details["seconds"] = round(seconds, 3)
        return details

    # -- criteria -------------------------------------------------------

    def radial_exact_solution(self) -> CriterionResult:
        details = {}
        passed = True
        for key in ("euclidean", "ellipsoidal"):
            report = self._wulff_run(key).report
            ok = report.sup_error is not None and report.sup_error <= SUP_ERROR_MAX
            details[key] = {"sup_error": report.sup_error, "passed": ok}
            passed &= ok
        return CriterionResult(id=1, name="radial_exact_solution", passed=passed, details=details)

    def boundary_flux_constancy(self) -> CriterionResult:
        details = {}
        passed = True
        for key in ("euclidean", "ellipsoidal"):
            report = self._wulff_run(key).report
            expected = 1.0  # (N - 2) / r with N = 3, r = 1
            ratio = report.flux.mean / expected
            ok = FLUX_BAND[0] <= ratio <= FLUX_BAND[1] and report.flux.cv <= FLUX_CV_MAX
            details[key] = {"flux_mean": report.flux.mean, "ratio": ratio, "cv": report.flux.cv, "passed": ok}
            passed &= ok
        return CriterionResult(id=2, name="boundary_flux_constancy", passed=passed, details=details)

    def constant_c(self) -> CriterionResult:
        details = {}
        passed = True
        for key in ("euclidean", "ellipsoidal"):
            report = self._wulff_run(key).report
            ok = report.residuals.r1 <= IDENTITY_RESIDUAL_MAX and report.residuals.r2 <= IDENTITY_RESIDUAL_MAX
            details[key] = {"r1": report.residuals.r1, "r2": report.residuals.r2, "passed": ok}
            passed &= ok
        c_formula = self._wulff_run("euclidean").report.C_formula
        ok = abs(c_formula - 1.0) <= C_FORMULA_TOL
        details["C_formula_unit_ball"] = {"value": c_formula, "passed": ok}
        passed &= ok
        return CriterionResult(id=3, name="constant_c", passed=passed, details=details)

    def annulus_closed_form(self) -> CriterionResult:
        model = self.norms["euclidean"]
        r1, r2 = ANNULUS_RADII
        fine = solve_annulus(model, r1, r2, self.grid, self.opts).metadata["sup_error"]
        coarse = solve_annulus(model, r1, r2, self.grid // 2, self.opts).metadata["sup_error"]
        ratio = coarse / fine if fine > 0.0 else float("inf")
        passed = fine <= ANNULUS_SUP_MAX and ratio >= ANNULUS_RATIO_MIN
        return CriterionResult(
            id=4,
            name="annulus_closed_form",
            passed=passed,
            details={"grid": self.grid, "sup_error": fine, "sup_error_coarse": coarse, "ratio": ratio},
        )

    def newton_inequality(self) -> CriterionResult:
        sweep = newton_sweep(NEWTON_TRIALS, NEWTON_DIMS, seed=self.seed)
        equality_ok = all(
            case["equality"] and case["isotropy_residual"] is not None and case["isotropy_residual"] <= ISOTROPY_MAX
            for dim in sweep["dimensions"]
            for case in dim["equality_cases"]
        )
        passed = sweep["total_violations"] == 0 and equality_ok
        return CriterionResult(
            id=5,
            name="newton_inequality",
            passed=passed,
            details={
                "total_violations": sweep["total_violations"],
                "equality_cases_ok": equality_ok,
                "min_relative_slack": min(d["min_relative_slack"] for d in sweep["dimensions"]),
            },
        )

    def minkowski_suite(self) -> list[tuple[str, ConvexBody, NormModel, bool]]:
        """Twenty (body, norm) pairs with the expected equality flag."""
        e, a, p = self.norms["euclidean"], self.norms["ellipsoidal"], self.norms["p4"]
        suite: list[tuple[str, ConvexBody, NormModel, bool]] = []
        for name, model in (("euclidean", e), ("ellipsoidal", a), ("p4", p)):
            for r in (0.5, 1.0, 2.0):
                suite.append((f"wulff({name}, r={r:g})", wulff_ball(model, r), model, True))
        suite.append(("wulff(p4, shifted)", wulff_ball(p, 1.0, center=[0.3, -0.2, 0.1]), p, True))
        for axes in ((1.0, 1.0, 2.0), (1.0, 2.0, 3.0), (2.0, 1.0, 1.5), (0.5, 1.0, 1.0)):
            suite.append((f"ellipsoid{axes}", ellipsoid(axes), e, False))
        suite.append(("ellipsoid(1,1,2) under p4", ellipsoid((1.0, 1.0, 2.0)), p, False))
        suite.append(("wulff(ellipsoidal) under euclidean", wulff_ball(a, 1.0), e, False))
        suite.append(("wulff(p4) under ellipsoidal", wulff_ball(p, 1.0), a, False))
        suite.append((
            "ellipsoid(1,1,2) + wulff(p4)",
            minkowski_sum([ellipsoid((1.0, 1.0, 2.0)), wulff_ball(p, 1.0)]),
            p,
            False,
        ))
        suite.append((
            "ball + ellipsoid(1,2,3)",
            minkowski_sum([euclidean_ball(1.0), ellipsoid((1.0, 2.0, 3.0))]),
            e,
            False,
        ))
        suite.append((
            "wulff(ellipsoidal) + 2 wulff(ellipsoidal)",
            minkowski_sum([wulff_ball(a, 1.0), wulff_ball(a, 1.0)], [1.0, 2.0]),
            a,
            True,
        ))
        return suite

    def minkowski_inequality(self) -> CriterionResult:
        rows = []
        passed = True
        for label, body, model, expected in self.minkowski_suite():
            report = minkowski_inequality_check(body, model, self.sphere)
            ok = report.slack >= -MINKOWSKI_VALIDITY * report.lhs and report.equality == expected
            rows.append({
                "body": label,
                "relative_slack": report.relative_slack,
                "equality": report.equality,
                "expected_equality": expected,
                "passed": ok,
            })
            passed &= ok
        return CriterionResult(id=6, name="minkowski_inequality", passed=passed, details={"bodies": rows})

    def mixed_volume_oracle(self) -> CriterionResult:
        e, a, p = self.norms["euclidean"], self.norms["ellipsoidal"], self.norms["p4"]
        pairs = [
            ("ball(2) / euclidean", euclidean_ball(2.0), e),
            ("ellipsoid(1,1,2) / euclidean", ellipsoid((1.0, 1.0, 2.0)), e),
            ("ellipsoid(1,2,3) / euclidean", ellipsoid((1.0, 2.0, 3.0)), e),
            ("ellipsoid(1,1,2) / p4", ellipsoid((1.0, 1.0, 2.0)), p),
            ("ellipsoid(1,1,2) / ellipsoidal", ellipsoid((1.0, 1.0, 2.0)), a),
            ("ball(1) / p4", euclidean_ball(1.0), p),
            ("ball(1) / ellipsoidal", euclidean_ball(1.0), a),
            ("wulff(p4, 1.5) / euclidean", wulff_ball(p, 1.5), e),
            ("wulff(ellipsoidal) / p4", wulff_ball(a, 1.0), p),
            ("ball + ellipsoid / ellipsoidal", minkowski_sum([euclidean_ball(1.0), ellipsoid((1.0, 2.0, 3.0))]), a),
        ]
        rows = []
        passed = True
        for label, body, model in pairs:
            fit = mixed_volumes_by_fit(body, wulff_ball(model, 1.0))
            vbkk = mixed_volume_vbkk(body, model, self.sphere)
            vbbk = mixed_volume_vbbk(body, model, self.sphere)
            err = max(abs(fit.v_lkk - vbkk) / vbkk, abs(fit.v_llk - vbbk) / vbbk)
            ok = err <= MIXED_VOLUME_REL
            rows.append({"pair": label, "V_BKK": vbkk, "V_BBK": vbbk, "relative_error": err, "passed": ok})
            passed &= ok

        unit = euclidean_ball(1.0)
        fit = mixed_volumes_by_fit(unit, unit)
        exact = 4.0 * np.pi / 3.0
        exact_err = max(abs(v - exact) / exact for v in (fit.v_lkk, fit.v_llk, fit.volume_k, fit.volume_l))
        exact_ok = exact_err <= MIXED_VOLUME_EXACT
        passed &= exact_ok
        return CriterionResult(
            id=7,
            name="mixed_volume_oracle",
            passed=passed,
            details={"pairs": rows, "unit_ball_error": exact_err, "unit_ball_passed": exact_ok},
        )

    def duality_identities(self) -> CriterionResult:
        families = {
            "euclidean": self.norms["euclidean"],
            "ellipsoidal": self.norms["ellipsoidal"],
            "pnorm": PNorm(4.0, [1.0, 2.0, 0.5], label="p4-weighted"),
        }
        details = {}
        passed = True
        for key, model in families.items():
            start = time.perf_counter()
            report = check_duality_identities(model, DUALITY_SAMPLES, seed=self.seed)
            elapsed = time.perf_counter() - start
            ok = report.max_residual() <= DUALITY_MAX and elapsed <= DUALITY_SECONDS
            details[key] = self._timed({"max_residual": report.max_residual(), "passed": ok}, elapsed)
            passed &= ok
        return CriterionResult(id=8, name="duality_identities", passed=passed, details=details)

    def torsion_pipeline(self) -> CriterionResult:
        details = {}
        passed = True
        for key in ("euclidean", "ellipsoidal"):
            model = self.norms[key]
            report = run_torsion(wulff_ball(model, 1.0, label=f"wulff({key})"), model, self.grid, self.opts, self.sphere)
            ok = (
                report.relative_sup_error is not None
                and report.relative_sup_error <= TORSION_SUP_MAX
                and report.volume_relative_error <= TORSION_VOLUME_MAX
            )
            details[key] = {
                "relative_sup_error": report.relative_sup_error,
                "volume_relative_error": report.volume_relative_error,
                "passed": ok,
            }
            passed &= ok
        formula = []
        for label, body, model in (
            ("ellipsoid(1,1,2) / euclidean", ellipsoid((1.0, 1.0, 2.0)), self.norms["euclidean"]),
            ("ellipsoid(1,2,3) / p4", ellipsoid((1.0, 2.0, 3.0)), self.norms["p4"]),
            ("wulff(p4) / ellipsoidal", wulff_ball(self.norms["p4"], 1.0), self.norms["ellipsoidal"]),
        ):
            residual = minkowski_formula_residual(body, model, self.sphere)["relative_residual"]
            ok = residual <= MINKOWSKI_FORMULA_MAX
            formula.append({"body": label, "relative_residual": residual, "passed": ok})
            passed &= ok
        details["minkowski_formula"] = formula
        return CriterionResult(id=9, name="torsion_pipeline", passed=passed, details=details)

    def symmetry_verdicts(self) -> CriterionResult:
        e, a = self.norms["euclidean"], self.norms["ellipsoidal"]
        cases = [
            ("wulff(ellipsoidal)", wulff_ball(a, 1.0, label="wulff(ellipsoidal)"), a, Verdict.WULFF_CONSISTENT),
            ("ball under ellipsoidal", euclidean_ball(1.0, label="ball"), a, Verdict.NOT_WULFF),
            ("ellipsoid(1,1,2) under euclidean", ellipsoid((1.0, 1.0, 2.0), label="ellipsoid(1,1,2)"), e,
             Verdict.NOT_WULFF),
        ]
        rows = []
        passed = True
        for label, body, model, expected in cases:
            report = run_capacity(
                body, model, r_out=self.r_out, grid=self.grid, opts=self.opts,
                thresholds=self.thresholds, sphere=self.sphere,
            ).report
            ok = report.verdict == expected
            rows.append({
                "case": label,
                "verdict": report.verdict.value,
                "expected": expected.value,
                "flux_cv": report.flux.cv,
                "passed": ok,
            })
            passed &= ok
        return CriterionResult(id=10, name="symmetry_verdicts", passed=passed, details={"cases": rows})

    def decay_estimates(self) -> CriterionResult:
        details = {}
        passed = True
        for key in ("euclidean", "ellipsoidal"):
            brackets = self._wulff_run(key).report.decay_brackets
            ok = (
                brackets is not None
                and brackets["ratio_A"] <= DECAY_RATIO_MAX
                and brackets["ratio_B"] <= DECAY_RATIO_MAX
            )
            details[key] = {"brackets": brackets, "passed": ok}
            passed &= ok
        return CriterionResult(id=11, name="decay_estimates", passed=passed, details=details)

    def determinism(self) -> CriterionResult:
        """Repeat the seeded criteria and a smoke-grid solve with a cold cache; digests must agree."""

        def digest() -> str:
            smoke = AcceptanceSuite(
                grid=min(self.grid, settings.SMOKE_GRID), r_out=self.r_out, seed=self.seed,
                opts=self.opts, deterministic=True, thresholds=self.thresholds,
            )
            solve_cache.clear()
            parts = [
                smoke.newton_inequality(),
                smoke.minkowski_inequality(),
                smoke.mixed_volume_oracle(),
                smoke._wulff_run("euclidean").report,
            ]
            text = json.dumps([p.model_dump(mode="json") for p in parts], sort_keys=True)
            return hashlib.sha256(text.encode("utf-8")).hexdigest()

        first, second = digest(), digest()
        return CriterionResult(
            id=12,
            name="determinism",
            passed=first == second,
            details={"digest": first, "repeat_digest": second},
        )

    # -- driver ---------------------------------------------------------

    def criteria(self) -> dict[int, Callable[[], CriterionResult]]:
        return {
            1: self.radial_exact_solution,
            2: self.boundary_flux_constancy,
            3: self.constant_c,
            4: self.annulus_closed_form,
            5: self.newton_inequality,
            6: self.minkowski_inequality,
            7: self.mixed_volume_oracle,
            8: self.duality_identities,
            9: self.torsion_pipeline,
            10: self.symmetry_verdicts,
            11: self.decay_estimates,
            12: self.determinism,
        }

    def run(self, only: Iterable[int] | None = None) -> list[CriterionResult]:
        table = self.criteria()
        ids = sorted(set(only)) if only is not None else sorted(table)
        results = []
        for cid in ids:
            start = time.perf_counter()
            try:
                result = table[cid]()
            except Exception as exc:
                logger.error(
                    "acceptance_criterion_error",
                    criterion=cid,
                    error=str(exc),
                    error_type=type(exc).__name__,
                    message="Acceptance criterion raised instead of reporting",
                    exc_info=True,
                )
                result = CriterionResult(
                    id=cid,
                    name=table[cid].__name__,
                    passed=False,
                    details={"error": str(exc), "error_type": type(exc).__name__},
                )
            logger.info(
                "acceptance_criterion_finished",
                criterion=cid,
                name=result.name,
                passed=result.passed,
                seconds=None if self.deterministic else round(time.perf_counter() - start, 3),
                message=f"Criterion {cid} {'passed' if result.passed else 'FAILED'}",
            )
            results.append(result)
        return results


def failed_criteria(results: Iterable[CriterionResult]) -> list[int]:
    return [r.id for r in results if not r.passed]
