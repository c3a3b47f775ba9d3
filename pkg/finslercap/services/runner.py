"""Multi-target runs: one failing body does not abort the batch."""

from __future__ import annotations

from typing import Any, Callable, Iterable

from pydantic import BaseModel

from finslercap.config.scenario import ScenarioRegistry
from finslercap.core.errors import ConfigError, ConvergenceFailure, FinslerCapError, SolverInconsistencyError
from finslercap.core.logging_config import get_logger
from finslercap.geometry.sphere import SphereGrid
from finslercap.pde.solvers import SolverOptions
from finslercap.schemas import TargetResult, Thresholds
from finslercap.services.capacity import run_capacity

logger = get_logger(__name__)


def _as_dict(value: Any) -> dict[str, Any]:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, dict):
        return value
    return {"value": value}


def run_target(name: str, fn: Callable[[str], Any]) -> TargetResult:
    """Run `fn(name)` and record either its result or the failure."""
    try:
        return TargetResult(target=name, ok=True, result=_as_dict(fn(name)))

    except ConfigError as exc:
        logger.error(
            "target_invalid_config",
            target=name,
            error=str(exc),
            error_type=type(exc).__name__,
            message="Target could not be built from the scenario",
        )
        return TargetResult(target=name, ok=False, error=str(exc), error_type=type(exc).__name__)

    except (ConvergenceFailure, SolverInconsistencyError) as exc:
        logger.warning(
            "target_solve_failed",
            target=name,
            error=str(exc),
            error_type=type(exc).__name__,
            message="Solver did not produce a trustworthy solution for this target",
        )
        return TargetResult(target=name, ok=False, error=str(exc), error_type=type(exc).__name__)

    except FinslerCapError as exc:
        logger.warning(
            "target_failed",
            target=name,
            error=str(exc),
            error_type=type(exc).__name__,
            message="Target rejected",
        )
        return TargetResult(target=name, ok=False, error=str(exc), error_type=type(exc).__name__)

    except Exception as exc:
        logger.error(
            "target_unexpected_error",
            target=name,
            error=str(exc),
            error_type=type(exc).__name__,
            message="Unexpected error while running target",
            exc_info=True,
        )
        return TargetResult(target=name, ok=False, error=str(exc), error_type=type(exc).__name__)


def run_targets(names: Iterable[str], fn: Callable[[str], Any]) -> list[TargetResult]:
    results = [run_target(name, fn) for name in names]
    failed = [r.target for r in results if not r.ok]
    logger.info(
        "targets_finished",
        total=len(results),
        failed=len(failed),
        failed_targets=failed,
        message=f"{len(results) - len(failed)}/{len(results)} targets succeeded",
    )
    return results


def overdet_check(
    registry: ScenarioRegistry,
    grid: int | None = None,
    r_out: list[float] | None = None,
    opts: SolverOptions | None = None,
    thresholds: Thresholds | None = None,
    sphere: SphereGrid | None = None,
    names: Iterable[str] | None = None,
) -> list[TargetResult]:
    """Symmetry verdict for every body of the scenario under its model norm."""

    def verdict(name: str) -> dict[str, Any]:
        run = run_capacity(
            registry.body(name),
            registry.model_for(name),
            r_out=r_out,
            grid=grid,
            opts=opts,
            thresholds=thresholds,
            sphere=sphere,
        )
        report = run.report
        return {
            "verdict": report.verdict.value,
            "flux_cv": report.flux.cv,
            "cv_history": report.cv_history,
            "minkowski_slack": report.minkowski_slack,
            "residuals": report.residuals.model_dump(),
            "cap_extrapolated": report.cap_extrapolated,
        }

    return run_targets(names if names is not None else registry.body_names(), verdict)
