"""Command-line entry point.

    python main.py <subcommand> [--config scenario.toml] [flags]

Every subcommand writes one JSON envelope to stdout (or `--out`) and exits
with 0 on success, 1 for configuration or validation errors, 2 when a solver
fails to converge or contradicts itself, and 3 when acceptance criteria fail.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from pydantic import ValidationError

from finslercap.config.scenario import ScenarioConfig, ScenarioRegistry, load_scenario
from finslercap.core.cache import solve_cache
from finslercap.core.config import settings
from finslercap.core.errors import (
    AcceptanceFailure,
    ConfigError,
    ConstructionError,
    ConvergenceFailure,
    CurvatureSingularityError,
    FinslerCapError,
    InvalidArgumentError,
    NormDomainError,
    SolverInconsistencyError,
    UnsupportedDimensionError,
)
from finslercap.core.logging_config import get_logger, setup_logging
from finslercap.core.metrics import metrics_collector
from finslercap.cli.emit import FLUX_COLUMNS, PROFILE_COLUMNS, envelope, write_csv, write_report
from finslercap.geometry.bodies import body_report, mixed_volume_vbbk, mixed_volume_vbkk, volume, wulff_ball
from finslercap.geometry.sphere import SphereGrid, sphere_grid
from finslercap.norms.duality import check_duality_identities, equivalence_constants
from finslercap.norms.models import is_pde_admissible
from finslercap.oracles import (
    dual_norm_levels,
    mesh_surface_integrals,
    mesh_volume,
    mixed_volumes_by_fit,
    montecarlo_volume,
)
from finslercap.pde.io import write_field
from finslercap.pde.solvers import SolverOptions
from finslercap.schemas import TargetResult, Thresholds
from finslercap.services.acceptance import AcceptanceSuite, failed_criteria
from finslercap.services.capacity import boundary_flux_ratio, flux_table, run_capacity
from finslercap.services.runner import overdet_check, run_targets
from finslercap.services.torsion import run_torsion
from finslercap.symfun import newton_sweep

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CONVERGENCE = 2
EXIT_ACCEPTANCE = 3

_EXIT_CODES: dict[type[BaseException], int] = {
    ConfigError: EXIT_CONFIG,
    InvalidArgumentError: EXIT_CONFIG,
    ConstructionError: EXIT_CONFIG,
    UnsupportedDimensionError: EXIT_CONFIG,
    NormDomainError: EXIT_CONFIG,
    CurvatureSingularityError: EXIT_CONFIG,
    ValidationError: EXIT_CONFIG,
    ConvergenceFailure: EXIT_CONVERGENCE,
    SolverInconsistencyError: EXIT_CONVERGENCE,
    AcceptanceFailure: EXIT_ACCEPTANCE,
}


def exit_code_for(exc: BaseException) -> int:
    """Map an exception onto the documented exit codes."""
    for cls in type(exc).__mro__:
        if cls in _EXIT_CODES:
            return _EXIT_CODES[cls]
    return EXIT_CONFIG


def _exit_code_for_results(results: Sequence[TargetResult]) -> int:
    by_name = {cls.__name__: code for cls, code in _EXIT_CODES.items()}
    codes = [by_name.get(r.error_type or "", EXIT_CONFIG) for r in results if not r.ok]
    return max(codes, default=EXIT_OK)


# =============================================================================
# Context shared by the subcommands
# =============================================================================


class RunContext:
    """Parsed flags plus the scenario they refer to."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.scenario: ScenarioConfig | None = load_scenario(args.config) if args.config else None
        self.registry = ScenarioRegistry(self.scenario) if self.scenario else None

    def require_registry(self) -> ScenarioRegistry:
        if self.registry is None:
            raise ConfigError(f"'{self.args.command}' needs --config")
        return self.registry

    @property
    def grid(self) -> int:
        if self.args.grid:
            return self.args.grid
        if self.scenario and self.scenario.solver.grid:
            return self.scenario.solver.grid
        return settings.DEFAULT_GRID

    @property
    def seed(self) -> int:
        if self.args.seed is not None:
            return self.args.seed
        return self.scenario.solver.seed if self.scenario else 0

    @property
    def r_out(self) -> list[float] | None:
        if self.args.r_out:
            return self.args.r_out
        return list(self.scenario.solver.r_out) if self.scenario else None

    @property
    def options(self) -> SolverOptions:
        return self.scenario.solver.options() if self.scenario else SolverOptions()

    @property
    def thresholds(self) -> Thresholds:
        return self.scenario.thresholds if self.scenario else Thresholds()

    def sphere(self, dimension: int) -> SphereGrid:
        if dimension == 3 and self.scenario and self.scenario.solver.n_pol:
            return sphere_grid(3, self.scenario.solver.n_pol, self.scenario.solver.n_az)
        return sphere_grid(dimension)

    def body_names(self) -> list[str]:
        registry = self.require_registry()
        return self.args.body or registry.body_names()

    def norm_names(self) -> list[str]:
        registry = self.require_registry()
        return self.args.norm or registry.norm_names()

    def csv_path(self, target: str, table: str) -> Path | None:
        if not self.args.csv:
            return None
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in target)
        return Path(self.args.csv) / f"{self.args.command}.{safe}.{table}.csv"


# =============================================================================
# Subcommands
# =============================================================================


def cmd_norm_check(ctx: RunContext) -> tuple[Any, int]:
    registry = ctx.require_registry()

    def check(name: str) -> dict:
        model = registry.norm(name)
        report = check_duality_identities(model, ctx.args.samples, seed=ctx.seed)
        sigma, gamma = equivalence_constants(model, seed=ctx.seed)
        return {
            "norm": name,
            "family": model.family.value,
            "dimension": model.dimension,
            "pde_admissible": is_pde_admissible(model),
            "equivalence_constants": {"sigma": sigma, "gamma": gamma},
            "max_residual": report.max_residual(),
            "identities": asdict(report),
        }

    results = run_targets(ctx.norm_names(), check)
    return results, _exit_code_for_results(results)


def cmd_body_report(ctx: RunContext) -> tuple[Any, int]:
    registry = ctx.require_registry()

    def report(name: str) -> dict:
        body = registry.body(name)
        return body_report(body, registry.model_for(name), ctx.sphere(body.dimension))

    results = run_targets(ctx.body_names(), report)
    return results, _exit_code_for_results(results)


def cmd_mixed_volumes(ctx: RunContext) -> tuple[Any, int]:
    registry = ctx.require_registry()

    def mixed(name: str) -> dict:
        body = registry.body(name)
        model = registry.model_for(name)
        sphere = ctx.sphere(body.dimension)
        primary = {
            "V_BKK": mixed_volume_vbkk(body, model, sphere),
            "V_BBK": mixed_volume_vbbk(body, model, sphere),
            "volume": volume(body, sphere),
        }
        result: dict[str, Any] = {"body": name, "norm": model.label, "primary": primary}
        if body.dimension == 3:
            fit = mixed_volumes_by_fit(body, wulff_ball(model, 1.0))
            result["oracle"] = fit.to_dict()
            result["relative_difference"] = {
                "V_BKK": abs(fit.v_lkk - primary["V_BKK"]) / primary["V_BKK"],
                "V_BBK": abs(fit.v_llk - primary["V_BBK"]) / primary["V_BBK"],
            }
        return result

    results = run_targets(ctx.body_names(), mixed)
    return results, _exit_code_for_results(results)


def cmd_newton_sweep(ctx: RunContext) -> tuple[Any, int]:
    dims = tuple(ctx.args.dims) if ctx.args.dims else (2, 3, 4, 5, 6)
    return newton_sweep(ctx.args.trials, dims, seed=ctx.seed), EXIT_OK


def cmd_solve_capacity(ctx: RunContext) -> tuple[Any, int]:
    registry = ctx.require_registry()

    def solve(name: str) -> dict:
        body = registry.body(name)
        model = registry.model_for(name)
        solver = ctx.scenario.solver
        run = run_capacity(
            body,
            model,
            r_out=ctx.r_out,
            grid=ctx.grid,
            opts=ctx.options,
            thresholds=ctx.thresholds,
            refine=solver.refine,
            diagnostics=solver.diagnostics or ctx.args.diagnostics,
            sphere=ctx.sphere(body.dimension),
        )
        out = run.report.model_dump(mode="json")
        ratio = boundary_flux_ratio(run)
        if ratio is not None:
            out["flux_ratio_closed_form"] = ratio
        flux_csv = ctx.csv_path(name, "flux_samples")
        if flux_csv is not None:
            write_csv(flux_table(run), FLUX_COLUMNS, flux_csv)
            write_csv(run.radial_profile(), PROFILE_COLUMNS, ctx.csv_path(name, "radial_profile"))
        if ctx.args.save_field:
            write_field(run.solution.field_extrapolated, Path(ctx.args.save_field) / f"{name}.fcap")
        return out

    results = run_targets(ctx.body_names(), solve)
    return results, _exit_code_for_results(results)


def cmd_solve_torsion(ctx: RunContext) -> tuple[Any, int]:
    registry = ctx.require_registry()

    def solve(name: str) -> Any:
        body = registry.body(name)
        return run_torsion(body, registry.model_for(name), ctx.grid, ctx.options, ctx.sphere(body.dimension))

    results = run_targets(ctx.body_names(), solve)
    return results, _exit_code_for_results(results)


def cmd_overdet_check(ctx: RunContext) -> tuple[Any, int]:
    registry = ctx.require_registry()
    results = overdet_check(
        registry,
        grid=ctx.grid,
        r_out=ctx.r_out,
        opts=ctx.options,
        thresholds=ctx.thresholds,
        names=ctx.body_names(),
    )
    return results, _exit_code_for_results(results)


def cmd_acceptance(ctx: RunContext) -> tuple[Any, int]:
    suite = AcceptanceSuite(
        grid=ctx.grid,
        r_out=ctx.r_out,
        seed=ctx.seed,
        opts=ctx.options,
        deterministic=ctx.args.deterministic,
        thresholds=ctx.thresholds,
    )
    results = suite.run(ctx.args.criteria)
    failed = failed_criteria(results)
    payload = {"criteria": results, "failed": failed, "passed": not failed}
    return payload, EXIT_ACCEPTANCE if failed else EXIT_OK


def cmd_oracle(ctx: RunContext) -> tuple[Any, int]:
    registry = ctx.require_registry()
    kind = ctx.args.kind

    if kind == "dual":
        def run(name: str) -> dict:
            model = registry.norm(name)
            x = np.asarray(ctx.args.x or [1.0] * model.dimension, dtype=float)
            levels = dual_norm_levels(model, x, ctx.args.refinements, seed=ctx.seed)
            primary = float(model.dual(x))
            return {
                "norm": name,
                "x": x.tolist(),
                "levels": levels,
                "oracle": levels[-1],
                "primary": primary,
                "relative_difference": abs(levels[-1] - primary) / primary,
            }

        names = ctx.norm_names()
    else:
        def run(name: str) -> dict:
            body = registry.body(name)
            model = registry.model_for(name)
            sphere = ctx.sphere(body.dimension)
            if kind == "montecarlo":
                estimate, stderr = montecarlo_volume(body, ctx.args.points, seed=ctx.seed)
                primary = volume(body, sphere)
                return {
                    "body": name,
                    "estimate": estimate,
                    "stderr": stderr,
                    "primary": primary,
                    "standard_errors": abs(estimate - primary) / stderr if stderr > 0.0 else None,
                }
            if kind == "mesh":
                mesh = {**mesh_surface_integrals(body, model), "volume_extrapolated": mesh_volume(body)}
                primary = body_report(body, model, sphere)
                return {
                    "body": name,
                    "mesh": mesh,
                    "primary": {"volume": primary["volume"], "perimeter": primary["perimeter"]},
                }
            fit = mixed_volumes_by_fit(body, wulff_ball(model, 1.0))
            return {"body": name, "fit": fit.to_dict()}

        names = ctx.body_names()

    results = run_targets(names, run)
    return results, _exit_code_for_results(results)


COMMANDS: dict[str, Callable[[RunContext], tuple[Any, int]]] = {
    "norm-check": cmd_norm_check,
    "body-report": cmd_body_report,
    "mixed-volumes": cmd_mixed_volumes,
    "newton-sweep": cmd_newton_sweep,
    "solve-capacity": cmd_solve_capacity,
    "solve-torsion": cmd_solve_torsion,
    "overdet-check": cmd_overdet_check,
    "acceptance": cmd_acceptance,
    "oracle": cmd_oracle,
}


# =============================================================================
# Parser
# =============================================================================


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _radii(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--r-out expects comma-separated numbers, got '{text}'") from exc
    if len(values) < 2:
        raise argparse.ArgumentTypeError("--r-out needs at least two radii")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="scenario TOML file")
    common.add_argument("--out", type=str, default=None, help="write the JSON report here instead of stdout")
    common.add_argument("--csv", type=str, default=None, help="directory for CSV plot tables")
    common.add_argument("--grid", type=int, default=None, help="voxel nodes per axis")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--deterministic", action="store_true", help="omit timestamps and timings")
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--r-out", dest="r_out", type=_radii, default=None, help="truncation radii, e.g. 4,8")
    common.add_argument("--body", action="append", default=None, help="restrict to this body (repeatable)")
    common.add_argument("--norm", action="append", default=None, help="restrict to this norm (repeatable)")
    common.add_argument("--log-level", type=str, default=None)
    common.add_argument("--log-json", action="store_true")

    parser = _Parser(prog=settings.APP_NAME, description="Finsler capacity toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("norm-check", parents=[common], help="duality identity report")
    p.add_argument("--samples", type=int, default=1000)
    sub.add_parser("body-report", parents=[common], help="volume, perimeter, curvature and Minkowski slack")
    sub.add_parser("mixed-volumes", parents=[common], help="mixed volumes, quadrature and polynomial fit")
    p = sub.add_parser("newton-sweep", parents=[common], help="randomized Newton-inequality sweep")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--dims", type=int, nargs="+", default=None)
    p = sub.add_parser("solve-capacity", parents=[common], help="exterior capacity report per body")
    p.add_argument("--diagnostics", action="store_true", help="add the auxiliary-function diagnostics")
    p.add_argument("--save-field", type=str, default=None, help="directory for binary field files")
    sub.add_parser("solve-torsion", parents=[common], help="torsion problem and boundary identities")
    sub.add_parser("overdet-check", parents=[common], help="symmetry verdict for every body")
    p = sub.add_parser("acceptance", parents=[common], help="run the acceptance suite")
    p.add_argument("--criteria", type=int, nargs="+", default=None, help="subset of criterion ids")
    p = sub.add_parser("oracle", parents=[common], help="brute-force cross-checks")
    p.add_argument("--kind", choices=("dual", "montecarlo", "mesh", "mixed"), default="dual")
    p.add_argument("--x", type=float, nargs="+", default=None, help="point for the dual-norm oracle")
    p.add_argument("--refinements", type=int, default=4)
    p.add_argument("--points", type=int, default=1_000_000)
    return parser


def _configure(args: argparse.Namespace) -> None:
    if args.threads is not None:
        settings.THREADS = max(1, args.threads)
    if args.deterministic:
        settings.DETERMINISTIC = True
    setup_logging(
        log_level=args.log_level or settings.LOG_LEVEL,
        use_json=args.log_json or settings.LOG_JSON,
        include_caller_info=settings.LOG_INCLUDE_CALLER,
        deterministic=settings.DETERMINISTIC,
    )


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _configure(args)
    except ValueError as exc:
        parser.error(str(exc))
    deterministic = settings.DETERMINISTIC

    logger.info("command_started", command=args.command, message=f"Running {args.command}")
    try:
        ctx = RunContext(args)
        results, code = COMMANDS[args.command](ctx)
    except (FinslerCapError, ValidationError) as exc:
        code = exit_code_for(exc)
        logger.error(
            "command_failed",
            command=args.command,
            error=str(exc),
            error_type=type(exc).__name__,
            exit_code=code,
            message="Command failed",
        )
        error = {"error": str(exc), "error_type": type(exc).__name__, "exit_code": code}
        write_report(envelope(args.command, error, deterministic), args.out)
        return code

    write_report(envelope(args.command, results, deterministic), args.out)
    logger.info(
        "command_finished",
        command=args.command,
        exit_code=code,
        cache=solve_cache.get_stats(),
        solver=metrics_collector.get_all_metrics() if not deterministic else None,
        message=f"{args.command} finished",
    )
    return code
