"""Torsion pipeline: solve Delta_H psi = 1 in the body and check its boundary identities."""

from __future__ import annotations

from finslercap.core.logging_config import get_logger
from finslercap.geometry.bodies import ConvexBody
from finslercap.geometry.sphere import SphereGrid
from finslercap.norms.models import NormModel
from finslercap.pde.analysis import torsion_identities
from finslercap.pde.solvers import SolverOptions, solve_torsion
from finslercap.schemas import Convergence, TorsionReport

logger = get_logger(__name__)


def run_torsion(
    body: ConvexBody,
    model: NormModel,
    grid: int | None = None,
    opts: SolverOptions | None = None,
    sphere: SphereGrid | None = None,
) -> TorsionReport:
    solved = solve_torsion(body, model, grid, opts)
    checks = torsion_identities(solved, model, body, sphere)
    meta = solved.metadata
    report = TorsionReport(
        norm=model.label or model.family.value,
        body=body.label,
        grid=int(solved.domain.shape[0]),
        energy=float(meta["energy"]),
        volume=checks["volume"],
        flux_integral=checks["flux_integral"],
        volume_relative_error=checks["volume_relative_error"],
        minkowski_formula=checks["minkowski_formula"],
        sup_error=meta.get("sup_error"),
        relative_sup_error=meta.get("relative_sup_error"),
        w_trace_mean=checks["w_trace_mean"],
        w_isotropy_mean=checks["w_isotropy_mean"],
        convergence=Convergence(iters=int(meta["iterations"]), final_grad=float(meta["final_grad"])),
    )
    logger.info(
        "torsion_report_ready",
        body=body.label,
        norm=report.norm,
        volume_relative_error=report.volume_relative_error,
        message="Torsion pipeline finished",
    )
    return report
