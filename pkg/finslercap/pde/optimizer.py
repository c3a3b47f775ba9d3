"""Polak-Ribiere nonlinear conjugate gradient for the convex grid energies."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import line_search

from finslercap.core.errors import ConvergenceFailure
from finslercap.core.logging_config import get_logger
from finslercap.core.metrics import metrics_collector

logger = get_logger(__name__)

ARMIJO_HALVINGS = 40
STALL_TOLERANCE = 1e-8
PROGRESS_EVERY = 100


@dataclass(frozen=True)
class NCGOptions:
    max_iters: int = 5000
    grad_tol: float = 1e-9
    energy_tol: float = 1e-12
    window: int = 10
    c1: float = 1e-4
    c2: float = 0.1


@dataclass
class NCGResult:
    x: np.ndarray
    energy: float
    iterations: int
    final_grad: float
    converged: bool
    reason: str
    restarts: int = 0
    fallbacks: int = 0
    history: list[float] = field(default_factory=list)


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b))


def _armijo(fun: Callable[[np.ndarray], float], x, f0, g0, d, alpha0, c1):
    slope = _dot(g0, d)
    alpha = alpha0
    for _ in range(ARMIJO_HALVINGS):
        f_new = fun(x + alpha * d)
        if f_new <= f0 + c1 * alpha * slope:
            return alpha, f_new
        alpha *= 0.5
    return None, f0


def minimize_ncg(
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    options: NCGOptions = NCGOptions(),
    grad_scale: float = 1.0,
    problem: str = "energy",
) -> NCGResult:
    """Minimize a smooth convex function.

    Stops when the sup-norm of the gradient divided by `grad_scale` drops to
    `grad_tol`, or when the relative energy decrement over the last `window`
    iterations is at most `energy_tol`. The direction restarts to steepest
    descent every ceil(sqrt(n)) iterations and whenever it is not a descent
    direction.

    Raises:
        ConvergenceFailure: when `max_iters` is reached, or when the line
            search stalls before the energy has stagnated.
    """
    started = time.perf_counter()

    def fun(x):
        return value_and_grad(x)[0]

    def jac(x):
        return value_and_grad(x)[1]

    x = np.array(x0, dtype=float, copy=True)
    f, g = value_and_grad(x)
    energies = [f]
    grads: list[float] = []
    restart_every = max(1, math.ceil(math.sqrt(x.size)))
    d = -g
    since_restart = 0
    old_old_f = f + 0.5 * float(np.linalg.norm(g))
    alpha_prev = 1.0
    restarts = fallbacks = 0
    converged = False
    reason = "max_iters"
    iteration = 0

    for iteration in range(1, options.max_iters + 1):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        grads.append(gnorm)
        if gnorm / grad_scale <= options.grad_tol:
            converged, reason = True, "gradient"
            iteration -= 1
            break
        if len(energies) > options.window:
            past = energies[-1 - options.window]
            if past - energies[-1] <= options.energy_tol * max(abs(energies[-1]), 1e-300):
                converged, reason = True, "energy"
                iteration -= 1
                break

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            alpha, _, _, f_new, _, _ = line_search(
                fun, jac, x, d, gfk=g, old_fval=f, old_old_fval=old_old_f,
                c1=options.c1, c2=options.c2, maxiter=20,
            )
        if alpha is None or f_new is None or not np.isfinite(f_new) or f_new > f:
            fallbacks += 1
            metrics_collector.solver.record_fallback()
            alpha, f_new = _armijo(fun, x, f, g, d, alpha_prev, options.c1)
            if alpha is None and since_restart > 0:
                d = -g
                restarts += 1
                metrics_collector.solver.record_restart()
                alpha, f_new = _armijo(fun, x, f, g, d, alpha_prev, options.c1)
            if alpha is None:
                span = energies[-min(len(energies), options.window + 1)]
                if span - f <= STALL_TOLERANCE * max(abs(f), 1e-300):
                    converged, reason = True, "stalled"
                    iteration -= 1
                    break
                reason = "line_search_failed"
                break

        x = x + alpha * d
        old_old_f = f
        f_new_checked, g_new = value_and_grad(x)
        f = f_new_checked
        energies.append(f)
        alpha_prev = float(alpha)

        since_restart += 1
        if since_restart >= restart_every:
            beta = 0.0
            since_restart = 0
            restarts += 1
            metrics_collector.solver.record_restart()
        else:
            beta = max(0.0, _dot(g_new, g_new - g) / max(_dot(g, g), 1e-300))
        d = -g_new + beta * d
        if _dot(g_new, d) >= 0.0:
            d = -g_new
            since_restart = 0
            restarts += 1
            metrics_collector.solver.record_restart()
        g = g_new
        if iteration % PROGRESS_EVERY == 0:
            logger.debug(
                "ncg_progress",
                problem=problem,
                iteration=iteration,
                energy=f,
                grad=gnorm / grad_scale,
                message="Conjugate gradient progress",
            )

    final_grad = (float(np.max(np.abs(g))) if g.size else 0.0) / grad_scale
    duration_ms = (time.perf_counter() - started) * 1000.0
    metrics_collector.solver.record_solve(problem, converged, iteration, final_grad, duration_ms)
    if not converged:
        why = (
            "line search failed along steepest descent"
            if reason == "line_search_failed"
            else f"no convergence within {options.max_iters} iterations"
        )
        raise _failure(problem, iteration, grads, why)

    logger.info(
        "ncg_converged",
        problem=problem,
        iterations=iteration,
        energy=f,
        final_grad=final_grad,
        reason=reason,
        restarts=restarts,
        message="Energy minimization converged",
    )
    return NCGResult(
        x=x,
        energy=f,
        iterations=iteration,
        final_grad=final_grad,
        converged=True,
        reason=reason,
        restarts=restarts,
        fallbacks=fallbacks,
        history=energies,
    )


def _failure(problem: str, iteration: int, grads: list[float], why: str) -> ConvergenceFailure:
    logger.error(
        "ncg_failed",
        problem=problem,
        iterations=iteration,
        last_grad=grads[-1] if grads else None,
        reason=why,
        message="Energy minimization did not converge",
    )
    return ConvergenceFailure(f"{problem}: {why}", residual_history=grads[-50:])
