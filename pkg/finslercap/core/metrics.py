"""Metrics collection for solver and cache activity."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict


@dataclass
class SolverMetrics:
    """Counters for the energy minimizations run in this process."""

    total_solves: int = 0
    converged_solves: int = 0
    failed_solves: int = 0
    total_iterations: int = 0
    energy_evaluations: int = 0
    line_search_fallbacks: int = 0
    restarts: int = 0
    total_duration_ms: float = 0.0
    last_iterations: int = 0
    last_final_grad: float | None = None
    solves_by_problem: Dict[str, int] = field(default_factory=lambda: defaultdict(int))

    def record_solve(
        self,
        problem: str,
        converged: bool,
        iterations: int,
        final_grad: float,
        duration_ms: float,
    ) -> None:
        """Record one finished (or failed) minimization."""
        self.total_solves += 1
        if converged:
            self.converged_solves += 1
        else:
            self.failed_solves += 1
        self.total_iterations += iterations
        self.total_duration_ms += duration_ms
        self.last_iterations = iterations
        self.last_final_grad = final_grad
        self.solves_by_problem[problem] += 1

    def record_evaluation(self) -> None:
        self.energy_evaluations += 1

    def record_fallback(self) -> None:
        self.line_search_fallbacks += 1

    def record_restart(self) -> None:
        self.restarts += 1

    def get_average_iterations(self) -> float:
        """Average iterations per solve."""
        if self.total_solves == 0:
            return 0.0
        return self.total_iterations / self.total_solves


@dataclass
class CacheMetrics:
    """Metrics for the solve cache."""

    hits: int = 0
    misses: int = 0
    sets: int = 0
    evictions: int = 0

    def record_hit(self) -> None:
        self.hits += 1

    def record_miss(self) -> None:
        self.misses += 1

    def record_set(self) -> None:
        self.sets += 1

    def record_eviction(self) -> None:
        self.evictions += 1

    def get_hit_rate(self) -> float:
        """Get cache hit rate as percentage (0-100)."""
        total = self.hits + self.misses
        if total == 0:
            return 0.0
        return (self.hits / total) * 100.0


class MetricsCollector:
    """Central metrics collector for the process."""

    def __init__(self) -> None:
        self.solver = SolverMetrics()
        self.cache = CacheMetrics()

    def get_all_metrics(self) -> Dict:
        """Get all collected metrics as a dictionary (no wall-clock fields)."""
        return {
            "solver": {
                "total_solves": self.solver.total_solves,
                "converged_solves": self.solver.converged_solves,
                "failed_solves": self.solver.failed_solves,
                "total_iterations": self.solver.total_iterations,
                "average_iterations": round(self.solver.get_average_iterations(), 2),
                "energy_evaluations": self.solver.energy_evaluations,
                "line_search_fallbacks": self.solver.line_search_fallbacks,
                "restarts": self.solver.restarts,
                "solves_by_problem": dict(sorted(self.solver.solves_by_problem.items())),
            },
            "cache": {
                "hits": self.cache.hits,
                "misses": self.cache.misses,
                "sets": self.cache.sets,
                "evictions": self.cache.evictions,
                "hit_rate_percent": round(self.cache.get_hit_rate(), 2),
            },
        }

    def reset(self) -> None:
        """Reset all metrics (useful for testing)."""
        self.solver = SolverMetrics()
        self.cache = CacheMetrics()


# Global metrics instance
metrics_collector = MetricsCollector()
