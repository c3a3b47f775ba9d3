"""Unit tests for solver and cache metrics."""

import pytest

from finslercap.core.metrics import CacheMetrics, MetricsCollector, SolverMetrics


# ============================================================
# SolverMetrics Tests
# ============================================================

def test_solver_metrics_record_solve():
    """Converged and failed solves are counted separately."""
    metrics = SolverMetrics()
    metrics.record_solve("exterior", True, 120, 1e-10, 35.0)
    metrics.record_solve("exterior", False, 5000, 1e-3, 900.0)
    metrics.record_solve("torsion", True, 80, 1e-11, 10.0)

    assert metrics.total_solves == 3
    assert metrics.converged_solves == 2
    assert metrics.failed_solves == 1
    assert metrics.total_iterations == 5200
    assert metrics.last_iterations == 80
    assert metrics.last_final_grad == 1e-11
    assert metrics.total_duration_ms == pytest.approx(945.0)
    assert dict(metrics.solves_by_problem) == {"exterior": 2, "torsion": 1}


def test_solver_metrics_average_iterations():
    """Average iterations, zero before any solve."""
    metrics = SolverMetrics()
    assert metrics.get_average_iterations() == 0.0
    metrics.record_solve("annulus", True, 10, 0.0, 1.0)
    metrics.record_solve("annulus", True, 30, 0.0, 1.0)
    assert metrics.get_average_iterations() == 20.0


def test_solver_metrics_counters():
    """Evaluations, fallbacks and restarts."""
    metrics = SolverMetrics()
    metrics.record_evaluation()
    metrics.record_evaluation()
    metrics.record_fallback()
    metrics.record_restart()
    assert (metrics.energy_evaluations, metrics.line_search_fallbacks, metrics.restarts) == (2, 1, 1)


# ============================================================
# CacheMetrics Tests
# ============================================================

def test_cache_hit_rate():
    """Hit rate is a percentage of lookups."""
    metrics = CacheMetrics()
    assert metrics.get_hit_rate() == 0.0
    metrics.record_hit()
    metrics.record_miss()
    metrics.record_miss()
    metrics.record_miss()
    metrics.record_set()
    assert metrics.get_hit_rate() == 25.0
    assert metrics.sets == 1


def test_cache_evictions_do_not_change_hit_rate():
    """Evictions are counted on their own."""
    metrics = CacheMetrics()
    metrics.record_hit()
    metrics.record_eviction()
    metrics.record_eviction()
    assert metrics.evictions == 2
    assert metrics.get_hit_rate() == 100.0


# ============================================================
# MetricsCollector Tests
# ============================================================

def test_collector_snapshot():
    """The snapshot has no wall-clock fields."""
    collector = MetricsCollector()
    collector.solver.record_solve("torsion", True, 3, 1e-9, 12.0)
    collector.cache.record_hit()
    collector.cache.record_eviction()

    snapshot = collector.get_all_metrics()

    assert snapshot["solver"]["total_solves"] == 1
    assert snapshot["solver"]["average_iterations"] == 3.0
    assert snapshot["solver"]["solves_by_problem"] == {"torsion": 1}
    assert snapshot["cache"]["hit_rate_percent"] == 100.0
    assert snapshot["cache"]["evictions"] == 1
    assert "total_duration_ms" not in snapshot["solver"]


def test_collector_reset():
    """reset starts from fresh counters."""
    collector = MetricsCollector()
    collector.solver.record_solve("exterior", True, 3, 1e-9, 12.0)
    collector.cache.record_set()
    collector.reset()
    assert collector.solver.total_solves == 0
    assert collector.cache.sets == 0
