"""Shared fixtures: norms, bodies, small sphere grids and a clean solve cache."""

import numpy as np
import pytest

from finslercap.core.cache import solve_cache
from finslercap.core.config import settings
from finslercap.core.logging_config import setup_logging
from finslercap.core.metrics import metrics_collector
from finslercap.geometry.bodies import ellipsoid, euclidean_ball, wulff_ball
from finslercap.geometry.sphere import sphere_grid
from finslercap.norms.models import EllipsoidalNorm, EuclideanNorm, PNorm, RegularizedNorm


@pytest.fixture(scope="session", autouse=True)
def quiet_logging():
    """Route structured logs to stderr at WARNING for the whole session."""
    setup_logging(log_level="WARNING", use_json=False, deterministic=True)
    yield


@pytest.fixture(autouse=True)
def clean_state():
    """Empty the solve cache and zero the metrics around every test."""
    solve_cache.clear()
    metrics_collector.reset()
    threads, deterministic = settings.THREADS, settings.DETERMINISTIC
    yield
    solve_cache.clear()
    metrics_collector.reset()
    settings.THREADS, settings.DETERMINISTIC = threads, deterministic


@pytest.fixture
def euclidean():
    return EuclideanNorm(3, label="euclidean")


@pytest.fixture
def ellipsoidal():
    return EllipsoidalNorm(np.diag([1.0, 2.0, 3.0]), label="ellipsoidal")


@pytest.fixture
def pnorm4():
    return PNorm(4.0, [1.0, 1.0, 1.0], label="p4")


@pytest.fixture
def regularized_p4(pnorm4):
    return RegularizedNorm(pnorm4, 0.05, label="p4-reg")


@pytest.fixture
def unit_ball():
    return euclidean_ball(1.0, label="unit_ball")


@pytest.fixture
def ellipsoid_123():
    return ellipsoid([1.0, 2.0, 3.0], label="ellipsoid_123")


@pytest.fixture
def wulff_ellipsoidal(ellipsoidal):
    return wulff_ball(ellipsoidal, 1.0, label="wulff_ellipsoidal")


@pytest.fixture
def coarse_sphere():
    """Product grid small enough for fast quadrature tests."""
    return sphere_grid(3, 32, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
