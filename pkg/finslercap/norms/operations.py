"""Checked evaluation entry points for norm models.

These wrap the vectorized model methods with argument validation: non-finite
input raises `InvalidArgumentError`, derivatives at the origin raise
`NormDomainError`.
"""

from __future__ import annotations

import numpy as np

from finslercap.core.errors import InvalidArgumentError, NormDomainError
from finslercap.norms.models import NormModel


def _as_point(model: NormModel, xi, name: str) -> np.ndarray:
    arr = np.asarray(xi, dtype=float)
    if arr.shape[-1:] != (model.dimension,):
        raise InvalidArgumentError(
            f"{name} must have trailing dimension {model.dimension}, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return arr


def _nonzero(arr: np.ndarray, operation: str) -> np.ndarray:
    if np.any(np.all(arr == 0.0, axis=-1)):
        raise NormDomainError(operation)
    return arr


def eval_h(model: NormModel, xi) -> float | np.ndarray:
    """H(xi) >= 0, zero iff xi = 0."""
    return model.h(_as_point(model, xi, "xi"))[()]


def eval_dual(model: NormModel, x) -> float | np.ndarray:
    """H_0(x), closed form where available, numeric sup otherwise."""
    return np.asarray(model.dual(_as_point(model, x, "x")))[()]


def grad_h(model: NormModel, xi) -> np.ndarray:
    return model.grad_h(_nonzero(_as_point(model, xi, "xi"), "grad_h"))


def hess_h(model: NormModel, xi) -> np.ndarray:
    return model.hess_h(_nonzero(_as_point(model, xi, "xi"), "hess_h"))


def grad_v(model: NormModel, xi) -> np.ndarray:
    return model.grad_v(_as_point(model, xi, "xi"))


def hess_v(model: NormModel, xi) -> np.ndarray:
    return model.hess_v(_nonzero(_as_point(model, xi, "xi"), "hess_v"))


def grad_dual(model: NormModel, x) -> np.ndarray:
    return model.grad_dual(_nonzero(_as_point(model, x, "x"), "grad_dual"))


def equivalence_constants(model: NormModel) -> tuple[float, float]:
    """(sigma, gamma) with sigma |xi| <= H(xi) <= gamma |xi|."""
    return model.equivalence_constants
