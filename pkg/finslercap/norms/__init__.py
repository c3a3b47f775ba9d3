"""Norm families, duals and duality identities."""

from finslercap.norms.duality import IdentityReport, check_duality_identities, numeric_dual
from finslercap.norms.models import (
    EllipsoidalNorm,
    EuclideanNorm,
    NormFamily,
    NormModel,
    PNorm,
    RegularizedNorm,
    SampledNorm,
    SumNorm,
    is_pde_admissible,
)
from finslercap.norms.operations import (
    equivalence_constants,
    eval_dual,
    eval_h,
    grad_dual,
    grad_h,
    grad_v,
    hess_h,
    hess_v,
)

__all__ = [
    "EllipsoidalNorm",
    "EuclideanNorm",
    "IdentityReport",
    "NormFamily",
    "NormModel",
    "PNorm",
    "RegularizedNorm",
    "SampledNorm",
    "SumNorm",
    "check_duality_identities",
    "equivalence_constants",
    "eval_dual",
    "eval_h",
    "grad_dual",
    "grad_h",
    "grad_v",
    "hess_h",
    "hess_v",
    "is_pde_admissible",
    "numeric_dual",
]
