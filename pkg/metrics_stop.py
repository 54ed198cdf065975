"""
Approximation quality of a factorization and the outer stopping rule.

    Upsilon   = 1 - ||M - WH||_F / ||M||_F
    Upsilon_l = 1 - ||S_l(M) - S_l(W) H||_F / ||S_l(M)||_F,   l = 0..3
    e         = ||M - WH||_F / ||M||_F = 1 - Upsilon

All values are fractions here; the report writer converts to percent.
A component whose reference plane is zero has no Upsilon_l (None).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from errors import DimensionError, UndefinedMetricError
from quat_core import N_COMPONENTS, QuatMatrix, qmat_mul_real

# ============================================
# CONFIGURATION
# ============================================

DEFAULT_OUTER_TOL = 1e-4
EXACT_FIT_ERROR = 1e-13


@dataclass(frozen=True)
class MetricRecord:
    upsilon: float
    upsilon_l: tuple
    e: float
    elapsed: float = 0.0

    def defined_components(self) -> list:
        return [l for l, v in enumerate(self.upsilon_l) if v is not None]


def compute_metrics(M: QuatMatrix, W: QuatMatrix, H, elapsed: float = 0.0) -> MetricRecord:
    """Every metric from a single residual pass."""
    if W.rows != M.rows or np.shape(H)[-1] != M.cols:
        raise DimensionError(
            f"factors W {W.shape}, H {np.shape(H)} do not reconstruct a {M.shape} matrix"
        )
    residual = M.planes - qmat_mul_real(W, H).planes
    res_sq = np.einsum("lij,lij->l", residual, residual)
    ref_sq = np.einsum("lij,lij->l", M.planes, M.planes)

    ref_total = math.sqrt(float(ref_sq.sum()))
    if ref_total == 0.0:
        raise UndefinedMetricError("data matrix has zero norm, relative metrics are undefined")
    e = math.sqrt(float(res_sq.sum())) / ref_total

    upsilon_l = tuple(
        None if ref_sq[l] == 0.0 else 1.0 - math.sqrt(float(res_sq[l]) / float(ref_sq[l]))
        for l in range(N_COMPONENTS)
    )
    return MetricRecord(upsilon=1.0 - e, upsilon_l=upsilon_l, e=e, elapsed=elapsed)


def total_approx(M: QuatMatrix, W: QuatMatrix, H) -> float:
    """Upsilon of the reconstruction WH."""
    return compute_metrics(M, W, H).upsilon


def component_approx(M: QuatMatrix, W: QuatMatrix, H, l: int) -> float:
    """Upsilon_l; raises when plane l of M is zero."""
    value = compute_metrics(M, W, H).upsilon_l[l]
    if value is None:
        raise UndefinedMetricError(f"component {l} of the data matrix is identically zero")
    return value


def rel_error(M: QuatMatrix, W: QuatMatrix, H) -> float:
    """e = ||M - WH||_F / ||M||_F."""
    return compute_metrics(M, W, H).e


def relative_decrease(e_prev: float, e: float) -> float:
    """(e(k-1) - e(k)) / e(k-1); zero previous error counts as no decrease."""
    if e_prev <= 0.0:
        return 0.0
    return (e_prev - e) / e_prev


def outer_converged(e_prev: float, e: float, tol: float = DEFAULT_OUTER_TOL) -> bool:
    """Stop once the relative decrease is at most tol or the fit is exact."""
    if e <= EXACT_FIT_ERROR:
        return True
    return relative_decrease(e_prev, e) <= tol
