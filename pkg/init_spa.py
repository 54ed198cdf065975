"""
Starting factors for the solvers.

SpaStacked runs the successive projection algorithm on a real embedding of
the data: the planes 1..3 stacked vertically for RGB data, all four planes
for Stokes data. The 4-plane stack keeps quaternion column norms, which is
what SPA maximizes. The chosen data columns become W0 (projected for
safety) and H0 comes from a row-hierarchical solve.

Random draws W components uniform on [0, 1] (projected) and H uniform on
[0, 1] floored at xi, then takes one row sweep.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from constraint_proj import ConstraintSet, project_array, project_columns
from errors import ConfigError, DimensionError, SpaExhaustedError
from quat_core import QuatMatrix, as_real_matrix
from solvers import FactorPair, SolverConfig, hnls_hr

logger = logging.getLogger(__name__)

# ============================================
# CONFIGURATION
# ============================================

# residual column norms at or below this fraction of the largest initial norm count as zero
SPA_ZERO_TOL = 1e-12


class InitStrategy(enum.Enum):
    SPA_STACKED = "spa"
    RANDOM = "random"


@dataclass(frozen=True)
class InitPlan:
    strategy: InitStrategy = InitStrategy.SPA_STACKED
    rank: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")


def spa_select(X, r: int) -> list:
    """Greedy SPA: pick the largest residual column, project it out, repeat r times.

    Ties go to the lowest column index.
    """
    X = as_real_matrix(X)
    if r > X.shape[1]:
        raise DimensionError(f"cannot select {r} columns from {X.shape[1]}")
    R = X.copy()
    norms_sq = np.einsum("ij,ij->j", R, R)
    floor = (SPA_ZERO_TOL ** 2) * float(norms_sq.max(initial=0.0))

    selected = []
    for _ in range(r):
        j = int(np.argmax(norms_sq))
        if norms_sq[j] <= floor or j in selected:
            raise SpaExhaustedError(selected, r)
        u = R[:, j] / np.sqrt(norms_sq[j])
        R -= np.outer(u, u @ R)
        selected.append(j)
        norms_sq = np.einsum("ij,ij->j", R, R)
    return selected


def build_stacked(M: QuatMatrix, constraint: ConstraintSet) -> np.ndarray:
    """[S_1; S_2; S_3] for RGB data, [S_0; S_1; S_2; S_3] for Stokes data."""
    planes = M.planes[1:] if constraint is ConstraintSet.PURE_NONNEG else M.planes
    return planes.reshape(-1, M.cols).copy()


def init_factors(M: QuatMatrix, constraint: ConstraintSet, plan: InitPlan,
                 cfg: SolverConfig) -> FactorPair:
    r = plan.rank
    if r > M.cols:
        raise DimensionError(f"rank {r} exceeds the {M.cols} columns of the data")

    if plan.strategy is InitStrategy.SPA_STACKED:
        K = spa_select(build_stacked(M, constraint), r)
        logger.info("SPA picked columns %s", K)
        W0 = project_columns(M.columns(K), constraint, cfg.xi)
        H0 = hnls_hr(M, W0, np.full((r, M.cols), cfg.xi), cfg)
    else:
        rng = np.random.default_rng(plan.seed)
        W0 = QuatMatrix(project_array(rng.uniform(0.0, 1.0, (4, M.rows, r)), constraint, cfg.xi))
        H_start = np.maximum(cfg.xi, rng.uniform(0.0, 1.0, (r, M.cols)))
        H0 = hnls_hr(M, W0, H_start, cfg.replace(inner_iter=1))
    return FactorPair(W0, H0, constraint)
