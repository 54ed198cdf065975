"""
Factorization solvers for M ~ W H, W quaternion in a constraint set, H >= xi real.

Building blocks
---------------
als_w_step / als_h_step
    Closed-form least squares on the whole factor followed by projection.
hnls_wq
    Hierarchical column sweeps on W. With A = H H^T and B = M H^T,
    column l becomes Project((B[:, l] - sum_{t != l} a_tl W[:, t]) / a_ll),
    Gauss-Seidel order (columns t < l already updated).
    Cost: Stokes (2nr^2 + 8rmn) + k(4mr^2 + 26mr) flops,
          RGB    (2nr^2 + 6rmn) + k(3mr^2 + 6mr) flops, k = sweeps.
hnls_hr
    Hierarchical row sweeps on H with A = Re[W^T conj(W)], B = Re[W^T conj(M)]:
    row l becomes max(xi, (B[l] - sum_{s != l} a_ls H[s]) / a_ll).
    Cost: 8(r^2 m + rmn) + k(2nr^2 + nr) flops.

Each column/row subproblem is an isotropic quadratic over a convex set, so
projecting its unconstrained minimizer solves it exactly and the objective
never increases across hierarchical sweeps.

Methods (W update, H update): QHALS (hnls_wq, hnls_hr), Qals-Rhals
(als_w_step, hnls_hr), Qhals-Rals (hnls_wq, als_h_step), QALS (als_w_step,
als_h_step).

A closed-form step whose Gram matrix is singular re-seeds the weakest
component and runs the hierarchical sweep in its place for that iteration.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from constraint_proj import DEFAULT_XI, ConstraintSet, is_feasible, proj_real_floor, project_array
from errors import ConfigError, DegenerateInputError, DimensionError, NonFiniteError
from metrics_stop import DEFAULT_OUTER_TOL, MetricRecord, compute_metrics, outer_converged
from quat_core import QuatMatrix, as_real_matrix, qmat_cross_real, qmat_gram_real, qmat_mul_real

logger = logging.getLogger(__name__)

# ============================================
# CONFIGURATION
# ============================================

DEFAULT_MAX_OUTER = 1000
DEFAULT_INNER_ITER = 50
DEFAULT_INNER_TOL = 1e-3
DEFAULT_DIV_EPS = 1e-12
DEFAULT_TIME_BUDGET_SECS = 1e4


class Method(enum.Enum):
    QHALS = "qhals"
    QALS_RHALS = "qals-rhals"
    QHALS_RALS = "qhals-rals"
    QALS = "qals"

    @property
    def label(self) -> str:
        return METHOD_LABELS[self]

    @property
    def hierarchical_w(self) -> bool:
        return self in (Method.QHALS, Method.QHALS_RALS)

    @property
    def hierarchical_h(self) -> bool:
        return self in (Method.QHALS, Method.QALS_RHALS)


METHOD_LABELS = {
    Method.QHALS: "QHALS",
    Method.QALS_RHALS: "Qals-Rhals",
    Method.QHALS_RALS: "Qhals-Rals",
    Method.QALS: "QALS",
}


class Termination(enum.Enum):
    TOL = "Tol"
    MAX_ITER = "MaxIter"
    TIME_BUDGET = "TimeBudget"
    DEGENERATE = "Degenerate"

    @property
    def is_success(self) -> bool:
        return self in (Termination.TOL, Termination.MAX_ITER)


@dataclass(frozen=True)
class SolverConfig:
    method: Method = Method.QHALS
    rank: int = 1
    max_outer: int = DEFAULT_MAX_OUTER
    outer_tol: float = DEFAULT_OUTER_TOL
    inner_iter: int = DEFAULT_INNER_ITER
    inner_tol: float = DEFAULT_INNER_TOL
    xi: float = DEFAULT_XI
    div_eps: float = DEFAULT_DIV_EPS
    time_budget_secs: float = DEFAULT_TIME_BUDGET_SECS
    seed: int = 0  # recorded in manifests; the solvers draw no random numbers

    def __post_init__(self):
        if not isinstance(self.method, Method):
            raise ConfigError(f"method must be a Method, got {self.method!r}")
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.max_outer < 1:
            raise ConfigError(f"max_outer must be >= 1, got {self.max_outer}")
        if self.inner_iter < 1:
            raise ConfigError(f"inner_iter must be >= 1, got {self.inner_iter}")
        for name in ("outer_tol", "inner_tol", "xi", "div_eps", "time_budget_secs"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be a positive finite number, got {value}")

    def replace(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


@dataclass
class FactorPair:
    W: QuatMatrix
    H: np.ndarray
    constraint: ConstraintSet

    @property
    def rank(self) -> int:
        return self.W.cols

    def reconstruct(self) -> QuatMatrix:
        return qmat_mul_real(self.W, self.H)

    def is_feasible(self, xi: float = DEFAULT_XI) -> bool:
        return is_feasible(self.W, self.constraint) and bool(np.all(self.H >= xi))

    def copy(self) -> "FactorPair":
        return FactorPair(self.W.copy(), self.H.copy(), self.constraint)


@dataclass
class RunReport:
    method: Method
    errors: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    inner_sweeps: list = field(default_factory=list)
    final_metrics: Optional[MetricRecord] = None
    terminated_by: Termination = Termination.MAX_ITER
    rescues: int = 0
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.errors)


# ============================================
# FLOP ESTIMATES
# ============================================

def hnls_wq_flops(constraint: ConstraintSet, m: int, n: int, r: int, k: int) -> int:
    if constraint is ConstraintSet.STOKES:
        return (2 * n * r * r + 8 * r * m * n) + k * (4 * m * r * r + 26 * m * r)
    return (2 * n * r * r + 6 * r * m * n) + k * (3 * m * r * r + 6 * m * r)


def hnls_hr_flops(m: int, n: int, r: int, k: int) -> int:
    return 8 * (r * r * m + r * m * n) + k * (2 * n * r * r + n * r)


# ============================================
# CLOSED-FORM ALS STEPS
# ============================================

def _checked_inverse(A: np.ndarray, div_eps: float, what: str) -> np.ndarray:
    if np.min(np.diag(A)) < div_eps or np.linalg.cond(A) > 1.0 / div_eps:
        raise DegenerateInputError(f"{what} is numerically singular")
    return np.linalg.inv(A)


def als_w_step(M: QuatMatrix, H, constraint: ConstraintSet, xi: float = DEFAULT_XI,
               div_eps: float = DEFAULT_DIV_EPS) -> QuatMatrix:
    """Project(M H^T (H H^T)^-1), one shared real inverse applied to every plane."""
    H = as_real_matrix(H)
    if M.cols != H.shape[1]:
        raise DimensionError(f"M has {M.cols} columns but H has {H.shape[1]}")
    inverse = _checked_inverse(H @ H.T, div_eps, "H H^T")
    W = np.stack([(plane @ H.T) @ inverse for plane in M.planes])
    return QuatMatrix(project_array(W, constraint, xi))


def als_h_step(M: QuatMatrix, W: QuatMatrix, xi: float = DEFAULT_XI,
               div_eps: float = DEFAULT_DIV_EPS) -> np.ndarray:
    """max(xi, Re[W^T conj(W)]^-1 Re[W^T conj(M)])."""
    inverse = _checked_inverse(qmat_gram_real(W), div_eps, "Re[W^T conj(W)]")
    return proj_real_floor(inverse @ qmat_cross_real(W, M), xi)


# ============================================
# HIERARCHICAL SOLVERS
# ============================================

def _relative_change_done(change: float, first_change: Optional[float], tol: float) -> tuple:
    """Inner stopping rule: delta = change / first change <= tol."""
    if first_change is None:
        return change, change == 0.0
    return first_change, change <= tol * first_change


def hnls_wq(M: QuatMatrix, H, W0: QuatMatrix, constraint: ConstraintSet, cfg: SolverConfig,
            on_sweep: Optional[Callable[[QuatMatrix], None]] = None) -> QuatMatrix:
    """Column sweeps on W; columns with a_ll < div_eps are held fixed."""
    H = as_real_matrix(H)
    if M.cols != H.shape[1] or W0.cols != H.shape[0] or W0.rows != M.rows:
        raise DimensionError(
            f"incompatible shapes M {M.shape}, W0 {W0.shape}, H {H.shape}"
        )
    A = H @ H.T
    B = np.stack([plane @ H.T for plane in M.planes])
    W = W0.planes.copy()
    r = A.shape[0]
    live = [l for l in range(r) if A[l, l] >= cfg.div_eps]

    first_change = None
    for _ in range(cfg.inner_iter):
        W_prev = W.copy()
        for l in live:
            a = A[l, l]
            c = W @ A[:, l] - a * W[:, :, l]
            W[:, :, l] = project_array((B[:, :, l] - c) / a, constraint, cfg.xi)
        change = float(np.linalg.norm((W - W_prev).ravel()))
        if on_sweep is not None:
            on_sweep(QuatMatrix(W.copy()))
        first_change, done = _relative_change_done(change, first_change, cfg.inner_tol)
        if done:
            break
    return QuatMatrix(W)


def hnls_hr(M: QuatMatrix, W: QuatMatrix, H0, cfg: SolverConfig,
            on_sweep: Optional[Callable[[np.ndarray], None]] = None) -> np.ndarray:
    """Row sweeps on H; rows with a_ll < div_eps are held fixed."""
    H = np.array(as_real_matrix(H0), dtype=np.float64)
    if W.rows != M.rows or H.shape != (W.cols, M.cols):
        raise DimensionError(
            f"incompatible shapes M {M.shape}, W {W.shape}, H0 {H.shape}"
        )
    A = qmat_gram_real(W)
    B = qmat_cross_real(W, M)
    r = A.shape[0]
    live = [l for l in range(r) if A[l, l] >= cfg.div_eps]

    first_change = None
    for _ in range(cfg.inner_iter):
        H_prev = H.copy()
        for l in live:
            a = A[l, l]
            c = A[l, :] @ H - a * H[l]
            H[l] = proj_real_floor((B[l] - c) / a, cfg.xi)
        change = float(np.linalg.norm(H - H_prev))
        if on_sweep is not None:
            on_sweep(H.copy())
        first_change, done = _relative_change_done(change, first_change, cfg.inner_tol)
        if done:
            break
    return H


# ============================================
# DEGENERATE COMPONENTS
# ============================================

def rescue_degenerate(l: int, M: QuatMatrix, W: QuatMatrix, H, constraint: ConstraintSet,
                      xi: float = DEFAULT_XI, div_eps: float = DEFAULT_DIV_EPS) -> tuple:
    """Re-seed component l from the worst-fit column of the residual without l.

    Returns (W, H) copies with W[:, l] = Project(R[:, q*]) where q* maximizes the
    column norm of R = M - sum_{s != l} W[:, s] H[s, :], and H[l, :] = xi.
    """
    H = np.array(H, dtype=np.float64)
    others = [s for s in range(W.cols) if s != l]
    R = M.planes - np.stack([plane[:, others] @ H[others, :] for plane in W.planes])
    norms = np.sqrt(np.einsum("lij,lij->j", R, R))
    q = int(np.argmax(norms))
    if norms[q] < div_eps:
        raise DegenerateInputError(
            f"component {l} is degenerate and every residual column is below {div_eps:g}"
        )
    planes = W.planes.copy()
    planes[:, :, l] = project_array(R[:, :, q], constraint, xi)
    H[l, :] = xi
    logger.warning("Rescued component %d from residual column %d (norm %.3e)", l, q, norms[q])
    return QuatMatrix(planes), H


def weakest_component(A: np.ndarray) -> int:
    """Component to re-seed when the Gram matrix A of a closed-form step is singular.

    Among the components with at least half the largest weight in the eigenvector
    of the smallest eigenvalue, the one with the smallest diagonal entry (lowest
    index on ties).
    """
    A = 0.5 * (A + A.T)
    _, vectors = np.linalg.eigh(A)
    weight = np.abs(vectors[:, 0])
    candidates = np.flatnonzero(weight >= 0.5 * weight.max())
    return int(candidates[np.argmin(np.diag(A)[candidates])])


def _degenerate_rows(H: np.ndarray, div_eps: float) -> list:
    return [l for l, a in enumerate(np.einsum("ij,ij->i", H, H)) if a < div_eps]


def _degenerate_columns(W: QuatMatrix, div_eps: float) -> list:
    return [l for l, a in enumerate(np.diag(qmat_gram_real(W))) if a < div_eps]


# ============================================
# OUTER DRIVER
# ============================================

def qnmf_solve(M: QuatMatrix, constraint: ConstraintSet, cfg: SolverConfig, init: FactorPair,
               on_sweep: Optional[Callable[[QuatMatrix, np.ndarray], None]] = None) -> tuple:
    """Alternate W and H updates per cfg.method until the outer stopping rule fires.

    on_sweep(W, H) is called after every inner sweep and closed-form step.
    Returns (FactorPair, RunReport).
    """
    if init.rank != cfg.rank or init.H.shape != (cfg.rank, M.cols) or init.W.rows != M.rows:
        raise DimensionError(
            f"initial factors W {init.W.shape}, H {init.H.shape} do not match "
            f"M {M.shape} at rank {cfg.rank}"
        )
    method = cfg.method
    report = RunReport(method=method)
    W, H = init.W.copy(), np.array(init.H, dtype=np.float64)
    start = time.perf_counter()
    e_prev = compute_metrics(M, W, H).e

    m, n, r = M.rows, M.cols, cfg.rank
    logger.info("%s: m=%d n=%d r=%d, e(0)=%.6e", method.label, m, n, r, e_prev)
    logger.debug(
        "%s: per-sweep flops W %d, H %d", method.label,
        hnls_wq_flops(constraint, m, n, r, 1) - hnls_wq_flops(constraint, m, n, r, 0),
        hnls_hr_flops(m, n, r, 1) - hnls_hr_flops(m, n, r, 0),
    )

    report.terminated_by = Termination.MAX_ITER
    for t in range(1, cfg.max_outer + 1):
        w_sweeps = h_sweeps = 0

        def count_w(Wk):
            nonlocal w_sweeps
            w_sweeps += 1
            if on_sweep is not None:
                on_sweep(Wk, H)

        def count_h(Hk):
            nonlocal h_sweeps
            h_sweeps += 1
            if on_sweep is not None:
                on_sweep(W, Hk)

        try:
            # W update
            rescued = False
            for l in _degenerate_rows(H, cfg.div_eps):
                W, H = rescue_degenerate(l, M, W, H, constraint, cfg.xi, cfg.div_eps)
                report.rescues += 1
                rescued = True

            if method.hierarchical_w:
                W = hnls_wq(M, H, W, constraint, cfg, on_sweep=count_w)
            elif not rescued:
                # a rescued H row is all xi, which makes H H^T singular
                try:
                    W = als_w_step(M, H, constraint, cfg.xi, cfg.div_eps)
                    count_w(W)
                except DegenerateInputError as e:
                    l = weakest_component(H @ H.T)
                    logger.warning("%s: %s at iteration %d, rescuing component %d", method.label, e, t, l)
                    W, H = rescue_degenerate(l, M, W, H, constraint, cfg.xi, cfg.div_eps)
                    report.rescues += 1
                    W = hnls_wq(M, H, W, constraint, cfg, on_sweep=count_w)

            # H update
            for l in _degenerate_columns(W, cfg.div_eps):
                W, H = rescue_degenerate(l, M, W, H, constraint, cfg.xi, cfg.div_eps)
                report.rescues += 1

            if method.hierarchical_h:
                H = hnls_hr(M, W, H, cfg, on_sweep=count_h)
            else:
                try:
                    H = als_h_step(M, W, cfg.xi, cfg.div_eps)
                    count_h(H)
                except DegenerateInputError as e:
                    l = weakest_component(qmat_gram_real(W))
                    logger.warning("%s: %s at iteration %d, rescuing component %d", method.label, e, t, l)
                    W, H = rescue_degenerate(l, M, W, H, constraint, cfg.xi, cfg.div_eps)
                    report.rescues += 1
                    H = hnls_hr(M, W, H, cfg, on_sweep=count_h)
        except DegenerateInputError as e:
            logger.warning("%s: degenerate exit at iteration %d: %s", method.label, t, e)
            report.terminated_by = Termination.DEGENERATE
            report.message = str(e)
            W, H = _last_feasible(W, H, init, report)
            break

        e_k = compute_metrics(M, W, H).e
        if not math.isfinite(e_k):
            raise NonFiniteError(f"{method.label}: e({t}) = {e_k} is not finite")
        elapsed = time.perf_counter() - start
        report.errors.append(e_k)
        report.wall_times.append(elapsed)
        report.inner_sweeps.append((w_sweeps, h_sweeps))
        logger.debug("%s: iter %d e=%.6e sweeps W=%d H=%d", method.label, t, e_k, w_sweeps, h_sweeps)

        if outer_converged(e_prev, e_k, cfg.outer_tol):
            report.terminated_by = Termination.TOL
            break
        if elapsed > cfg.time_budget_secs:
            report.terminated_by = Termination.TIME_BUDGET
            break
        e_prev = e_k

    if not report.errors:
        report.errors.append(compute_metrics(M, W, H).e)
        report.wall_times.append(time.perf_counter() - start)
        report.inner_sweeps.append((0, 0))

    elapsed = time.perf_counter() - start
    report.final_metrics = compute_metrics(M, W, H, elapsed=elapsed)
    logger.info(
        "%s: %s after %d iterations, Upsilon=%.4f (%.2fs)", method.label,
        report.terminated_by.value, report.iterations, report.final_metrics.upsilon, elapsed,
    )
    return FactorPair(W, H, constraint), report


def _last_feasible(W: QuatMatrix, H: np.ndarray, init: FactorPair, report: RunReport) -> tuple:
    """The pair in hand if it is still feasible, otherwise the initial one."""
    if is_feasible(W, init.constraint) and np.all(H >= 0) and W.cols == H.shape[0]:
        return W, H
    report.message += " (returned initial factors)"
    return init.W.copy(), np.array(init.H)
