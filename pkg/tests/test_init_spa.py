import numpy as np
import pytest

from constraint_proj import ConstraintSet, is_feasible
from errors import ConfigError, DegenerateInputError, DimensionError, SpaExhaustedError
from init_spa import InitPlan, InitStrategy, build_stacked, init_factors, spa_select
from metrics_stop import compute_metrics
from quat_core import QuatMatrix
from run_qnmf import make_synthetic
from solvers import SolverConfig


def spa_from_scratch(X, r):
    """Recompute residual norms from the selected columns at every step."""
    selected = []
    for _ in range(r):
        if selected:
            Q, _ = np.linalg.qr(X[:, selected])
            R = X - Q @ (Q.T @ X)
        else:
            R = X
        norms = np.linalg.norm(R, axis=0)
        norms[selected] = -1.0
        selected.append(int(np.argmax(norms)))
    return selected


def test_orthogonal_columns_by_norm():
    X = np.diag([3.0, 2.0, 1.0])
    assert spa_select(X, 2) == [0, 1]
    assert spa_select(X, 3) == [0, 1, 2]


def test_ties_go_to_lowest_index():
    X = np.array([[1.0, 2.0, 2.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    assert spa_select(X, 1) == [1]
    assert spa_select(X, 2) == [1, 3]


def test_matches_from_scratch_oracle(rng):
    for _ in range(10):
        X = rng.standard_normal((6, 8))
        assert spa_select(X, 3) == spa_from_scratch(X, 3)


def test_exhausted_residual_raises():
    X = np.outer([1.0, 2.0, 0.5], [1.0, 3.0, 2.0, 0.5])
    with pytest.raises(SpaExhaustedError) as excinfo:
        spa_select(X, 2)
    assert excinfo.value.selected == [1]
    assert excinfo.value.requested == 2
    assert isinstance(excinfo.value, DegenerateInputError)


def test_zero_matrix_raises():
    with pytest.raises(SpaExhaustedError):
        spa_select(np.zeros((3, 3)), 1)


def test_rank_above_columns_rejected():
    with pytest.raises(DimensionError):
        spa_select(np.eye(3), 4)


def test_build_stacked_rgb_drops_real_plane(exact_rgb):
    M, _, _ = exact_rgb
    X = build_stacked(M, ConstraintSet.PURE_NONNEG)
    assert X.shape == (3 * M.rows, M.cols)
    np.testing.assert_array_equal(X[:M.rows], M.planes[1])


def test_build_stacked_stokes_keeps_column_norms(exact_stokes):
    M, _, _ = exact_stokes
    X = build_stacked(M, ConstraintSet.STOKES)
    assert X.shape == (4 * M.rows, M.cols)
    np.testing.assert_allclose(
        np.linalg.norm(X, axis=0), np.sqrt(np.einsum("luv,luv->v", M.planes, M.planes)), atol=1e-14
    )


def test_build_stacked_unpolarized():
    planes = np.zeros((4, 2, 3))
    planes[0] = [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]
    X = build_stacked(QuatMatrix(planes), ConstraintSet.STOKES)
    np.testing.assert_array_equal(X[:2], planes[0])
    np.testing.assert_array_equal(X[2:], 0.0)


def test_repeated_columns_give_distinct_picks(rng):
    distinct = np.abs(rng.standard_normal((4, 5, 3)))
    distinct[0] = 2.0 * np.linalg.norm(distinct[1:], axis=0)
    M = QuatMatrix(np.concatenate([distinct, distinct, distinct], axis=2))
    pair = init_factors(M, ConstraintSet.STOKES, InitPlan(rank=3), SolverConfig(rank=3))

    matched = []
    for l in range(3):
        gaps = [np.max(np.abs(pair.W.planes[:, :, l] - distinct[:, :, k])) for k in range(3)]
        assert min(gaps) < 1e-12
        matched.append(int(np.argmin(gaps)))
    assert sorted(matched) == [0, 1, 2]


def test_spa_init_is_nearly_exact_on_separable_data(constraint):
    M, _, _ = make_synthetic(constraint, 12, 20, 3, seed=21)
    cfg = SolverConfig(rank=3)
    pair = init_factors(M, constraint, InitPlan(rank=3), cfg)
    assert compute_metrics(M, pair.W, pair.H).upsilon >= 0.99
    assert pair.is_feasible(cfg.xi)


def test_random_init_is_deterministic(constraint):
    M, _, _ = make_synthetic(constraint, 8, 10, 2, seed=3)
    cfg = SolverConfig(rank=2)
    plan = InitPlan(strategy=InitStrategy.RANDOM, rank=2, seed=42)
    a = init_factors(M, constraint, plan, cfg)
    b = init_factors(M, constraint, plan, cfg)
    np.testing.assert_array_equal(a.W.planes, b.W.planes)
    np.testing.assert_array_equal(a.H, b.H)
    assert is_feasible(a.W, constraint)
    assert np.all(a.H >= cfg.xi)


def test_spa_init_on_low_rank_data_raises():
    M, _, _ = make_synthetic(ConstraintSet.STOKES, 6, 8, 1, seed=1)
    with pytest.raises(SpaExhaustedError):
        init_factors(M, ConstraintSet.STOKES, InitPlan(rank=2), SolverConfig(rank=2))


def test_init_plan_validation():
    with pytest.raises(ConfigError):
        InitPlan(rank=0)
    with pytest.raises(DimensionError):
        init_factors(QuatMatrix.zeros(2, 2), ConstraintSet.STOKES, InitPlan(rank=3), SolverConfig(rank=3))
