import math

import numpy as np
import pytest

from errors import DimensionError, UndefinedMetricError
from metrics_stop import (
    EXACT_FIT_ERROR,
    component_approx,
    compute_metrics,
    outer_converged,
    rel_error,
    relative_decrease,
    total_approx,
)
from quat_core import QuatMatrix


def test_exact_model_scores_one(exact_stokes):
    M, W, H = exact_stokes
    record = compute_metrics(M, W, H)
    assert record.upsilon == pytest.approx(1.0, abs=1e-14)
    assert record.e == pytest.approx(0.0, abs=1e-14)
    for l in record.defined_components():
        assert component_approx(M, W, H, l) == pytest.approx(1.0, abs=1e-13)


def test_zero_factors_score_zero(exact_stokes):
    M, W, H = exact_stokes
    assert total_approx(M, QuatMatrix.zeros(M.rows, 3), H) == 0.0
    assert rel_error(M, W, np.zeros_like(H)) == 1.0


def test_matches_plane_oracle(rng):
    M = QuatMatrix(rng.standard_normal((4, 6, 5)))
    W = QuatMatrix(rng.standard_normal((4, 6, 2)))
    H = rng.standard_normal((2, 5))
    R = [M.planes[l] - W.planes[l] @ H for l in range(4)]
    e = math.sqrt(sum(np.sum(p * p) for p in R)) / np.linalg.norm(M.planes.ravel())

    assert total_approx(M, W, H) == pytest.approx(1.0 - e, abs=1e-14)
    for l in range(4):
        expected = 1.0 - np.linalg.norm(R[l]) / np.linalg.norm(M.planes[l])
        assert component_approx(M, W, H, l) == pytest.approx(expected, abs=1e-14)
    assert rel_error(M, W, H) + total_approx(M, W, H) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("t", [1e-3, 0.5, 7.0, 1e4])
def test_metrics_ignore_common_scale(rng, t):
    M = QuatMatrix(rng.uniform(0.1, 1.0, (4, 5, 6)))
    W = QuatMatrix(rng.uniform(0.1, 1.0, (4, 5, 2)))
    H = rng.uniform(0.1, 1.0, (2, 6))
    base = compute_metrics(M, W, H)
    scaled = compute_metrics(QuatMatrix(t * M.planes), QuatMatrix(t * W.planes), H)
    assert scaled.upsilon == pytest.approx(base.upsilon, rel=1e-12, abs=1e-14)
    assert scaled.upsilon_l == pytest.approx(base.upsilon_l, rel=1e-12, abs=1e-14)


def test_rgb_real_component_undefined(exact_rgb):
    M, W, H = exact_rgb
    record = compute_metrics(M, W, H)
    assert record.upsilon_l[0] is None
    assert record.defined_components() == [1, 2, 3]
    with pytest.raises(UndefinedMetricError):
        component_approx(M, W, H, 0)


def test_zero_data_is_undefined():
    M = QuatMatrix.zeros(2, 2)
    with pytest.raises(UndefinedMetricError):
        total_approx(M, QuatMatrix.zeros(2, 1), np.ones((1, 2)))


def test_shape_mismatch_rejected(exact_stokes):
    M, W, H = exact_stokes
    with pytest.raises(DimensionError):
        compute_metrics(M, W, H[:, :-1])


def test_relative_decrease():
    assert relative_decrease(0.5, 0.25) == 0.5
    assert relative_decrease(0.5, 0.5) == 0.0
    assert relative_decrease(0.0, 0.0) == 0.0


@pytest.mark.parametrize("e_prev, e, done", [
    (1.0, 0.5, False),
    (1.0, 0.99995, True),
    (1.0, 1.0, True),
    (1.0, 1.1, True),
    (1e-3, EXACT_FIT_ERROR, True),
    (0.0, 0.0, True),
])
def test_outer_converged(e_prev, e, done):
    assert outer_converged(e_prev, e, 1e-4) is done
