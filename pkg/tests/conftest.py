import numpy as np
import pytest

from constraint_proj import ConstraintSet
from imaging_io import write_qmat
from quat_core import QuatMatrix
from run_qnmf import make_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=[ConstraintSet.STOKES, ConstraintSet.PURE_NONNEG], ids=["stokes", "rgb"])
def constraint(request):
    return request.param


@pytest.fixture
def exact_stokes():
    """Exact rank-3 Stokes data, 12 x 20."""
    return make_synthetic(ConstraintSet.STOKES, 12, 20, 3, seed=7)


@pytest.fixture
def exact_rgb():
    return make_synthetic(ConstraintSet.PURE_NONNEG, 12, 20, 3, seed=7)


@pytest.fixture
def tiny_stokes_matrix():
    """2 x 3 Stokes matrix: columns 2+i and 4+2i are parallel, the third is 1+0.5j in row 2."""
    planes = np.zeros((4, 2, 3))
    planes[0, 0, 0], planes[1, 0, 0] = 2.0, 1.0
    planes[0, 0, 1], planes[1, 0, 1] = 4.0, 2.0
    planes[0, 1, 2], planes[2, 1, 2] = 1.0, 0.5
    return QuatMatrix(planes)


@pytest.fixture
def tiny_stokes_file(tmp_path, tiny_stokes_matrix):
    path = tmp_path / "tiny.qmat"
    write_qmat(tiny_stokes_matrix, path)
    return path
