"""
Quaternion algebra and dense quaternion matrices.

A quaternion q = q0 + q1 i + q2 j + q3 k multiplies by the Hamilton table
i^2 = j^2 = k^2 = ijk = -1 (so ij = k, ji = -k).

QuatMatrix keeps its entries component-planar: one float64 array of shape
(4, rows, cols) whose plane l is the l-th component. In this model the right
factor H is always real, so W @ H is four independent real GEMMs, one per
plane, and every contraction against W reduces to sums of plane products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from errors import ComponentIndexError, DimensionError

N_COMPONENTS = 4


# ============================================
# SCALAR QUATERNIONS
# ============================================

@dataclass(frozen=True)
class Quaternion:
    q0: float = 0.0
    q1: float = 0.0
    q2: float = 0.0
    q3: float = 0.0

    def __post_init__(self):
        for name in ("q0", "q1", "q2", "q3"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"quaternion component {name} is not finite: {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def from_array(cls, values) -> "Quaternion":
        q = np.asarray(values, dtype=np.float64)
        if q.shape != (N_COMPONENTS,):
            raise DimensionError(f"expected 4 components, got shape {q.shape}")
        return cls(*(float(v) for v in q))

    def as_array(self) -> np.ndarray:
        return np.array([self.q0, self.q1, self.q2, self.q3], dtype=np.float64)

    @property
    def real(self) -> float:
        return self.q0

    @property
    def imag(self) -> tuple:
        return (self.q1, self.q2, self.q3)

    def __add__(self, other):
        if isinstance(other, Quaternion):
            return Quaternion.from_array(self.as_array() + other.as_array())
        if isinstance(other, (int, float)):
            return Quaternion(self.q0 + other, self.q1, self.q2, self.q3)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return Quaternion(-self.q0, -self.q1, -self.q2, -self.q3)

    def __sub__(self, other):
        if isinstance(other, (Quaternion, int, float)):
            return self + (-other)
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, Quaternion):
            return quat_mul(self, other)
        if isinstance(other, (int, float)):
            return Quaternion.from_array(self.as_array() * other)
        return NotImplemented

    def __rmul__(self, other):
        # real scalars commute with quaternions
        if isinstance(other, (int, float)):
            return Quaternion.from_array(self.as_array() * other)
        return NotImplemented

    def __abs__(self):
        return quat_modulus(self)


def hamilton_product(a, b) -> np.ndarray:
    """Hamilton product of component-first arrays, broadcasting over trailing axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a0, a1, a2, a3 = a[0], a[1], a[2], a[3]
    b0, b1, b2, b3 = b[0], b[1], b[2], b[3]
    return np.stack([
        a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
        a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
        a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
        a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
    ])


def quat_mul(a: Quaternion, b: Quaternion) -> Quaternion:
    """a b in Hamilton order; not commutative."""
    return Quaternion.from_array(hamilton_product(a.as_array(), b.as_array()))


def quat_conj(q: Quaternion) -> Quaternion:
    """Negate the imaginary part."""
    return Quaternion(q.q0, -q.q1, -q.q2, -q.q3)


def quat_modulus(q: Quaternion) -> float:
    """|q|."""
    return math.sqrt(q.q0 * q.q0 + q.q1 * q.q1 + q.q2 * q.q2 + q.q3 * q.q3)


def quat_dot(a: Quaternion, b: Quaternion) -> float:
    """Real 4-vector dot product, i.e. Re(a conj(b))."""
    return a.q0 * b.q0 + a.q1 * b.q1 + a.q2 * b.q2 + a.q3 * b.q3


# ============================================
# QUATERNION MATRICES
# ============================================

@dataclass(eq=False)
class QuatMatrix:
    """Dense rows x cols quaternion matrix, planes[l] is component l."""

    planes: np.ndarray

    def __post_init__(self):
        planes = np.ascontiguousarray(self.planes, dtype=np.float64)
        if planes.ndim != 3 or planes.shape[0] != N_COMPONENTS:
            raise DimensionError(
                f"quaternion planes must have shape (4, rows, cols), got {planes.shape}"
            )
        self.planes = planes

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "QuatMatrix":
        return cls(np.zeros((N_COMPONENTS, rows, cols)))

    @classmethod
    def from_components(cls, p0, p1, p2, p3) -> "QuatMatrix":
        comps = [np.asarray(p, dtype=np.float64) for p in (p0, p1, p2, p3)]
        if any(c.ndim != 2 or c.shape != comps[0].shape for c in comps):
            raise DimensionError("component planes must be 2-D with identical shapes")
        return cls(np.stack(comps))

    @classmethod
    def from_real(cls, X) -> "QuatMatrix":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise DimensionError(f"expected a 2-D real matrix, got shape {X.shape}")
        planes = np.zeros((N_COMPONENTS,) + X.shape)
        planes[0] = X
        return cls(planes)

    @property
    def rows(self) -> int:
        return self.planes.shape[1]

    @property
    def cols(self) -> int:
        return self.planes.shape[2]

    @property
    def shape(self) -> tuple:
        return (self.rows, self.cols)

    def __getitem__(self, index) -> Quaternion:
        u, v = index
        return Quaternion.from_array(self.planes[:, u, v])

    def columns(self, index) -> "QuatMatrix":
        """Sub-matrix of the given column indices (list, slice or int array)."""
        return QuatMatrix(self.planes[:, :, index])

    def copy(self) -> "QuatMatrix":
        return QuatMatrix(self.planes.copy())

    def conj(self) -> "QuatMatrix":
        planes = self.planes.copy()
        planes[1:] *= -1.0
        return QuatMatrix(planes)

    def __add__(self, other: "QuatMatrix") -> "QuatMatrix":
        _check_same_shape(self, other)
        return QuatMatrix(self.planes + other.planes)

    def __sub__(self, other: "QuatMatrix") -> "QuatMatrix":
        _check_same_shape(self, other)
        return QuatMatrix(self.planes - other.planes)


def _check_same_shape(a: QuatMatrix, b: QuatMatrix):
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")


def as_real_matrix(X) -> np.ndarray:
    """Coerce to a 2-D float64 array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D real matrix, got shape {X.shape}")
    return X


def qmat_mul_real(W: QuatMatrix, H) -> QuatMatrix:
    """W @ H for real H: S_l(WH) = S_l(W) H on every plane."""
    H = as_real_matrix(H)
    if W.cols != H.shape[0]:
        raise DimensionError(f"cannot multiply {W.shape} quaternion by {H.shape} real matrix")
    return QuatMatrix(np.stack([plane @ H for plane in W.planes]))


def qmat_gram_real(W: QuatMatrix) -> np.ndarray:
    """Re[W^T conj(W)]: entry (s, l) is the summed quaternion dot product of columns s and l."""
    G = sum(plane.T @ plane for plane in W.planes)
    return 0.5 * (G + G.T)


def qmat_cross_real(W: QuatMatrix, M: QuatMatrix) -> np.ndarray:
    """Re[W^T conj(M)]: sum over planes of S_l(W)^T S_l(M)."""
    if W.rows != M.rows:
        raise DimensionError(f"row counts differ: {W.rows} vs {M.rows}")
    return sum(w.T @ m for w, m in zip(W.planes, M.planes))


def qmat_fro_norm(Q: QuatMatrix) -> float:
    """Frobenius norm over all four planes."""
    return float(np.linalg.norm(Q.planes.ravel()))


def component(Q: QuatMatrix, l: int) -> np.ndarray:
    """Copy of real plane l (0 real part, 1..3 imaginary parts)."""
    if isinstance(l, bool) or not isinstance(l, (int, np.integer)) or not 0 <= l < N_COMPONENTS:
        raise ComponentIndexError(f"component index must be 0..3, got {l}")
    return Q.planes[l].copy()


def qmat_mul_quat(A: QuatMatrix, B: QuatMatrix) -> QuatMatrix:
    """General quaternion matrix product by broadcasting. Reference use only, small sizes."""
    if A.cols != B.rows:
        raise DimensionError(f"cannot multiply {A.shape} by {B.shape}")
    prod = hamilton_product(A.planes[:, :, :, None], B.planes[:, None, :, :])
    return QuatMatrix(prod.sum(axis=2))
