"""
Projections onto the feasible sets of the factorization.

Two quaternion sets are supported:

* Stokes cone H_S: Re q >= 0 and |Im q|^2 <= (Re q)^2, the physically
  admissible Stokes vectors. It is the 4-D second-order cone.
* Pure nonnegative H0+: Re q = 0 and q1, q2, q3 >= 0, admissible RGB pixels.

The H_S projection goes through the 2x2 Hermitian matrix

    J = 1/2 [[q0 + q2,      q3 + i q1],
             [q3 - i q1,    q0 - q2  ]]

with tr(J) = q0 and 4 det(J) = q0^2 - |Im q|^2, so q is in H_S exactly when J
is PSD. J is clipped to the PSD cone and read back. The map q -> J satisfies
||J||_F^2 = |q|^2 / 2, so the clip is also the Euclidean projection of q.

All array versions take component-first arrays of shape (4, ...).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from errors import ConfigError, DimensionError
from quat_core import N_COMPONENTS, Quaternion, QuatMatrix

# ============================================
# CONFIGURATION
# ============================================

DEFAULT_XI = 1e-9
FEASIBILITY_TOL = 1e-12


class ConstraintSet(enum.Enum):
    STOKES = "stokes"
    PURE_NONNEG = "rgb"

    @classmethod
    def from_mode(cls, mode: str) -> "ConstraintSet":
        try:
            return cls(mode.lower())
        except ValueError:
            raise ConfigError(f"unknown mode {mode!r}, expected 'stokes' or 'rgb'") from None


@dataclass(frozen=True)
class HermitianJ:
    """J = [[alpha, c], [conj(c), beta]]."""

    alpha: float
    beta: float
    c: complex

    @property
    def trace(self) -> float:
        return self.alpha + self.beta

    @property
    def det(self) -> float:
        return self.alpha * self.beta - abs(self.c) ** 2

    def eigenvalues(self) -> tuple:
        """(eta_minus, eta_plus) from the closed-form quadratic."""
        mid = 0.5 * (self.alpha + self.beta)
        rad = float(np.hypot(0.5 * (self.alpha - self.beta), abs(self.c)))
        return mid - rad, mid + rad


def _check_xi(xi: float):
    if not xi > 0:
        raise ConfigError(f"xi must be positive, got {xi}")


# ============================================
# SCALAR PROJECTIONS
# ============================================

def build_J(q: Quaternion) -> HermitianJ:
    """Hermitian 2x2 image of q; q is in the Stokes cone exactly when J is PSD."""
    return HermitianJ(
        alpha=0.5 * (q.q0 + q.q2),
        beta=0.5 * (q.q0 - q.q2),
        c=complex(0.5 * q.q3, 0.5 * q.q1),
    )


def _psd_clip(alpha, beta, c_re, c_im):
    """Clip a batch of 2x2 Hermitian matrices to the PSD cone.

    Uses P = J - eta_minus * u u^* with u u^* = (eta_plus I - J) / (eta_plus - eta_minus),
    so no eigenvector is formed.
    """
    mid = 0.5 * (alpha + beta)
    rad = np.hypot(0.5 * (alpha - beta), np.hypot(c_re, c_im))
    eta_minus = mid - rad
    eta_plus = mid + rad

    straddle = (eta_minus < 0) & (eta_plus > 0)
    gap = np.where(straddle, eta_plus - eta_minus, 1.0)
    s = np.where(straddle, eta_minus / gap, 0.0)
    shift = s * eta_plus

    scale = 1.0 + s
    a = scale * alpha - shift
    b = scale * beta - shift
    re = scale * c_re
    im = scale * c_im

    # both eigenvalues nonpositive
    dead = eta_plus <= 0
    a = np.where(dead, 0.0, a)
    b = np.where(dead, 0.0, b)
    re = np.where(dead, 0.0, re)
    im = np.where(dead, 0.0, im)
    return a, b, re, im


def proj_psd2(J: HermitianJ) -> HermitianJ:
    """Nearest PSD matrix in the Frobenius norm."""
    a, b, re, im = _psd_clip(
        np.float64(J.alpha), np.float64(J.beta),
        np.float64(J.c.real), np.float64(J.c.imag),
    )
    return HermitianJ(float(a), float(b), complex(float(re), float(im)))


def proj_hs_array(q) -> np.ndarray:
    """Stokes-cone projection of a (4, ...) array via the clipped J matrix."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape[0] != N_COMPONENTS:
        raise DimensionError(f"expected leading axis of length 4, got {q.shape}")
    a, b, re, im = _psd_clip(
        0.5 * (q[0] + q[2]), 0.5 * (q[0] - q[2]), 0.5 * q[3], 0.5 * q[1],
    )
    return np.stack([a + b, 2.0 * im, a - b, 2.0 * re])


def proj_HS(q: Quaternion) -> Quaternion:
    """Nearest point of the Stokes cone, through J."""
    J = proj_psd2(build_J(q))
    return Quaternion(
        J.alpha + J.beta,
        2.0 * J.c.imag,
        J.alpha - J.beta,
        2.0 * J.c.real,
    )


def proj_hs_lorentz_array(q) -> np.ndarray:
    """Second-order-cone projection of a (4, ...) array, written directly on (q0, Im q)."""
    q = np.asarray(q, dtype=np.float64)
    t = q[0]
    v = q[1:]
    nv = np.sqrt(np.sum(v * v, axis=0))

    inside = nv <= t
    polar = nv <= -t
    safe = np.where(nv > 0, nv, 1.0)
    half = 0.5 * (t + nv)

    out = np.empty_like(q)
    out[0] = np.where(inside, t, np.where(polar, 0.0, half))
    out[1:] = np.where(inside, v, np.where(polar, 0.0, half * v / safe))
    return out


def proj_HS_lorentz(q: Quaternion) -> Quaternion:
    """Same projection as proj_HS from the second-order-cone formula."""
    return Quaternion.from_array(proj_hs_lorentz_array(q.as_array()))


def proj_pure_nonneg_array(q, xi: float = DEFAULT_XI) -> np.ndarray:
    """Zero real plane, imaginary planes max(xi/2, w)."""
    q = np.asarray(q, dtype=np.float64)
    out = np.empty_like(q)
    out[0] = 0.0
    w = q[1:]
    out[1:] = 0.5 * np.maximum(xi, np.abs(w) + w)
    return out


def proj_pure_nonneg(q: Quaternion, xi: float = DEFAULT_XI) -> Quaternion:
    _check_xi(xi)
    return Quaternion.from_array(proj_pure_nonneg_array(q.as_array(), xi))


def proj_real_floor(x, xi: float = DEFAULT_XI):
    """max(xi, x), elementwise for arrays."""
    _check_xi(xi)
    if np.ndim(x) == 0:
        return float(max(xi, x))
    return np.maximum(xi, x)


# ============================================
# MATRIX PROJECTIONS AND FEASIBILITY
# ============================================

def project_array(q, constraint: ConstraintSet, xi: float = DEFAULT_XI) -> np.ndarray:
    """Entrywise projection of a (4, ...) array onto the constraint set."""
    if constraint is ConstraintSet.STOKES:
        return proj_hs_array(q)
    return proj_pure_nonneg_array(q, xi)


def project_columns(W: QuatMatrix, constraint: ConstraintSet, xi: float = DEFAULT_XI) -> QuatMatrix:
    _check_xi(xi)
    return QuatMatrix(project_array(W.planes, constraint, xi))


def feasible_mask(q, constraint: ConstraintSet, tol: float = FEASIBILITY_TOL) -> np.ndarray:
    """Entrywise feasibility of a (4, ...) array."""
    q = np.asarray(q, dtype=np.float64)
    if constraint is ConstraintSet.STOKES:
        nv = np.sqrt(np.sum(q[1:] * q[1:], axis=0))
        return (q[0] >= -tol) & (nv <= q[0] + tol)
    return (q[0] == 0.0) & np.all(q[1:] >= 0.0, axis=0)


def is_feasible(Q: QuatMatrix, constraint: ConstraintSet, tol: float = FEASIBILITY_TOL) -> bool:
    """True when every entry of Q lies in the constraint set."""
    return bool(np.all(feasible_mask(Q.planes, constraint, tol)))
