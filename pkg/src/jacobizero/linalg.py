"""Givens-rotation mechanics for dense symmetric matrices.

Matrices are plain ``float64`` numpy arrays. Rotations follow the
convention ``A' = G^T A G`` with ``G[i,i] = G[j,j] = c``, ``G[i,j] = s``
and ``G[j,i] = -s``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np


class MatrixError(ValueError):
    """Raised for malformed matrices or out-of-range pivots."""


@dataclass(frozen=True)
class GivensCoeffs:
    i: int
    j: int
    c: float
    s: float

    @property
    def t(self) -> float:
        return self.s / self.c


@dataclass
class EigenResult:
    eigenvalues: np.ndarray
    vectors: np.ndarray
    rotations_applied: int


def as_symmetric(values, *, atol: float = 0.0) -> np.ndarray:
    """Validate ``values`` as a finite square symmetric float64 matrix.

    Returns a fresh array. With ``atol > 0`` small asymmetries are
    tolerated and averaged away.
    """
    a = np.array(values, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise MatrixError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise MatrixError("matrix contains non-finite entries")
    asym = float(np.max(np.abs(a - a.T)))
    if asym > atol:
        raise MatrixError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    if asym > 0.0:
        a = 0.5 * (a + a.T)
    return a


def _check_pivot(n: int, i: int, j: int) -> None:
    if not (0 <= i < n and 0 <= j < n):
        raise MatrixError(f"pivot ({i}, {j}) out of range for order {n}")
    if i >= j:
        raise MatrixError(f"pivot must satisfy i < j, got ({i}, {j})")


def givens_coefficients(a: np.ndarray, i: int, j: int) -> GivensCoeffs:
    """Inner rotation (|theta| <= pi/4) that annihilates ``a[i, j]``."""
    _check_pivot(a.shape[0], i, j)
    aij = float(a[i, j])
    if aij == 0.0:
        return GivensCoeffs(i, j, 1.0, 0.0)
    tau = (float(a[j, j]) - float(a[i, i])) / (2.0 * aij)
    if abs(tau) > 1e150:
        # tau*tau would overflow; t -> 1/(2 tau)
        t = 0.5 / tau
    else:
        sign = 1.0 if tau >= 0.0 else -1.0
        t = sign / (abs(tau) + math.sqrt(1.0 + tau * tau))
    c = 1.0 / math.sqrt(1.0 + t * t)
    return GivensCoeffs(i, j, c, t * c)


def apply_rotation(a: np.ndarray, g: GivensCoeffs) -> np.ndarray:
    """Return ``G^T A G`` for the rotation ``g``; ``a`` is not modified.

    The pivot entry is set to exactly zero and every mirrored pair is
    written from a single computed value, so the result is exactly
    symmetric.
    """
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise MatrixError(f"expected a square matrix, got shape {a.shape}")
    _check_pivot(n, g.i, g.j)
    i, j, c, s = g.i, g.j, g.c, g.s
    out = a.copy()
    if s == 0.0 and c == 1.0:
        return out
    aii, ajj, aij = a[i, i], a[j, j], a[i, j]
    t = s / c
    col_i = a[:, i]
    col_j = a[:, j]
    new_i = c * col_i - s * col_j
    new_j = s * col_i + c * col_j
    out[:, i] = new_i
    out[i, :] = new_i
    out[:, j] = new_j
    out[j, :] = new_j
    out[i, i] = aii - t * aij
    out[j, j] = ajj + t * aij
    out[i, j] = 0.0
    out[j, i] = 0.0
    return out


def accumulate_rotation(u: np.ndarray, g: GivensCoeffs) -> np.ndarray:
    """Return ``U @ G`` (eigenvector accumulation)."""
    n = u.shape[0]
    if u.ndim != 2 or u.shape[1] != n:
        raise MatrixError(f"expected a square matrix, got shape {u.shape}")
    _check_pivot(n, g.i, g.j)
    out = u.copy()
    ci = u[:, g.i]
    cj = u[:, g.j]
    out[:, g.i] = g.c * ci - g.s * cj
    out[:, g.j] = g.s * ci + g.c * cj
    return out


def givens_matrix(n: int, g: GivensCoeffs) -> np.ndarray:
    m = np.eye(n)
    m[g.i, g.i] = m[g.j, g.j] = g.c
    m[g.i, g.j] = g.s
    m[g.j, g.i] = -g.s
    return m


@functools.lru_cache(maxsize=None)
def upper_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major (i, j) index arrays of the strict upper triangle, read-only."""
    iu, ju = np.triu_indices(n, 1)
    iu.setflags(write=False)
    ju.setflags(write=False)
    return iu, ju


def offdiag_max(a: np.ndarray) -> tuple[float, tuple[int, int]]:
    """Largest |a_ij| over i < j and the lexicographically first pivot attaining it."""
    n = a.shape[0]
    if n < 2:
        raise MatrixError("offdiag_max needs order >= 2")
    iu, ju = upper_pairs(n)
    vals = np.abs(a[iu, ju])
    k = int(np.argmax(vals))  # first occurrence in row-major order
    return float(vals[k]), (int(iu[k]), int(ju[k]))


def offdiag_sq_norm(a: np.ndarray) -> float:
    """Sum of squares of all off-diagonal entries (both triangles)."""
    iu, ju = upper_pairs(a.shape[0])
    return 2.0 * float(np.sum(a[iu, ju] ** 2))


def is_converged(a: np.ndarray, tol: float) -> bool:
    if not tol > 0:
        raise MatrixError(f"tolerance must be positive, got {tol}")
    if a.shape[0] < 2:
        return True
    return offdiag_max(a)[0] < tol


def eig_residuals(a0: np.ndarray, res: EigenResult) -> tuple[float, float]:
    """(orthogonality error, reconstruction error) of an eigen result against ``a0``."""
    u = res.vectors
    n = u.shape[0]
    ortho = float(np.max(np.abs(u.T @ u - np.eye(n))))
    recon = float(np.max(np.abs(u.T @ a0 @ u - np.diag(res.eigenvalues))))
    return ortho, recon
