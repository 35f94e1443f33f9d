"""Dense float64 matrix substrate, an SVD routine, and finite differences.

Vectors and matrices throughout the package are plain numpy float64
arrays in row-major order.  This module adds the few numerical helpers
the rest of the code relies on: a checked matrix product, singular
values via one-sided Jacobi (used by tests as a rank / nuclear-norm
oracle), and central finite differences (the gradient oracle).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericalError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def check_finite(a: np.ndarray, context: str = "array") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{context} contains non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape checking."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {a.shape} @ {b.shape}"
        )
    return a @ b


def singular_values(
    m: np.ndarray,
    tol: float = JACOBI_TOL,
    max_sweeps: int = JACOBI_MAX_SWEEPS,
) -> np.ndarray:
    """Singular values of ``m`` in descending order via one-sided Jacobi.

    Orthogonalizes the columns of a working copy by plane rotations until
    every pair is orthogonal to relative tolerance ``tol``; the singular
    values are then the column norms.  Accurate for the small matrices
    used in tests; raises NumericalError if the sweep cap is reached.
    """
    a = check_finite(m, "singular_values input")
    if a.ndim != 2:
        raise DimensionError("singular_values expects a 2-D matrix")
    if a.shape[0] < a.shape[1]:
        a = a.T
    # Work on rows of the transpose so each column is contiguous.
    cols = a.T.copy()
    n = cols.shape[0]
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                cp = cols[p]
                cq = cols[q]
                alpha = cp @ cp
                beta = cq @ cq
                gamma = cp @ cq
                denom = np.sqrt(alpha * beta)
                if denom == 0.0 or abs(gamma) <= tol * denom:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                if zeta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * cp - s * cq
                new_q = s * cp + c * cq
                cols[p] = new_p
                cols[q] = new_q
        if not rotated:
            break
    else:
        raise NumericalError(
            f"Jacobi SVD did not converge in {max_sweeps} sweeps"
        )
    sv = np.sqrt((cols * cols).sum(axis=1))
    sv.sort()
    return sv[::-1].copy()


def finite_diff(f, x: np.ndarray, i: int, h: float) -> float:
    """Central difference of scalar ``f`` along coordinate ``i`` at ``x``."""
    if h <= 0:
        raise ValueError("finite_diff step must be positive")
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= i < x.size:
        raise DimensionError(f"coordinate {i} out of range for size {x.size}")
    xp = x.copy()
    xm = x.copy()
    xp.flat[i] += h
    xm.flat[i] -= h
    fp = float(f(xp))
    fm = float(f(xm))
    if not (np.isfinite(fp) and np.isfinite(fm)):
        raise NumericalError("function returned non-finite value in finite_diff")
    return (fp - fm) / (2.0 * h)


@dataclass(frozen=True)
class GradReport:
    """One analytic/numeric derivative comparison at a parameter coordinate."""

    index: int
    analytic: float
    numeric: float
    rel_error: float = field(init=False)

    def __post_init__(self):
        denom = max(1.0, abs(self.analytic), abs(self.numeric))
        object.__setattr__(
            self, "rel_error", abs(self.analytic - self.numeric) / denom
        )
