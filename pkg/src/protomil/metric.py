"""Trainable low-rank Mahalanobis metric.

A metric is parameterized by a rectangular matrix ``W`` of shape
``(r, n)`` with r <= n; the induced distance is

    d(z1, z2) = ||W (z1 - z2)||_2 = sqrt((z1-z2)^T W^T W (z1-z2)),

so the implicit PSD matrix is the Gram matrix ``W^T W`` with rank at
most r.  Distances are always computed through ``W`` directly; the Gram
matrix is materialized only for diagnostics.  The trace of the Gram
matrix equals its nuclear norm and acts as the soft rank regularizer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .linalg import check_finite


@dataclass(frozen=True)
class MetricMatrix:
    """Projection matrix W of shape (r, n) defining the learned metric."""

    w: np.ndarray

    def __post_init__(self):
        w = check_finite(self.w, "metric matrix")
        if w.ndim != 2:
            raise DimensionError("metric matrix must be 2-D")
        r, n = w.shape
        if r > n:
            raise DimensionError(f"projection rank {r} exceeds dimension {n}")
        if r > n // 2:
            warnings.warn(
                f"projection rank {r} is more than half of dimension {n}; "
                "the metric is barely low-rank",
                stacklevel=2,
            )
        object.__setattr__(self, "w", w)

    @property
    def rank_limit(self) -> int:
        return self.w.shape[0]

    @property
    def dim(self) -> int:
        return self.w.shape[1]


def default_rank(n: int) -> int:
    return max(2, n // 4)


def init_metric(n: int, r: int | None = None, seed: int = 0) -> MetricMatrix:
    """Fresh metric: N(0, 1/n) entries plus 0.5*I on the leading r x r block."""
    if r is None:
        r = default_rank(n)
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1.0 / np.sqrt(n), size=(r, n))
    w[:r, :r] += 0.5 * np.eye(r)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return MetricMatrix(w)


def project(metric: MetricMatrix, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (metric.dim,):
        raise DimensionError(
            f"vector length {z.shape} does not match metric dimension {metric.dim}"
        )
    return metric.w @ z


def mahalanobis(metric: MetricMatrix, z1: np.ndarray, z2: np.ndarray) -> float:
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != (metric.dim,) or z2.shape != (metric.dim,):
        raise DimensionError("vector length does not match metric dimension")
    d = metric.w @ (z1 - z2)
    return float(np.sqrt(d @ d))


def gram(metric: MetricMatrix) -> np.ndarray:
    """The implicit PSD matrix W^T W (diagnostic use only)."""
    return metric.w.T @ metric.w


def trace_reg(metric: MetricMatrix) -> float:
    """Tr(W^T W); equals the nuclear norm of the Gram matrix."""
    return float((metric.w * metric.w).sum())
