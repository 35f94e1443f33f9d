"""Metric-learned k-means over a bag's instances.

Instances are projected through the metric's ``W`` and clustered with
Lloyd's algorithm under the Euclidean distance of the projected space
(equivalent to the learned Mahalanobis distance on raw features).

Determinism and permutation invariance are load-bearing here: k-means++
seeding operates on the projected points in a canonical order (ascending
lexicographic order of coordinates) with a dedicated RNG stream, so the
result depends only on the multiset of instances, never on their input
order.  Lexicographic ties can only occur between bitwise-identical
rows, which are interchangeable, so any stable order among them serves
the content-hash tie-break.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBagError
from .metric import MetricMatrix

MAX_ITERS = 100
KPP_CANDIDATES = 4


@dataclass
class SubspacePartition:
    """Cluster assignments and centroids in the projected space."""

    assignments: np.ndarray          # (m,) int, one cluster index per instance
    centroids: np.ndarray            # (k, r)
    inertia: float
    iterations_used: int
    inertia_history: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Indices sorting rows ascending-lexicographically by coordinates."""
    points = np.asarray(points, dtype=np.float64)
    order = np.lexsort(points.T[::-1])
    sorted_pts = points[order]
    if points.shape[0] > 1 and np.any(
        np.all(sorted_pts[1:] == sorted_pts[:-1], axis=1)
    ):
        keyed = sorted(
            range(points.shape[0]),
            key=lambda i: (
                tuple(points[i]),
                hashlib.sha256(points[i].tobytes()).digest(),
            ),
        )
        order = np.asarray(keyed, dtype=np.intp)
    return order


def _kmeanspp(pts: np.ndarray, k: int, rng: np.random.Generator,
              candidates: int) -> np.ndarray:
    """Greedy k-means++ seeding over canonically ordered points."""
    m = pts.shape[0]
    centers = np.empty((k, pts.shape[1]), dtype=np.float64)
    first = int(rng.integers(m))
    centers[0] = pts[first]
    d2 = ((pts - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = float(d2.sum())
        draws = rng.random(candidates) * total
        cum = np.cumsum(d2)
        cand = np.searchsorted(cum, draws, side="right")
        cand = np.minimum(cand, m - 1)
        best_idx = -1
        best_pot = np.inf
        best_d2 = None
        for ci in sorted(set(int(i) for i in cand)):
            trial = np.minimum(d2, ((pts - pts[ci]) ** 2).sum(axis=1))
            pot = float(trial.sum())
            if pot < best_pot:
                best_pot = pot
                best_idx = ci
                best_d2 = trial
        centers[c] = pts[best_idx]
        d2 = best_d2
    return centers


def cluster(
    features: np.ndarray,
    metric: MetricMatrix,
    k: int = 3,
    seed: int = 0,
    max_iters: int = MAX_ITERS,
    candidates: int = KPP_CANDIDATES,
) -> SubspacePartition:
    """Lloyd's algorithm on W-projected instances with k-means++ seeding."""
    features = np.asarray(features, dtype=np.float64)
    m = features.shape[0]
    if m < k:
        raise DegenerateBagError(f"bag has {m} instances, fewer than k={k}")
    projected = features @ metric.w.T
    if np.unique(projected, axis=0).shape[0] < k:
        raise DegenerateBagError(
            f"bag has fewer than k={k} distinct projected instances"
        )
    order = canonical_order(projected)
    pts = projected[order]

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(pts, k, rng, candidates)

    assign = np.full(m, -1, dtype=np.intp)
    history: list[float] = []
    iterations = 0
    for iterations in range(1, max_iters + 1):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)
        # repair empty clusters with the point farthest from its centroid
        own = d2[np.arange(m), new_assign].copy()
        for c in range(k):
            if not np.any(new_assign == c):
                far = int(np.argmax(own))
                new_assign[far] = c
                own[far] = -1.0
        for c in range(k):
            centroids[c] = pts[new_assign == c].mean(axis=0)
        inertia = float(
            ((pts - centroids[new_assign]) ** 2).sum()
        )
        history.append(inertia)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    original = np.empty(m, dtype=np.intp)
    original[order] = assign
    return SubspacePartition(
        assignments=original,
        centroids=centroids,
        inertia=history[-1],
        iterations_used=iterations,
        inertia_history=history,
    )


def assign(point: np.ndarray, partition: SubspacePartition,
           metric: MetricMatrix) -> int:
    """Nearest-centroid cluster of a raw point; ties go to the lowest index."""
    z = metric.w @ np.asarray(point, dtype=np.float64)
    d2 = ((partition.centroids - z) ** 2).sum(axis=1)
    return int(np.argmin(d2))
