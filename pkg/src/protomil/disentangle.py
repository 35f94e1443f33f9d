"""Prototype-anchored semantic labeling of clustered instances.

The three clusters of a bag are ranked by their distribution distance to
an externally supplied prototype set: the nearest cluster is labeled
tumor-like (TIs), the farthest background (BGIs), the remaining one
non-tumor tissue (NTIs).  The refined bag representation down-weights
each pooled cluster vector by its normalized distance, so background is
almost suppressed while the prototype mean always enters with weight 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cfd import FrequencySample, cfd_distance, mmd_distance
from .clustering import SubspacePartition
from .errors import DimensionError, EmptyClusterError
from .linalg import check_finite

SEMANTICS = ("TIs", "NTIs", "BGIs")
ROLE_OF_SEMANTIC = {"TIs": "tumor", "NTIs": "nontumor", "BGIs": "background"}
NORM_EPS = 1e-8


@dataclass(frozen=True)
class PrototypeSet:
    """Anchor instance features; rows are prototype feature vectors."""

    features: np.ndarray
    source: str = "synthetic"

    def __post_init__(self):
        feats = check_finite(self.features, "prototype features")
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise DimensionError("prototype set needs at least one row")
        object.__setattr__(self, "features", feats)

    @property
    def count(self) -> int:
        return self.features.shape[0]


@dataclass
class DisentangledBag:
    """Cluster semantics, prototype distances, and the refined representation."""

    semantic_of_cluster: dict          # cluster index -> semantic label
    distances: np.ndarray              # (k,) distance of each cluster to prototypes
    pooled: dict                       # semantic label (and "PIs") -> pooled vector
    instance_map: list                 # per-instance semantic label
    cluster_of_instance: np.ndarray    # per-instance cluster index
    degenerate: bool = False
    normalized_distances: np.ndarray | None = None
    weights: dict | None = None        # semantic label (and "PIs") -> refine weight
    z_wsi: np.ndarray | None = None


def pool_subspace(features: np.ndarray, assignments: np.ndarray,
                  cluster: int) -> np.ndarray:
    """Mean feature vector of one cluster's instances."""
    features = np.asarray(features, dtype=np.float64)
    rows = np.asarray(assignments) == cluster
    if not np.any(rows):
        raise EmptyClusterError(f"cluster {cluster} has no instances")
    return features[rows].mean(axis=0)


def _semantic_order(distances: np.ndarray) -> np.ndarray:
    """Cluster indices from most to least tumor-like; ties keep lower index."""
    return np.argsort(distances, kind="stable")


def disentangle(
    partition: SubspacePartition,
    features: np.ndarray,
    prototypes: PrototypeSet,
    freqs: FrequencySample,
    distance: str = "cfd",
    bandwidth: float | None = None,
) -> DisentangledBag:
    """Label the k=3 clusters by prototype distance and pool each one."""
    if partition.k != len(SEMANTICS):
        raise DimensionError(
            f"disentangle expects k={len(SEMANTICS)} clusters, got {partition.k}"
        )
    features = np.asarray(features, dtype=np.float64)
    assignments = partition.assignments
    bag_mean = features.mean(axis=0)

    degenerate = False
    pooled_by_cluster = []
    dists = np.empty(partition.k, dtype=np.float64)
    for c in range(partition.k):
        subset = features[assignments == c]
        if subset.shape[0] == 0:
            # degenerate path: substitute the bag mean and flag the bag
            degenerate = True
            subset = bag_mean[None, :]
            pooled_by_cluster.append(bag_mean)
        else:
            pooled_by_cluster.append(subset.mean(axis=0))
        if distance == "mmd":
            dists[c] = mmd_distance(subset, prototypes.features, bandwidth)
        else:
            dists[c] = cfd_distance(subset, prototypes.features, freqs)

    order = _semantic_order(dists)
    semantic_of_cluster = {
        int(order[i]): SEMANTICS[i] for i in range(len(SEMANTICS))
    }
    pooled = {
        SEMANTICS[i]: pooled_by_cluster[int(order[i])]
        for i in range(len(SEMANTICS))
    }
    pooled["PIs"] = prototypes.features.mean(axis=0)
    instance_map = [semantic_of_cluster[int(a)] for a in assignments]
    return DisentangledBag(
        semantic_of_cluster=semantic_of_cluster,
        distances=dists,
        pooled=pooled,
        instance_map=instance_map,
        cluster_of_instance=np.asarray(assignments).copy(),
        degenerate=degenerate,
    )


def refine(bag: DisentangledBag, epsilon: float = NORM_EPS,
           normalization: str = "max") -> np.ndarray:
    """Distance-weighted sum of pooled vectors; fills z_wsi and returns it.

    Normalized distances use max-normalization by default (weights stay
    in [0,1] and the farthest cluster is nearly suppressed); sum
    normalization is available for comparison.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    d = bag.distances
    if normalization == "sum":
        dhat = d / (d.sum() + epsilon)
    elif normalization == "max":
        dhat = d / (d.max() + epsilon)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    bag.normalized_distances = dhat
    order = _semantic_order(d)
    weights = {
        SEMANTICS[i]: float(1.0 - dhat[int(order[i])])
        for i in range(len(SEMANTICS))
    }
    weights["PIs"] = 1.0
    bag.weights = weights
    z = (
        weights["TIs"] * bag.pooled["TIs"]
        + weights["NTIs"] * bag.pooled["NTIs"]
        + weights["BGIs"] * bag.pooled["BGIs"]
        + bag.pooled["PIs"]
    )
    bag.z_wsi = z
    return z
