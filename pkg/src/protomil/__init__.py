"""Prototype-anchored multiple-instance learning.

Bags of instance features are scored end to end: a trainable projector
embeds instances, a learned low-rank metric clusters them into three
subspaces, clusters are labeled tumor / non-tumor / background by their
characteristic-function distance to a prototype set, and the bag
representation is refined by those distances before classification.
"""

from .cfd import FrequencySample, cfd_distance, chf, empirical_cf, mmd_distance
from .clustering import SubspacePartition, assign, cluster
from .disentangle import DisentangledBag, PrototypeSet, disentangle, pool_subspace, refine
from .metric import MetricMatrix, gram, init_metric, mahalanobis, project, trace_reg
from .model import ModelParams, TrainConfig, backward, forward, loss, train
from .synth import Bag, SynthConfig, generate_dataset, sample_prototypes

__version__ = "0.1.0"

__all__ = [
    "Bag",
    "DisentangledBag",
    "FrequencySample",
    "MetricMatrix",
    "ModelParams",
    "PrototypeSet",
    "SubspacePartition",
    "SynthConfig",
    "TrainConfig",
    "assign",
    "backward",
    "cfd_distance",
    "chf",
    "cluster",
    "disentangle",
    "empirical_cf",
    "forward",
    "generate_dataset",
    "gram",
    "init_metric",
    "loss",
    "mahalanobis",
    "mmd_distance",
    "pool_subspace",
    "project",
    "refine",
    "sample_prototypes",
    "train",
    "trace_reg",
]
