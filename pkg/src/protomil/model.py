"""End-to-end bag scoring: projector, clustering aggregation, and head.

The scoring function projects instances through a trainable affine+tanh
layer, clusters them under the learned low-rank metric, labels the
clusters by prototype distance, refines the bag representation with the
distance weights, and classifies it with an affine head + softmax.

Cluster assignments and the semantic ordering are treated as constants
during differentiation (clustering is not differentiable); gradients
reach the metric only through the cluster-separation regularizers and
the trace term.  The same graph code runs in plain-numpy mode for
evaluation and in Tensor mode for training, so values agree bit for bit.

Ablation variants share the code path:
  full          learned metric, distance-weighted refinement, all loss terms
  lrsc_only     learned metric, equal refine weights; keeps the
                prototype regularizers that train the metric
  naive_cluster identity metric in full feature space, equal weights,
                plain cross-entropy
  no_cluster    bag mean straight to the head, plain cross-entropy
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .cfd import SQRT_EPS, FrequencySample, cfd_distance, mmd_distance
from .clustering import KPP_CANDIDATES, SubspacePartition, cluster
from .disentangle import (
    DisentangledBag,
    PrototypeSet,
    disentangle,
    refine,
)
from .errors import DimensionError, DivergenceError, NumericalError
from .linalg import GradReport, finite_diff
from .metric import MetricMatrix, default_rank, init_metric

VARIANTS = ("full", "lrsc_only", "naive_cluster", "no_cluster")
DISTANCE_METRICS = ("cfd", "mmd")

_TAG_CLUSTER = 101
_TAG_FREQS = 102
_TAG_SHUFFLE = 103
_TAG_INIT = 104
_TAG_METRIC = 105


def derive_seed(*keys) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


@dataclass(frozen=True)
class TrainConfig:
    gamma1: float = 0.1
    gamma2: float = 0.1
    gamma3: float = 0.01
    learning_rate: float = 0.02
    epochs: int = 30
    seed: int = 0
    k: int = 3
    r: int | None = None                 # None -> default_rank(n_feat)
    n_feat: int | None = None            # None -> n_in
    num_frequencies: int = 256
    sigma_t: float = 1.0
    epsilon: float = 1e-8                # refine normalization epsilon
    optimizer: str = "adam"
    metric: str = "cfd"
    variant: str = "full"
    cmax_cap: float = 10.0
    normalization: str = "max"
    resample_frequencies: bool = True
    kpp_candidates: int = KPP_CANDIDATES
    projector_gain: float = 0.25

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.metric not in DISTANCE_METRICS:
            raise ValueError(f"unknown distance metric {self.metric!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if min(self.gamma1, self.gamma2, self.gamma3) < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def bandwidth(self) -> float:
        # Gaussian frequencies of scale s correspond to kernel bandwidth 1/s
        return 1.0 / self.sigma_t


@dataclass
class ModelParams:
    projector_w: np.ndarray      # (n_feat, n_in)
    projector_b: np.ndarray      # (n_feat,)
    metric_w: np.ndarray         # (r, n_feat)
    head_w: np.ndarray           # (C, n_feat)
    head_b: np.ndarray           # (C,)

    BLOCKS = ("projector_w", "projector_b", "metric_w", "head_w", "head_b")

    @property
    def n_in(self) -> int:
        return self.projector_w.shape[1]

    @property
    def n_feat(self) -> int:
        return self.projector_w.shape[0]

    @property
    def r(self) -> int:
        return self.metric_w.shape[0]

    @property
    def n_classes(self) -> int:
        return self.head_w.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(
            projector_w=self.projector_w.copy(),
            projector_b=self.projector_b.copy(),
            metric_w=self.metric_w.copy(),
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
        )

    def blocks(self) -> dict:
        return {name: getattr(self, name) for name in self.BLOCKS}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(b)) for b in self.blocks().values())


def init_params(n_in: int, n_classes: int, cfg: TrainConfig) -> ModelParams:
    n_feat = cfg.n_feat if cfg.n_feat is not None else n_in
    r = cfg.r if cfg.r is not None else default_rank(n_feat)
    rng = np.random.default_rng(derive_seed(cfg.seed, _TAG_INIT))
    gain = cfg.projector_gain
    projector_w = gain * (
        np.eye(n_feat, n_in) + rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_feat, n_in))
    )
    projector_b = np.zeros(n_feat)
    metric_w = init_metric(n_feat, r, seed=derive_seed(cfg.seed, _TAG_METRIC)).w
    head_w = np.zeros((n_classes, n_feat))
    head_b = np.zeros(n_classes)
    return ModelParams(projector_w, projector_b, metric_w, head_w, head_b)


@dataclass(frozen=True)
class FrozenPlan:
    """Clustering and semantic ordering pinned for a gradient evaluation."""

    partition: SubspacePartition | None
    order: np.ndarray | None


def _identity_metric(n: int) -> MetricMatrix:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return MetricMatrix(np.eye(n))


def _cluster_seed(cfg: TrainConfig, bag_id: int) -> int:
    return derive_seed(cfg.seed, _TAG_CLUSTER, bag_id)


@dataclass
class _BuildOut:
    logits: object
    probs: np.ndarray
    ce: object
    loss: object
    z: object
    partition: SubspacePartition | None
    order: np.ndarray | None
    h_value: np.ndarray
    q_value: np.ndarray | None


def _build(bag, label, blocks, prototypes, freqs, cfg, plan=None,
           with_loss=True):
    """Shared forward (and optionally loss) graph for all variants.

    ``blocks`` maps parameter names to ndarrays (evaluation mode) or
    Tensors (training mode).  ``plan`` pins clustering and the semantic
    ordering; when absent they are computed from current values and
    treated as constants either way.
    """
    pw, pb = blocks["projector_w"], blocks["projector_b"]
    mw = blocks["metric_w"]
    hw, hb = blocks["head_w"], blocks["head_b"]

    x = np.asarray(bag.features, dtype=np.float64)
    h = ad.tanh(ad.matmul(x, pw.T) + pb)
    h_value = ad.value(h)

    partition = None
    order = None
    q_value = None
    dists = None
    reg_terms = None

    if cfg.variant == "no_cluster":
        z = h.mean(axis=0)
    else:
        q = ad.tanh(ad.matmul(prototypes.features, pw.T) + pb)
        q_value = ad.value(q)
        if plan is not None and plan.partition is not None:
            partition = plan.partition
        else:
            if cfg.variant == "naive_cluster":
                metric_obj = _identity_metric(h_value.shape[1])
            else:
                metric_obj = MetricMatrix(ad.value(mw))
            partition = cluster(
                h_value,
                metric_obj,
                k=cfg.k,
                seed=_cluster_seed(cfg, bag.bag_id),
                candidates=cfg.kpp_candidates,
            )
        assignments = partition.assignments
        bag_mean = h.mean(axis=0)
        pooled = []
        subsets = []
        for c in range(cfg.k):
            rows = np.flatnonzero(assignments == c)
            if rows.size == 0:
                pooled.append(bag_mean)
                subsets.append(bag_mean.reshape((1, h_value.shape[1])))
            else:
                sub = h[rows]
                subsets.append(sub)
                pooled.append(sub.mean(axis=0))
        zp = q.mean(axis=0)

        if cfg.variant in ("full", "lrsc_only"):
            dists = []
            for c in range(cfg.k):
                if cfg.metric == "mmd":
                    dists.append(
                        mmd_distance(subsets[c], q, cfg.bandwidth)
                    )
                else:
                    dists.append(cfd_distance(subsets[c], q, freqs))
            dvals = np.array([float(ad.value(d)) for d in dists])
            if plan is not None and plan.order is not None:
                order = plan.order
            else:
                order = np.argsort(dvals, kind="stable")

        if cfg.variant == "full":
            if cfg.normalization == "sum":
                denom = dists[0] + dists[1] + dists[2] + cfg.epsilon
            else:
                denom = dists[int(order[2])] + cfg.epsilon
            # accumulate in semantic order so values match refine() exactly
            terms = []
            for i in range(cfg.k):
                c = int(order[i])
                weight = 1.0 - dists[c] / denom
                terms.append(weight * pooled[c])
            z = terms[0] + terms[1] + terms[2] + zp
        else:
            z = pooled[0] + pooled[1] + pooled[2] + zp

        if with_loss and cfg.variant in ("full", "lrsc_only"):
            tis, bgi = int(order[0]), int(order[2])
            diff_min = pooled[tis] - zp
            diff_max = pooled[bgi] - zp
            wmin = ad.matmul(mw, diff_min)
            wmax = ad.matmul(mw, diff_max)
            c_min = ad.sqrt((wmin * wmin).sum() + SQRT_EPS ** 2)
            c_max = ad.sqrt((wmax * wmax).sum() + SQRT_EPS ** 2)
            trace = (mw * mw).sum()
            reg_terms = (
                cfg.gamma1 * c_min
                - cfg.gamma2 * ad.clip_max(c_max, cfg.cmax_cap)
                + cfg.gamma3 * trace
            )

    logits = ad.matmul(hw, z) + hb
    lvals = ad.value(logits)
    shift = float(lvals.max())
    expd = ad.exp(logits - shift)
    total = expd.sum()
    probs = ad.value(expd) / float(ad.value(total))

    ce = None
    loss_node = None
    if with_loss and label is not None:
        if not 0 <= label < lvals.shape[0]:
            raise DimensionError(f"label {label} out of range")
        ce = ad.log(total) + shift - logits[int(label)]
        loss_node = ce if reg_terms is None else ce + reg_terms

    return _BuildOut(
        logits=logits, probs=probs, ce=ce, loss=loss_node, z=z,
        partition=partition, order=order, h_value=h_value, q_value=q_value,
    )


def make_plan(bag, params: ModelParams, prototypes: PrototypeSet,
              freqs: FrequencySample, cfg: TrainConfig) -> FrozenPlan:
    """Clustering and semantic ordering at the current parameters."""
    out = _build(bag, None, params.blocks(), prototypes, freqs, cfg,
                 with_loss=False)
    return FrozenPlan(partition=out.partition, order=out.order)


def forward(bag, params: ModelParams, prototypes: PrototypeSet,
            freqs: FrequencySample, cfg: TrainConfig | None = None,
            plan: FrozenPlan | None = None):
    """Score one bag; returns (logits, probs, detail).

    ``detail`` carries the disentangled-bag diagnostics for variants
    that run the prototype labeling, otherwise None.
    """
    cfg = cfg or TrainConfig()
    out = _build(bag, None, params.blocks(), prototypes, freqs, cfg,
                 plan=plan, with_loss=False)
    detail = None
    if cfg.variant == "full" and out.partition is not None:
        proj_protos = PrototypeSet(out.q_value, source=prototypes.source)
        detail = disentangle(
            out.partition, out.h_value, proj_protos, freqs,
            distance=cfg.metric, bandwidth=cfg.bandwidth,
        )
        refine(detail, epsilon=cfg.epsilon, normalization=cfg.normalization)
    return ad.value(out.logits), out.probs, detail


def bag_embedding(bag, params: ModelParams, prototypes: PrototypeSet,
                  freqs: FrequencySample, cfg: TrainConfig) -> np.ndarray:
    """The final-layer bag representation fed to the head."""
    out = _build(bag, None, params.blocks(), prototypes, freqs, cfg,
                 with_loss=False)
    return np.asarray(ad.value(out.z), dtype=np.float64)


def loss(bag, label: int, params: ModelParams, prototypes: PrototypeSet,
         freqs: FrequencySample, cfg: TrainConfig,
         plan: FrozenPlan | None = None) -> float:
    out = _build(bag, label, params.blocks(), prototypes, freqs, cfg,
                 plan=plan, with_loss=True)
    return float(ad.value(out.loss))


def backward(bag, label: int, params: ModelParams, prototypes: PrototypeSet,
             freqs: FrequencySample, cfg: TrainConfig,
             plan: FrozenPlan | None = None):
    """Gradients of the frozen-assignment loss for every parameter block.

    Returns (grads dict, loss value, probs).  Blocks that do not
    participate in a variant's graph get zero gradients.
    """
    tensors = {name: ad.Tensor(arr) for name, arr in params.blocks().items()}
    out = _build(bag, label, tensors, prototypes, freqs, cfg,
                 plan=plan, with_loss=True)
    out.loss.backward()
    grads = {}
    for name, t in tensors.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.value)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in block {name}")
        grads[name] = g
    return grads, float(ad.value(out.loss)), out.probs


class _AdamState:
    """Adaptive-moment optimizer state (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: ModelParams):
        self.m = {k: np.zeros_like(v) for k, v in params.blocks().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.blocks().items()}
        self.t = 0

    def step(self, params: ModelParams, grads: dict, lr: float):
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        for name in ModelParams.BLOCKS:
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / (1 - b1 ** self.t)
            vhat = self.v[name] / (1 - b2 ** self.t)
            block = getattr(params, name)
            block -= lr * mhat / (np.sqrt(vhat) + eps)


def _epoch_freqs(cfg: TrainConfig, n_feat: int, epoch: int) -> FrequencySample:
    tick = epoch if cfg.resample_frequencies else 0
    return FrequencySample.draw(
        n_feat, cfg.num_frequencies, cfg.sigma_t,
        seed=derive_seed(cfg.seed, _TAG_FREQS, tick),
    )


def train(dataset, prototypes: PrototypeSet, cfg: TrainConfig,
          n_classes: int | None = None):
    """Seeded per-bag gradient training; returns (params, history).

    History holds one record per epoch: {"epoch", "loss", "train_acc"}.
    Raises DivergenceError (carrying the last finite parameters) if the
    loss goes non-finite.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    n_in = dataset[0].features.shape[1]
    if any(b.features.shape[1] != n_in for b in dataset):
        raise DimensionError("bags disagree on feature dimension")
    if n_classes is None:
        n_classes = max(b.label for b in dataset) + 1

    params = init_params(n_in, n_classes, cfg)
    adam = _AdamState(params) if cfg.optimizer == "adam" else None
    history = []
    last_good = params.copy()

    for epoch in range(cfg.epochs):
        freqs = _epoch_freqs(cfg, params.n_feat, epoch)
        rng = np.random.default_rng(derive_seed(cfg.seed, _TAG_SHUFFLE, epoch))
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        correct = 0
        for idx in order:
            bag = dataset[int(idx)]
            try:
                grads, loss_value, probs = backward(
                    bag, bag.label, params, prototypes, freqs, cfg
                )
            except NumericalError as exc:
                raise DivergenceError(
                    f"non-finite values at epoch {epoch}: {exc}",
                    last_params=last_good, epoch=epoch,
                ) from exc
            if not np.isfinite(loss_value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}",
                    last_params=last_good, epoch=epoch,
                )
            epoch_loss += loss_value
            if int(np.argmax(probs)) == bag.label:
                correct += 1
            if cfg.optimizer == "adam":
                adam.step(params, grads, cfg.learning_rate)
            else:
                for name in ModelParams.BLOCKS:
                    getattr(params, name)[...] -= cfg.learning_rate * grads[name]
            if not params.all_finite():
                raise DivergenceError(
                    f"non-finite parameters at epoch {epoch}",
                    last_params=last_good, epoch=epoch,
                )
            last_good = params.copy()
        history.append({
            "epoch": epoch,
            "loss": epoch_loss / len(dataset),
            "train_acc": correct / len(dataset),
        })
    return params, history


def gradient_check(bag, label: int, params: ModelParams,
                   prototypes: PrototypeSet, freqs: FrequencySample,
                   cfg: TrainConfig, n_coords: int = 50, h: float = 1e-6,
                   seed: int = 0, tolerance: float = 1e-5,
                   corrupt_block: str | None = None):
    """Compare analytic gradients against central differences.

    Clustering and the semantic ordering are frozen at the base point so
    the finite differences probe the same (differentiable) function the
    graph differentiates.  ``corrupt_block`` is a fault-injection hook
    for tests.  Returns a dict report.
    """
    plan = make_plan(bag, params, prototypes, freqs, cfg)
    grads, _, _ = backward(bag, label, params, prototypes, freqs, cfg, plan)
    if corrupt_block is not None:
        grads[corrupt_block] = grads[corrupt_block] + 1.0

    if cfg.variant in ("naive_cluster", "no_cluster"):
        block_names = [b for b in ModelParams.BLOCKS if b != "metric_w"]
    else:
        block_names = list(ModelParams.BLOCKS)

    sizes = [getattr(params, b).size for b in block_names]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_coords, total), replace=False)

    reports = []
    worst_by_block = {}
    for flat in sorted(int(p) for p in picks):
        offset = flat
        for bname, size in zip(block_names, sizes):
            if offset < size:
                break
            offset -= size
        base = getattr(params, bname)

        def frozen_loss(vec, _bname=bname, _shape=base.shape):
            trial = params.copy()
            setattr(trial, _bname, vec.reshape(_shape))
            return loss(bag, label, trial, prototypes, freqs, cfg, plan=plan)

        numeric = finite_diff(frozen_loss, base.ravel(), offset, h)
        analytic = float(grads[bname].ravel()[offset])
        rep = GradReport(index=offset, analytic=analytic, numeric=numeric)
        reports.append((bname, rep))
        prev = worst_by_block.get(bname)
        if prev is None or rep.rel_error > prev.rel_error:
            worst_by_block[bname] = rep

    max_err = max(rep.rel_error for _, rep in reports)
    return {
        "count": len(reports),
        "max_rel_error": max_err,
        "passed": bool(max_err <= tolerance),
        "tolerance": tolerance,
        "worst_by_block": {
            name: {
                "index": rep.index,
                "analytic": rep.analytic,
                "numeric": rep.numeric,
                "rel_error": rep.rel_error,
            }
            for name, rep in worst_by_block.items()
        },
        "reports": reports,
    }
