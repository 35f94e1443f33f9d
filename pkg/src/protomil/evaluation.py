"""Metrics, effect size, disentanglement accuracy, and the ablation harness."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .cfd import FrequencySample
from .disentangle import ROLE_OF_SEMANTIC, SEMANTICS
from .errors import (
    DimensionError,
    RolesUnavailableError,
    UndefinedMetricError,
)
from .model import (
    TrainConfig,
    VARIANTS,
    bag_embedding,
    derive_seed,
    forward,
    train,
)

_TAG_EVAL_FREQS = 201
_TAG_SPLIT = 202

ABLATION_VARIANTS = (
    ("no_cluster", "cfd"),
    ("naive_cluster", "cfd"),
    ("lrsc_only", "cfd"),
    ("full", "cfd"),
    ("full", "mmd"),
)


def variant_tag(variant: str, metric: str) -> str:
    return "full_mmd" if (variant, metric) == ("full", "mmd") else variant


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise DimensionError("predictions and labels must have equal length >= 1")
    return float(np.mean(predictions == labels))


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties receiving the average rank."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def binary_auc(scores, positive_mask) -> float:
    """ROC AUC via the rank statistic with tie averaging."""
    scores = np.asarray(scores, dtype=np.float64)
    positive_mask = np.asarray(positive_mask, dtype=bool)
    n_pos = int(positive_mask.sum())
    n_neg = positive_mask.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative samples")
    ranks = _average_ranks(scores)
    pos_rank_sum = float(ranks[positive_mask].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def macro_auc(probs, labels, return_per_class: bool = False):
    """One-vs-rest AUC averaged over classes present in the labels."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] != labels.size:
        raise DimensionError("probs must be (n_bags, n_classes) matching labels")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-9):
        raise DimensionError("probability rows must sum to 1")
    per_class = []
    for c in range(probs.shape[1]):
        mask = labels == c
        if not mask.any() or mask.all():
            warnings.warn(f"class {c} has no defined AUC; skipped", stacklevel=2)
            per_class.append(None)
            continue
        per_class.append(binary_auc(probs[:, c], mask))
    defined = [a for a in per_class if a is not None]
    if not defined:
        raise UndefinedMetricError("no class has a defined AUC")
    macro = float(np.mean(defined))
    if return_per_class:
        return macro, per_class
    return macro


def eta_squared_from_projections(values, labels) -> float:
    """One-way ANOVA effect size SS_between / SS_total on 1-D values."""
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    grand = values.mean()
    ss_total = float(((values - grand) ** 2).sum())
    if ss_total == 0.0:
        warnings.warn("zero total variance; effect size reported as 0",
                      stacklevel=2)
        return 0.0
    ss_between = 0.0
    for c in np.unique(labels):
        group = values[labels == c]
        ss_between += group.size * (group.mean() - grand) ** 2
    return float(ss_between / ss_total)


def class_mean_direction(features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Unit direction between the two most populous class means.

    Deterministic 1-D projection axis; population ties resolve toward
    the lower class index.
    """
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise UndefinedMetricError("need at least two classes")
    by_population = sorted(zip(-counts, classes))
    c1, c2 = by_population[0][1], by_population[1][1]
    direction = (
        features[labels == c1].mean(axis=0)
        - features[labels == c2].mean(axis=0)
    )
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        return direction
    return direction / norm


def eta_squared(features, labels) -> float:
    """Effect size of class separation along the dominant class-mean axis."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.shape[0] != labels.size or labels.size < 2:
        raise DimensionError("features and labels must align, length >= 2")
    direction = class_mean_direction(features, labels)
    return eta_squared_from_projections(features @ direction, labels)


@dataclass(frozen=True)
class DisentangleAccuracy:
    anchored: float
    best_permutation: float
    anchored_by_role: dict


def disentangle_accuracy(instance_maps, role_lists) -> DisentangleAccuracy:
    """Fraction of instances whose semantic label matches the true role.

    ``anchored`` scores the labels as produced (prototypes fix what TIs
    means); ``best_permutation`` rescores each bag under its best
    semantic-to-role permutation, measuring clustering purity.
    """
    if not instance_maps or any(r is None for r in role_lists):
        raise RolesUnavailableError("ground-truth roles are unavailable")
    total = 0
    anchored_hits = 0
    best_hits = 0
    by_role_total = {role: 0 for role in ROLE_OF_SEMANTIC.values()}
    by_role_hits = {role: 0 for role in ROLE_OF_SEMANTIC.values()}
    for semantics, roles in zip(instance_maps, role_lists):
        if len(semantics) != len(roles):
            raise DimensionError("instance map and roles disagree in length")
        total += len(roles)
        for s, role in zip(semantics, roles):
            by_role_total[role] += 1
            if ROLE_OF_SEMANTIC[s] == role:
                anchored_hits += 1
                by_role_hits[role] += 1
        bag_best = 0
        for perm in permutations(ROLE_OF_SEMANTIC.values()):
            mapping = dict(zip(SEMANTICS, perm))
            hits = sum(mapping[s] == role for s, role in zip(semantics, roles))
            bag_best = max(bag_best, hits)
        best_hits += bag_best
    by_role = {
        role: (by_role_hits[role] / by_role_total[role])
        if by_role_total[role] else float("nan")
        for role in by_role_total
    }
    return DisentangleAccuracy(
        anchored=anchored_hits / total,
        best_permutation=best_hits / total,
        anchored_by_role=by_role,
    )


@dataclass
class EvalReport:
    variant: str
    seed: int
    accuracy: float
    macro_auc: float
    per_class_auc: list
    eta_squared: float
    disentangle_accuracy: float | None = None
    disentangle_best_permutation: float | None = None
    disentangle_tumor_accuracy: float | None = None
    train_acc_final: float | None = None

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "macro_auc": self.macro_auc,
            "per_class_auc": self.per_class_auc,
            "eta_squared": self.eta_squared,
            "disentangle_accuracy": self.disentangle_accuracy,
            "disentangle_best_permutation": self.disentangle_best_permutation,
            "disentangle_tumor_accuracy": self.disentangle_tumor_accuracy,
            "train_acc_final": self.train_acc_final,
        }


def eval_freqs(cfg: TrainConfig, n_feat: int) -> FrequencySample:
    return FrequencySample.draw(
        n_feat, cfg.num_frequencies, cfg.sigma_t,
        seed=derive_seed(cfg.seed, _TAG_EVAL_FREQS),
    )


def evaluate_model(params, test_bags, prototypes, cfg: TrainConfig,
                   seed: int | None = None,
                   history=None) -> EvalReport:
    """Forward every test bag and assemble the metric report."""
    freqs = eval_freqs(cfg, params.n_feat)
    labels = np.array([b.label for b in test_bags])
    probs = np.empty((len(test_bags), params.n_classes))
    embeddings = np.empty((len(test_bags), params.n_feat))
    instance_maps = []
    roles = []
    for i, bag in enumerate(test_bags):
        _, p, detail = forward(bag, params, prototypes, freqs, cfg)
        probs[i] = p
        embeddings[i] = bag_embedding(bag, params, prototypes, freqs, cfg)
        if detail is not None:
            instance_maps.append(detail.instance_map)
            roles.append(bag.roles)
    predictions = probs.argmax(axis=1)
    macro, per_class = macro_auc(probs, labels, return_per_class=True)
    report = EvalReport(
        variant=variant_tag(cfg.variant, cfg.metric),
        seed=seed if seed is not None else cfg.seed,
        accuracy=accuracy(predictions, labels),
        macro_auc=macro,
        per_class_auc=per_class,
        eta_squared=eta_squared(embeddings, labels),
        train_acc_final=(history[-1]["train_acc"] if history else None),
    )
    if instance_maps and all(r is not None for r in roles):
        dis = disentangle_accuracy(instance_maps, roles)
        report.disentangle_accuracy = dis.anchored
        report.disentangle_best_permutation = dis.best_permutation
        report.disentangle_tumor_accuracy = dis.anchored_by_role["tumor"]
    return report


def train_and_evaluate(train_bags, test_bags, prototypes,
                       cfg: TrainConfig) -> EvalReport:
    n_classes = max(b.label for b in train_bags + test_bags) + 1
    params, history = train(train_bags, prototypes, cfg, n_classes=n_classes)
    return evaluate_model(params, test_bags, prototypes, cfg,
                          seed=cfg.seed, history=history)


def run_variants(train_bags, test_bags, prototypes, base_cfg: TrainConfig,
                 seeds, variants=ABLATION_VARIANTS):
    """Train and score every ablation variant for every seed.

    Failures are recorded per row, never fatal.  Returns a list of row
    dicts: {"variant", "seed", "status", "report"|"error"}.
    """
    from dataclasses import replace

    rows = []
    for seed in seeds:
        for variant, dmetric in variants:
            cfg = replace(base_cfg, variant=variant, metric=dmetric, seed=seed)
            tag = variant_tag(variant, dmetric)
            try:
                report = train_and_evaluate(
                    train_bags, test_bags, prototypes, cfg
                )
                rows.append({
                    "variant": tag, "seed": seed,
                    "status": "ok", "report": report,
                })
            except Exception as exc:  # recorded, not fatal
                rows.append({
                    "variant": tag, "seed": seed,
                    "status": "error", "error": f"{type(exc).__name__}: {exc}",
                })
    return rows


def split_dataset(bags, seed: int, train_fraction: float = 0.7):
    """Seeded 70/30 split preserving determinism."""
    order = np.random.default_rng(
        derive_seed(seed, _TAG_SPLIT)
    ).permutation(len(bags))
    cut = int(round(train_fraction * len(bags)))
    train_bags = [bags[int(i)] for i in order[:cut]]
    test_bags = [bags[int(i)] for i in order[cut:]]
    return train_bags, test_bags


def median_by_variant(rows, metric_name: str) -> dict:
    """Median of one report metric per variant over the seeds that succeeded."""
    values: dict = {}
    for row in rows:
        if row["status"] != "ok":
            continue
        val = getattr(row["report"], metric_name)
        if val is None:
            continue
        values.setdefault(row["variant"], []).append(val)
    return {v: float(np.median(vals)) for v, vals in values.items()}


def run_ablation(bags, prototypes, base_cfg: TrainConfig, seeds=None):
    """Seeded 70/30 split plus the full variant grid; returns (rows, medians)."""
    if seeds is None:
        seeds = [base_cfg.seed + i for i in range(5)]
    train_bags, test_bags = split_dataset(bags, base_cfg.seed)
    rows = run_variants(train_bags, test_bags, prototypes, base_cfg, seeds)
    medians = {
        name: median_by_variant(rows, name)
        for name in ("accuracy", "macro_auc", "eta_squared")
    }
    return rows, medians


def format_report_table(rows, medians=None) -> str:
    """Aligned text table of per-run metrics plus per-variant medians."""
    header = f"{'variant':<14}{'seed':>6}{'ACC':>9}{'AUC':>9}{'eta^2':>9}{'dis':>9}"
    lines = [header, "-" * len(header)]
    for row in rows:
        if row["status"] != "ok":
            lines.append(
                f"{row['variant']:<14}{row['seed']:>6}  FAILED: {row['error']}"
            )
            continue
        r = row["report"]
        dis = f"{r.disentangle_accuracy:.4f}" if r.disentangle_accuracy is not None else "-"
        lines.append(
            f"{r.variant:<14}{r.seed:>6}{r.accuracy:>9.4f}"
            f"{r.macro_auc:>9.4f}{r.eta_squared:>9.4f}{dis:>9}"
        )
    if medians:
        lines.append("-" * len(header))
        for variant, acc in sorted(medians.get("accuracy", {}).items()):
            auc = medians.get("macro_auc", {}).get(variant, float("nan"))
            lines.append(
                f"{variant:<14}{'med':>6}{acc:>9.4f}{auc:>9.4f}"
            )
    return "\n".join(lines)
