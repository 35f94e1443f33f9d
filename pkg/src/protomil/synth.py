"""Synthetic bag generator.

Each bag is a Gaussian-mixture surrogate for a feature-extracted slide:
a handful of tumor instances whose mean shifts with the bag's grade
label, a dominant mass of non-tumor instances with a four-times-weaker
shift along the same direction (making them confusable with low-grade
tumor), and class-independent wide background noise.

The component anchors live on the leading coordinates and are scaled by
``separation``; the grade direction is the first coordinate, where the
tumor mean sits just inside tanh saturation for the default projector
gain while the non-tumor mean sits deeper into it.  This reproduces the
two failure modes the pipeline targets: a bag mean diluted by dominant
non-tumor mass, and grade information carried by a sparse population.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .disentangle import PrototypeSet
from .errors import DimensionError

ROLES = ("tumor", "nontumor", "background")


@dataclass(frozen=True)
class SynthConfig:
    C: int = 3
    n_in: int = 32
    m_min: int = 64
    m_max: int = 256
    rho: float = 0.05
    delta: float = 2.0
    spread: float = 0.25
    separation: float = 10.0
    p: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must be in (0, 1)")
        if self.delta < 0.0:
            raise ValueError("delta must be non-negative")
        if self.spread <= 0.0:
            raise ValueError("spread must be positive")
        if self.m_min < 3 or self.m_max < self.m_min:
            raise ValueError("need m_max >= m_min >= 3")
        if self.C < 2:
            raise ValueError("need at least two classes")
        if self.n_in < 8:
            raise ValueError("need n_in >= 8 for the anchor layout")
        if self.p < 1:
            raise ValueError("need at least one prototype")


@dataclass
class Bag:
    features: np.ndarray        # (m, n_in)
    label: int
    roles: list                 # per-instance role string
    bag_id: int

    @property
    def m(self) -> int:
        return self.features.shape[0]


def grade_direction(cfg: SynthConfig) -> np.ndarray:
    u = np.zeros(cfg.n_in)
    u[0] = 1.0
    return u


def component_means(cfg: SynthConfig):
    """Fixed anchors (mu_tumor, mu_nontumor, mu_background).

    Tumor and non-tumor share sign patterns on a few leading coordinates
    (scaled by ``separation``) and differ in their offset along the
    grade direction; background sits at the origin with doubled spread.
    """
    s = cfg.separation
    mu_t = np.zeros(cfg.n_in)
    mu_n = np.zeros(cfg.n_in)
    mu_b = np.zeros(cfg.n_in)
    # grade-direction offsets: tumor at the saturation knee, non-tumor deeper
    mu_t[0] = 0.8 * s
    mu_n[0] = 1.2 * s
    # pattern coordinates separating the three components
    mu_t[[1, 2, 3, 4]] = s
    mu_n[[1, 2]] = s
    mu_n[[5, 6]] = s
    return mu_t, mu_n, mu_b


def role_counts(cfg: SynthConfig, m: int):
    """Exact per-role counts: ceil(rho*m) tumor, 70% of the rest non-tumor."""
    n_t = math.ceil(cfg.rho * m)
    n_n = math.floor(0.7 * (m - n_t))
    n_b = m - n_t - n_n
    return n_t, n_n, n_b


def _bag_rng(seed: int, bag_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, bag_id]))


def make_bag(cfg: SynthConfig, bag_id: int) -> Bag:
    rng = _bag_rng(cfg.seed, bag_id)
    m = int(rng.integers(cfg.m_min, cfg.m_max + 1))
    label = int(rng.integers(cfg.C))
    n_t, n_n, n_b = role_counts(cfg, m)
    mu_t, mu_n, mu_b = component_means(cfg)
    u = grade_direction(cfg)
    tumor = rng.normal(
        mu_t + label * cfg.delta * u, cfg.spread, size=(n_t, cfg.n_in)
    )
    nontumor = rng.normal(
        mu_n + label * (cfg.delta / 4.0) * u, cfg.spread, size=(n_n, cfg.n_in)
    )
    background = rng.normal(mu_b, 2.0 * cfg.spread, size=(n_b, cfg.n_in))
    features = np.vstack([tumor, nontumor, background])
    roles = (
        ["tumor"] * n_t + ["nontumor"] * n_n + ["background"] * n_b
    )
    return Bag(features=features, label=label, roles=roles, bag_id=bag_id)


def generate_dataset(cfg: SynthConfig, count: int,
                     first_bag_id: int = 0) -> list:
    if count < 1:
        raise ValueError("count must be >= 1")
    return [make_bag(cfg, first_bag_id + i) for i in range(count)]


def sample_prototypes(cfg: SynthConfig) -> PrototypeSet:
    """Grade-neutral draws from the canonical tumor component."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x9A070]))
    mu_t, _, _ = component_means(cfg)
    feats = rng.normal(mu_t, cfg.spread, size=(cfg.p, cfg.n_in))
    return PrototypeSet(features=feats, source="synthetic")
