import math
import warnings
from itertools import permutations

import numpy as np
import pytest

from protomil.clustering import cluster
from protomil.metric import MetricMatrix
from protomil.synth import (
    ROLES,
    SynthConfig,
    component_means,
    generate_dataset,
    grade_direction,
    make_bag,
    role_counts,
    sample_prototypes,
)


class TestRoleCounts:
    def test_ceiling_arithmetic(self):
        cfg = SynthConfig(rho=0.05)
        n_t, n_n, n_b = role_counts(cfg, 100)
        assert n_t == 5
        assert n_n == math.floor(0.7 * 95)
        assert n_t + n_n + n_b == 100

    def test_counts_match_recipe_for_all_sizes(self):
        cfg = SynthConfig()
        for m in range(cfg.m_min, cfg.m_max + 1):
            n_t, n_n, n_b = role_counts(cfg, m)
            assert n_t == math.ceil(cfg.rho * m)
            assert n_n == math.floor(0.7 * (m - n_t))
            assert n_b == m - n_t - n_n
            assert n_t >= 1

    def test_bag_roles_follow_counts(self):
        cfg = SynthConfig(seed=1)
        for bag_id in range(5):
            bag = make_bag(cfg, bag_id)
            n_t, n_n, n_b = role_counts(cfg, bag.m)
            assert bag.roles.count("tumor") == n_t
            assert bag.roles.count("nontumor") == n_n
            assert bag.roles.count("background") == n_b
            assert set(bag.roles) <= set(ROLES)


class TestDeterminism:
    def test_same_seed_bag_id_identical(self):
        cfg = SynthConfig(seed=7)
        a = make_bag(cfg, 3)
        b = make_bag(cfg, 3)
        assert np.array_equal(a.features, b.features)
        assert a.label == b.label
        assert a.roles == b.roles

    def test_different_bag_ids_differ(self):
        cfg = SynthConfig(seed=7)
        assert not np.array_equal(make_bag(cfg, 0).features,
                                  make_bag(cfg, 1).features)

    def test_dataset_is_per_bag_seeded(self):
        cfg = SynthConfig(seed=9)
        bags = generate_dataset(cfg, 4)
        assert [b.bag_id for b in bags] == [0, 1, 2, 3]
        again = generate_dataset(cfg, 4)
        for x, y in zip(bags, again):
            assert np.array_equal(x.features, y.features)


class TestNullSignal:
    def test_delta_zero_removes_label_dependence(self):
        # with delta = 0 the tumor component ignores the label: per-label
        # mean tumor features agree within sampling error
        cfg = SynthConfig(seed=3, delta=0.0)
        bags = generate_dataset(cfg, 120)
        mu_by_label = {}
        for label in range(cfg.C):
            rows = [
                bag.features[i]
                for bag in bags if bag.label == label
                for i in range(bag.m) if bag.roles[i] == "tumor"
            ]
            mu_by_label[label] = np.mean(rows, axis=0)
        u = grade_direction(cfg)
        projections = [float(mu_by_label[c] @ u) for c in range(cfg.C)]
        assert max(projections) - min(projections) < 0.05

    def test_delta_shifts_tumor_mean_along_direction(self):
        cfg = SynthConfig(seed=3, delta=2.0)
        bags = generate_dataset(cfg, 120)
        u = grade_direction(cfg)
        proj = {}
        for label in range(cfg.C):
            rows = [
                bag.features[i]
                for bag in bags if bag.label == label
                for i in range(bag.m) if bag.roles[i] == "tumor"
            ]
            proj[label] = float(np.mean(rows, axis=0) @ u)
        assert proj[1] - proj[0] == pytest.approx(cfg.delta, abs=0.15)
        assert proj[2] - proj[1] == pytest.approx(cfg.delta, abs=0.15)


class TestPrototypes:
    def test_single_prototype_near_anchor(self):
        cfg = SynthConfig(seed=5, p=1)
        protos = sample_prototypes(cfg)
        mu_t, _, _ = component_means(cfg)
        assert protos.count == 1
        assert np.all(np.abs(protos.features[0] - mu_t) < 10 * cfg.spread)

    def test_law_of_large_numbers(self):
        cfg = SynthConfig(seed=5, p=10_000)
        protos = sample_prototypes(cfg)
        mu_t, _, _ = component_means(cfg)
        err = np.abs(protos.features.mean(axis=0) - mu_t)
        assert np.all(err < 0.05 * cfg.spread)

    def test_disjoint_seeds_differ(self):
        a = sample_prototypes(SynthConfig(seed=1))
        b = sample_prototypes(SynthConfig(seed=2))
        assert not np.array_equal(a.features, b.features)

    def test_prototypes_independent_of_bags(self):
        cfg = SynthConfig(seed=11)
        before = sample_prototypes(cfg).features
        generate_dataset(cfg, 3)
        assert np.array_equal(before, sample_prototypes(cfg).features)


class TestRoleRecoveryAnchor:
    def test_identity_metric_recovers_roles(self):
        # with delta = 8 * spread and W = I, clustering matches the
        # generator roles at >= 99% under the best label permutation
        cfg = SynthConfig(seed=13)
        assert cfg.delta >= 8 * cfg.spread
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            metric = MetricMatrix(np.eye(cfg.n_in))
        role_idx = {"tumor": 0, "nontumor": 1, "background": 2}
        total = 0
        agree = 0
        for bag_id in range(20):
            bag = make_bag(cfg, bag_id)
            part = cluster(bag.features, metric, k=3, seed=1000 + bag_id)
            truth = np.array([role_idx[r] for r in bag.roles])
            best = 0
            for perm in permutations(range(3)):
                mapped = np.array([perm[a] for a in part.assignments])
                best = max(best, int((mapped == truth).sum()))
            total += bag.m
            agree += best
        assert agree / total >= 0.99


class TestValidation:
    def test_rho_bounds(self):
        with pytest.raises(ValueError):
            SynthConfig(rho=0.0)

    def test_spread_positive(self):
        with pytest.raises(ValueError):
            SynthConfig(spread=0.0)

    def test_count_positive(self):
        with pytest.raises(ValueError):
            generate_dataset(SynthConfig(), 0)
