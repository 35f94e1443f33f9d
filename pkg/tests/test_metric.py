import warnings

import numpy as np
import pytest

from protomil import autodiff as ad
from protomil.errors import DimensionError
from protomil.linalg import finite_diff, singular_values
from protomil.metric import (
    MetricMatrix,
    default_rank,
    gram,
    init_metric,
    mahalanobis,
    project,
    trace_reg,
)


def random_metric(rng, r, n):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return MetricMatrix(rng.normal(size=(r, n)))


class TestConstruction:
    def test_rank_cannot_exceed_dimension(self):
        with pytest.raises(DimensionError):
            MetricMatrix(np.ones((4, 3)))

    def test_warns_when_barely_low_rank(self):
        with pytest.warns(UserWarning):
            MetricMatrix(np.eye(4))

    def test_init_shapes_and_default_rank(self):
        m = init_metric(32, seed=5)
        assert m.w.shape == (default_rank(32), 32)
        assert default_rank(32) == 8
        # identity nudge keeps the leading block dominant on average
        lead = np.abs(np.diag(m.w[:, :8])).mean()
        off = np.abs(m.w[:, 8:]).mean()
        assert lead > off

    def test_init_deterministic(self):
        assert np.array_equal(init_metric(16, 4, seed=9).w,
                              init_metric(16, 4, seed=9).w)


class TestProject:
    def test_identity(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = MetricMatrix(np.eye(3))
        z = np.array([1.0, -2.0, 3.0])
        assert np.array_equal(project(m, z), z)

    def test_zero(self):
        m = MetricMatrix(np.zeros((2, 4)))
        assert np.array_equal(project(m, np.ones(4)), np.zeros(2))

    def test_hand_case(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = MetricMatrix(np.array([[1.0, 1.0], [0.0, 2.0]]))
        assert np.array_equal(project(m, np.array([3.0, 4.0])), [7.0, 8.0])

    def test_length_mismatch(self):
        m = MetricMatrix(np.zeros((2, 4)))
        with pytest.raises(DimensionError):
            project(m, np.ones(5))


class TestMahalanobis:
    def test_euclidean_under_identity(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = MetricMatrix(np.eye(2))
        assert mahalanobis(m, np.zeros(2), np.array([3.0, 4.0])) == 5.0

    def test_zero_for_equal_points(self):
        rng = np.random.default_rng(2)
        m = random_metric(rng, 3, 6)
        z = rng.normal(size=6)
        assert mahalanobis(m, z, z) == 0.0

    def test_two_route_equality(self):
        # direct ||W d||_2 equals sqrt(d^T A d) through the explicit Gram matrix
        rng = np.random.default_rng(3)
        for _ in range(25):
            m = random_metric(rng, 3, 8)
            z1 = rng.normal(size=8)
            z2 = rng.normal(size=8)
            direct = mahalanobis(m, z1, z2)
            a = gram(m)
            via_gram = float(np.sqrt((z1 - z2) @ a @ (z1 - z2)))
            assert abs(direct - via_gram) < 1e-10

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        m = random_metric(rng, 4, 8)
        z1, z2 = rng.normal(size=8), rng.normal(size=8)
        assert mahalanobis(m, z1, z2) == mahalanobis(m, z2, z1)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            m = random_metric(rng, 3, 8)
            z1, z2, z3 = rng.normal(size=(3, 8))
            assert mahalanobis(m, z1, z3) <= (
                mahalanobis(m, z1, z2) + mahalanobis(m, z2, z3) + 1e-10
            )


class TestGram:
    def test_identity(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = MetricMatrix(np.eye(3))
        assert np.array_equal(gram(m), np.eye(3))

    def test_outer_product(self):
        m = MetricMatrix(np.array([[1.0, 2.0]]))
        assert np.array_equal(gram(m), [[1.0, 2.0], [2.0, 4.0]])
        assert np.linalg.matrix_rank(gram(m)) == 1

    def test_psd_and_symmetric(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            m = random_metric(rng, 4, 12)
            a = gram(m)
            assert np.abs(a - a.T).max() < 1e-12
            assert np.linalg.eigvalsh(a).min() >= -1e-10

    def test_rank_bound(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            r = int(rng.integers(2, 8))
            n = int(rng.integers(r * 2 + 1, 33))
            m = random_metric(rng, r, n)
            sv = singular_values(gram(m))
            assert sv[r] <= 1e-10 * sv[0]


class TestTraceReg:
    def test_identity_trace(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = MetricMatrix(np.eye(5))
        assert trace_reg(m) == 5.0

    def test_single_entry(self):
        w = np.zeros((2, 4))
        w[1, 2] = 2.0
        assert trace_reg(MetricMatrix(w)) == 4.0

    def test_equals_nuclear_norm_of_gram(self):
        rng = np.random.default_rng(8)
        m = random_metric(rng, 4, 16)
        nuclear = singular_values(gram(m)).sum()
        assert abs(trace_reg(m) - nuclear) < 1e-8

    def test_nuclear_norm_identity_sweep(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            r = int(rng.integers(2, 17))
            m = random_metric(rng, r, 32)
            tr = trace_reg(m)
            nuclear = singular_values(gram(m)).sum()
            assert abs(tr - nuclear) <= 1e-8 * (1.0 + tr)

    def test_gradient_is_two_w(self):
        rng = np.random.default_rng(10)
        w0 = rng.normal(size=(3, 8))

        def f(vec):
            return float((vec.reshape(3, 8) ** 2).sum())

        for i in [0, 5, 13, 23]:
            numeric = finite_diff(f, w0.ravel(), i, 1e-6)
            analytic = 2.0 * w0.ravel()[i]
            assert abs(numeric - analytic) < 1e-8

    def test_tensor_route_matches(self):
        rng = np.random.default_rng(11)
        w = rng.normal(size=(3, 8))
        t = ad.Tensor(w)
        out = (t * t).sum()
        out.backward()
        assert np.allclose(t.grad, 2.0 * w, atol=1e-12)
        assert float(ad.value(out)) == trace_reg(MetricMatrix(w))
