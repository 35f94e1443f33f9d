import numpy as np
import pytest

from protomil import autodiff as ad
from protomil.linalg import finite_diff


def check_grad(build, x0, tol=1e-7, h=1e-6):
    """Compare Tensor gradients of scalar build(x) against central differences."""
    t = ad.Tensor(x0)
    out = build(t)
    out.backward()
    analytic = t.grad
    for i in range(x0.size):
        numeric = finite_diff(lambda v: float(ad.value(build(ad.Tensor(v.reshape(x0.shape))))), x0.ravel(), i, h)
        a = analytic.ravel()[i]
        assert abs(a - numeric) <= tol * max(1.0, abs(a), abs(numeric)), (
            f"coord {i}: analytic {a} vs numeric {numeric}"
        )


class TestElementwise:
    def test_add_mul_broadcast(self):
        rng = np.random.default_rng(0)
        x0 = rng.normal(size=(3, 4))
        bias = rng.normal(size=4)
        check_grad(lambda t: ((t + bias) * 2.0 + (t * t)).sum(), x0)

    def test_div_and_pow(self):
        rng = np.random.default_rng(1)
        x0 = rng.normal(size=5) + 3.0
        check_grad(lambda t: (t ** 3 / (t + 1.0)).sum(), x0)

    def test_rsub_rdiv(self):
        x0 = np.array([1.5, 2.5])
        check_grad(lambda t: (1.0 - t).sum() + (1.0 / t).sum(), x0)

    def test_unary_chain(self):
        rng = np.random.default_rng(2)
        x0 = rng.normal(size=6) * 0.5
        check_grad(
            lambda t: (ad.tanh(t) + ad.sin(t) * ad.cos(t) + ad.exp(t)).sum(), x0
        )

    def test_log_sqrt(self):
        x0 = np.array([0.5, 1.5, 4.0])
        check_grad(lambda t: (ad.log(t) + ad.sqrt(t)).sum(), x0)

    def test_cos_sin_fused(self):
        rng = np.random.default_rng(3)
        x0 = rng.normal(size=(2, 3))

        def build(t):
            c, s = ad.cos_sin(t)
            return (c * s).sum()

        check_grad(build, x0)

    def test_clips(self):
        x0 = np.array([-1.0, 0.5, 2.0])
        check_grad(lambda t: ad.clip_min(t, 0.0).sum(), x0)
        check_grad(lambda t: ad.clip_max(t, 1.0).sum(), x0)


class TestMatmulShapes:
    def test_2d_2d(self):
        rng = np.random.default_rng(4)
        x0 = rng.normal(size=(3, 4))
        const = rng.normal(size=(4, 2))
        check_grad(lambda t: (ad.matmul(t, const) ** 2).sum(), x0)

    def test_2d_1d_and_1d_2d(self):
        rng = np.random.default_rng(5)
        m = rng.normal(size=(3, 4))
        v0 = rng.normal(size=4)
        check_grad(lambda t: (ad.matmul(m, t) ** 2).sum(), v0)
        v1 = rng.normal(size=3)
        check_grad(lambda t: (ad.matmul(t, m) ** 2).sum(), v1)

    def test_both_tensor_operands(self):
        rng = np.random.default_rng(6)
        x0 = rng.normal(size=(2, 6))

        def build(t):
            a = t[np.array([0])]
            b = t[np.array([1])]
            return ad.matmul(a, b.T).sum()

        check_grad(build, x0)


class TestStructural:
    def test_getitem_int_rows(self):
        rng = np.random.default_rng(7)
        x0 = rng.normal(size=(5, 3))
        rows = np.array([0, 2, 2, 4])
        check_grad(lambda t: (t[rows] ** 2).sum(), x0)

    def test_getitem_scalar(self):
        x0 = np.array([1.0, 2.0, 3.0])
        t = ad.Tensor(x0)
        out = t[1] * 3.0
        out.backward()
        assert np.array_equal(t.grad, [0.0, 3.0, 0.0])

    def test_transpose_reshape(self):
        rng = np.random.default_rng(8)
        x0 = rng.normal(size=(2, 3))
        check_grad(lambda t: (t.T @ np.ones(2)).sum(), x0)
        check_grad(lambda t: (t.reshape((3, 2)) * np.ones((3, 2))).sum(), x0)

    def test_mean_axes(self):
        rng = np.random.default_rng(9)
        x0 = rng.normal(size=(4, 5))
        check_grad(lambda t: (t.mean(axis=0) ** 2).sum(), x0)
        check_grad(lambda t: (t.mean(axis=1) ** 2).sum(), x0)
        check_grad(lambda t: t.mean(), x0)

    def test_reused_node_accumulates(self):
        x0 = np.array([2.0])

        def build(t):
            y = t * 3.0
            return (y * y).sum()

        check_grad(build, x0)

    def test_backward_requires_scalar(self):
        t = ad.Tensor(np.ones(3))
        with pytest.raises(ValueError):
            (t * 2.0).backward()


class TestDispatch:
    def test_numpy_passthrough(self):
        x = np.array([1.0, 2.0])
        out = ad.tanh(ad.matmul(np.eye(2), x) + 0.0)
        assert isinstance(out, np.ndarray)
        assert np.allclose(out, np.tanh(x))

    def test_same_bits_both_modes(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(4, 3))
        w = rng.normal(size=(3, 3))

        def compute(wop):
            h = ad.tanh(ad.matmul(x, wop))
            c, s = ad.cos_sin(h)
            return ad.value((c.mean(axis=0) ** 2 + s.mean(axis=0) ** 2).sum())

        plain = compute(w)
        graph = compute(ad.Tensor(w))
        assert float(plain) == float(graph)
