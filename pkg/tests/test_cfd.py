import math

import numpy as np
import pytest

from protomil import autodiff as ad
from protomil.cfd import (
    FrequencySample,
    cfd_distance,
    chf,
    empirical_cf,
    mmd_distance,
)
from protomil.errors import EmptySetError
from protomil.linalg import finite_diff


def complex_cf(features, t):
    proj = np.asarray(features) @ np.asarray(t)
    return np.exp(1j * proj).mean()


class TestEmpiricalCf:
    def test_single_instance_has_unit_amplitude(self):
        rng = np.random.default_rng(0)
        z = rng.normal(size=(1, 5))
        for _ in range(5):
            t = rng.normal(size=5)
            cf = empirical_cf(z, t)
            assert abs(cf.amplitude - 1.0) < 1e-12

    def test_zero_frequency(self):
        rng = np.random.default_rng(1)
        cf = empirical_cf(rng.normal(size=(7, 3)), np.zeros(3))
        assert cf.amplitude == 1.0
        assert cf.phase == 0.0

    def test_symmetric_pair(self):
        # CF of {+z, -z} is the real number cos(t.z): phase 0 when it is
        # positive (pi when negative), amplitude |cos(t.z)| always
        rng = np.random.default_rng(2)
        z = rng.normal(size=5)
        t_pos = z * (0.5 / float(z @ z))
        cf = empirical_cf(np.vstack([z, -z]), t_pos)
        assert abs(cf.phase) < 1e-12
        for _ in range(10):
            t = rng.normal(size=5)
            cf = empirical_cf(np.vstack([z, -z]), t)
            oracle = complex_cf(np.vstack([z, -z]), t)
            assert abs(cf.amplitude - abs(math.cos(float(z @ t)))) < 1e-12
            assert abs(cf.amplitude - abs(oracle)) < 1e-12
            assert min(abs(cf.phase), math.pi - abs(cf.phase)) < 1e-12

    def test_amplitude_bounded(self):
        rng = np.random.default_rng(3)
        feats = rng.normal(size=(40, 4))
        for _ in range(20):
            cf = empirical_cf(feats, rng.normal(size=4))
            assert cf.amplitude <= 1.0 + 1e-12
            assert -math.pi < cf.phase <= math.pi

    def test_empty_set(self):
        with pytest.raises(EmptySetError):
            empirical_cf(np.zeros((0, 3)), np.zeros(3))


class TestChf:
    def test_identical_sets(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(6, 3))
        for _ in range(5):
            assert chf(z, z, rng.normal(size=3)) < 1e-15

    def test_maximal_phase_gap(self):
        # singletons with unit amplitudes and a phase gap of pi
        za = np.array([[1.0]])
        zb = np.array([[0.0]])
        t = np.array([math.pi])
        assert abs(chf(za, zb, t) - 4.0) < 1e-12
        oracle = abs(complex_cf(za, t) - complex_cf(zb, t)) ** 2
        assert abs(chf(za, zb, t) - oracle) < 1e-12

    def test_decomposition_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            za = rng.normal(size=(int(rng.integers(1, 9)), 4))
            zb = rng.normal(size=(int(rng.integers(1, 9)), 4))
            t = rng.normal(size=4)
            two_term = chf(za, zb, t)
            modulus = abs(complex_cf(za, t) - complex_cf(zb, t)) ** 2
            assert abs(two_term - modulus) <= 1e-12

    def test_symmetry_bitwise(self):
        rng = np.random.default_rng(6)
        za = rng.normal(size=(5, 3))
        zb = rng.normal(size=(8, 3))
        t = rng.normal(size=3)
        assert chf(za, zb, t) == chf(zb, za, t)


class TestCfdDistance:
    def test_identical_sets_near_zero(self):
        rng = np.random.default_rng(7)
        z = rng.normal(size=(10, 4))
        freqs = FrequencySample.draw(4, 64, 1.0, seed=3)
        assert cfd_distance(z, z, freqs) <= 1e-9

    def test_bounded_by_two(self):
        rng = np.random.default_rng(8)
        freqs = FrequencySample.draw(3, 128, 1.5, seed=4)
        for _ in range(10):
            za = rng.normal(size=(6, 3)) * 10
            zb = rng.normal(size=(4, 3)) * -10
            d = cfd_distance(za, zb, freqs)
            assert 0.0 <= d <= 2.0

    def test_symmetry_bitwise(self):
        rng = np.random.default_rng(9)
        za = rng.normal(size=(6, 3))
        zb = rng.normal(size=(9, 3))
        freqs = FrequencySample.draw(3, 64, 1.0, seed=5)
        assert cfd_distance(za, zb, freqs) == cfd_distance(zb, za, freqs)

    def test_point_masses_against_quadrature(self):
        # 1-D two-point sets: dense trapezoid quadrature over the Gaussian
        # frequency law is the oracle for the Monte-Carlo estimate
        sigma = 1.0
        far = (np.array([[0.0]]), np.array([[3.0]]))
        near = (np.array([[0.0]]), np.array([[0.0]]))
        freqs = FrequencySample.draw(1, 20000, sigma, seed=6)

        def quadrature(za, zb):
            ts = np.linspace(-8 * sigma, 8 * sigma, 40001)
            vals = np.array([math.sqrt(chf(za, zb, np.array([t]))) for t in ts])
            dens = np.exp(-0.5 * (ts / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
            return np.trapz(vals * dens, ts)

        d_far = cfd_distance(*far, freqs)
        d_near = cfd_distance(*near, freqs)
        assert d_far > d_near
        assert abs(d_far - quadrature(*far)) < 0.02 * quadrature(*far)
        assert d_near < 1e-9

    def test_empty_set(self):
        freqs = FrequencySample.draw(2, 8, 1.0, seed=0)
        with pytest.raises(EmptySetError):
            cfd_distance(np.zeros((0, 2)), np.ones((3, 2)), freqs)

    def test_gradient_wrt_instances(self):
        rng = np.random.default_rng(10)
        za0 = rng.normal(size=(4, 3))
        zb = rng.normal(size=(5, 3))
        freqs = FrequencySample.draw(3, 32, 1.0, seed=7)

        t = ad.Tensor(za0)
        out = cfd_distance(t, zb, freqs)
        out.backward()
        for i in range(za0.size):
            numeric = finite_diff(
                lambda v: cfd_distance(v.reshape(za0.shape), zb, freqs),
                za0.ravel(), i, 1e-6,
            )
            analytic = t.grad.ravel()[i]
            denom = max(1.0, abs(analytic), abs(numeric))
            assert abs(analytic - numeric) / denom <= 1e-5


class TestMmd:
    def test_identical_sets_near_zero(self):
        rng = np.random.default_rng(11)
        z = rng.normal(size=(8, 3))
        assert mmd_distance(z, z, 1.0) <= 1e-9

    def test_two_singletons_closed_form(self):
        x = np.array([[0.0, 0.0]])
        y = np.array([[1.0, 2.0]])
        bw = 1.3
        expected_sq = 2.0 - 2.0 * math.exp(-5.0 / (2.0 * bw * bw))
        assert abs(mmd_distance(x, y, bw) ** 2 - expected_sq) < 1e-9

    def test_bochner_correspondence_small(self):
        # frequency-averaged discrepancy approximates the squared MMD with
        # bandwidth 1/sigma_t; a small-T sanity version of the acceptance check
        rng = np.random.default_rng(12)
        za = rng.normal(size=(12, 3))
        zb = rng.normal(0.8, 1.0, size=(9, 3))
        sigma_t = 0.7
        freqs = FrequencySample.draw(3, 40000, sigma_t, seed=8)
        mean_chf = np.mean([
            chf(za, zb, t) for t in freqs.frequencies[:4000]
        ])
        mmd_sq = mmd_distance(za, zb, 1.0 / sigma_t) ** 2
        assert abs(mean_chf - mmd_sq) <= 0.05 * mmd_sq

    def test_gradient_wrt_instances(self):
        rng = np.random.default_rng(13)
        za0 = rng.normal(size=(3, 2))
        zb = rng.normal(size=(4, 2))
        t = ad.Tensor(za0)
        out = mmd_distance(t, zb, 0.9)
        out.backward()
        for i in range(za0.size):
            numeric = finite_diff(
                lambda v: mmd_distance(v.reshape(za0.shape), zb, 0.9),
                za0.ravel(), i, 1e-6,
            )
            analytic = t.grad.ravel()[i]
            denom = max(1.0, abs(analytic), abs(numeric))
            assert abs(analytic - numeric) / denom <= 1e-5

    def test_bandwidth_validation(self):
        with pytest.raises(ValueError):
            mmd_distance(np.ones((2, 2)), np.ones((2, 2)), 0.0)


class TestFrequencySample:
    def test_reproducible(self):
        a = FrequencySample.draw(4, 16, 1.0, seed=5)
        b = FrequencySample.draw(4, 16, 1.0, seed=5)
        assert np.array_equal(a.frequencies, b.frequencies)

    def test_scale(self):
        f = FrequencySample.draw(8, 5000, 2.0, seed=6)
        assert abs(f.frequencies.std() - 2.0) < 0.05

    def test_validation(self):
        with pytest.raises(ValueError):
            FrequencySample.draw(4, 0, 1.0, seed=0)
        with pytest.raises(ValueError):
            FrequencySample.draw(4, 8, -1.0, seed=0)
