import mpmath
import numpy as np
import pytest

from adsub.schedule import (
    NoiseSchedule,
    build_cosine_schedule,
    build_linear_schedule,
    build_schedule,
    forward_noise,
)


class TestBuildSchedule:
    def test_single_step_identities(self):
        s = build_linear_schedule(1, 0.5, 0.5)
        np.testing.assert_array_equal(s.betas, [0.5])
        np.testing.assert_array_equal(s.alpha_bars, [1.0, 0.5])
        assert s.posterior_sigma(1) == 0.0

    def test_two_step_hand_arithmetic(self):
        s = build_linear_schedule(2, 0.1, 0.3)
        assert s.alpha_bar(2) == pytest.approx(0.63, abs=1e-15)
        assert s.posterior_sigma(2) ** 2 == pytest.approx(0.3 * 0.1 / 0.37, rel=1e-14)

    def test_standard_schedule_against_extended_precision(self):
        s = build_linear_schedule(1000, 1e-4, 0.02)
        mpmath.mp.dps = 50
        prod = mpmath.mpf(1)
        for k in range(1000):
            beta = mpmath.mpf(1e-4) + (mpmath.mpf(0.02) - mpmath.mpf(1e-4)) * k / 999
            prod *= 1 - beta
        assert s.alpha_bar(1000) == pytest.approx(float(prod), rel=1e-10)
        assert s.alpha_bar(1000) == pytest.approx(4.04e-5, rel=1e-2)

    def test_alpha_bar_zero_is_one(self, sched):
        assert sched.alpha_bar(0) == 1.0

    def test_monotone_decreasing(self, sched):
        assert np.all(np.diff(sched.alpha_bars) < 0)

    def test_posterior_sigma_formula(self, sched):
        for tau in (2, 50, 200):
            b, ab, abp = sched.beta(tau), sched.alpha_bar(tau), sched.alpha_bar(tau - 1)
            assert sched.posterior_sigma(tau) == pytest.approx(np.sqrt(b * (1 - abp) / (1 - ab)), rel=1e-14)

    def test_arrays_read_only(self, sched):
        with pytest.raises(ValueError):
            sched.alpha_bars[1] = 0.3

    @pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.3, 0.2), (10, 1e-4, 1.0)])
    def test_invalid_parameters(self, args):
        with pytest.raises(ValueError):
            build_linear_schedule(*args)

    def test_bad_betas_rejected(self):
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.1, 1.2]))

    def test_out_of_range_step(self, sched):
        with pytest.raises(IndexError):
            sched.beta(0)
        with pytest.raises(IndexError):
            sched.alpha_bar(201)

    def test_cosine_kind(self):
        s = build_schedule("cosine", 100)
        assert s.T == 100
        assert 0 < s.alpha_bar(100) < 1e-3
        np.testing.assert_array_equal(s.betas, build_cosine_schedule(100).betas)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            build_schedule("quadratic", 10)


class TestForwardNoise:
    def test_zero_noise(self, sched):
        x0 = np.array([1.0, -2.0, 3.0])
        np.testing.assert_allclose(forward_noise(x0, 37, sched, np.zeros(3)), np.sqrt(sched.alpha_bar(37)) * x0)

    def test_identity_limit(self):
        s = build_linear_schedule(10, 1e-10, 1e-9)
        x0 = np.array([0.3, 0.7])
        np.testing.assert_allclose(forward_noise(x0, 1, s, np.ones(2)), x0, atol=1e-4)

    def test_monte_carlo_moments(self, sched, rng):
        tau, x0, n = 90, 0.8, 100_000
        x = forward_noise(np.full(n, x0), tau, sched, rng.standard_normal(n))
        ab = sched.alpha_bar(tau)
        var = 1 - ab
        assert abs(x.mean() - np.sqrt(ab) * x0) < 3 * np.sqrt(var / n)
        se_var = var * np.sqrt(2 / (n - 1))
        assert abs(x.var(ddof=1) - var) < 3 * se_var
