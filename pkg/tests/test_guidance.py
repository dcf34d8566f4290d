import mpmath
import numpy as np
import pytest

from adsub.guidance import (
    GuidanceConfig,
    data_fidelity_step,
    guided_gradient,
    measurement_gradient,
    reverse_coefficients,
    reverse_step,
)
from adsub.measurement import (
    ActionSet,
    MeasurementModel,
    SparseMeasurement,
    acquire,
    apply_forward,
    build_action_space,
)
from adsub.prior import IsotropicGmm, tweedie_denoise

from conftest import random_gmm


def _setup(rng, K=3, shape=(4, 4), forward="identity", kind="pixel", n_act=5):
    space = build_action_space(kind, shape)
    model = MeasurementModel(forward, 0.0, space)
    prior = random_gmm(rng, K, space.size)
    acts = ActionSet(space, list(rng.choice(space.n_actions, n_act, replace=False)))
    y = acquire(model, rng.normal(size=space.size), acts, rng)
    return prior, model, acts, y


class TestReverseStep:
    def test_last_step_returns_estimate(self, sched, rng):
        x0 = rng.normal(size=6)
        np.testing.assert_array_equal(reverse_step(rng.normal(size=6), x0, 1, sched, rng.normal(size=6)), x0)

    def test_coefficients_extended_precision(self, sched, rng):
        mpmath.mp.dps = 40
        ab = [mpmath.mpf(1)]
        for b in sched.betas:
            ab.append(ab[-1] * (1 - mpmath.mpf(float(b))))
        for tau in rng.integers(2, 201, 10):
            tau = int(tau)
            b = mpmath.mpf(float(sched.betas[tau - 1]))
            c_x = mpmath.sqrt(1 - b) * (1 - ab[tau - 1]) / (1 - ab[tau])
            c_0 = mpmath.sqrt(ab[tau - 1]) * b / (1 - ab[tau])
            sig = mpmath.sqrt(b * (1 - ab[tau - 1]) / (1 - ab[tau]))
            got = reverse_coefficients(tau, sched)
            np.testing.assert_allclose(got, [float(c_x), float(c_0), float(sig)], rtol=1e-12)
            x, x0 = rng.normal(size=3), rng.normal(size=3)
            np.testing.assert_allclose(reverse_step(x, x0, tau, sched, np.zeros(3)),
                                       float(c_x) * x + float(c_0) * x0, rtol=1e-12)

    def test_zero_in_zero_out(self, sched):
        np.testing.assert_array_equal(reverse_step(np.zeros(4), np.zeros(4), 50, sched, np.zeros(4)), 0.0)


class TestGuidedGradient:
    def test_standard_normal_full_observation(self, sched, rng):
        d = 6
        space = build_action_space("pixel", (1, d))
        model = MeasurementModel("identity", 0.0, space)
        prior = IsotropicGmm(np.array([1.0]), np.zeros((1, d)), np.array([1.0]))
        acts = ActionSet(space, list(range(d)))
        y = acquire(model, rng.normal(size=d), acts, rng)
        x, tau = rng.normal(size=d), 70
        ab = sched.alpha_bar(tau)
        g = guided_gradient(prior, model, acts, y, x, tau, sched, GuidanceConfig())
        np.testing.assert_allclose(g, -2 * np.sqrt(ab) * (y.values - np.sqrt(ab) * x), rtol=1e-12)

    @pytest.mark.parametrize("forward,kind", [("identity", "pixel"), ("dft", "fourier-line")])
    def test_exact_matches_finite_difference(self, sched, rng, forward, kind):
        prior, model, acts, y = _setup(rng, forward=forward, kind=kind, n_act=2 if kind != "pixel" else 5)
        for tau in (10, 60, 150):
            x = rng.normal(size=16)
            exact = guided_gradient(prior, model, acts, y, x, tau, sched, GuidanceConfig())
            fd = guided_gradient(prior, model, acts, y, x, tau, sched, GuidanceConfig(mode="finite-difference-oracle"))
            np.testing.assert_allclose(exact, fd, rtol=1e-4, atol=1e-7 * np.abs(fd).max())

    def test_zero_residual(self, sched, rng):
        prior, model, acts, _ = _setup(rng)
        x, tau = rng.normal(size=16), 40
        pred = apply_forward(model, tweedie_denoise(prior, x, tau, sched))
        idx = acts.coords()
        y = SparseMeasurement(idx, pred[idx])
        np.testing.assert_allclose(guided_gradient(prior, model, acts, y, x, tau, sched, GuidanceConfig()), 0.0,
                                   atol=1e-14)

    def test_no_actions(self, sched, rng):
        prior, model, _, _ = _setup(rng)
        g = guided_gradient(prior, model, ActionSet(model.space), SparseMeasurement.empty(), rng.normal(size=16),
                            5, sched, GuidanceConfig())
        np.testing.assert_array_equal(g, 0.0)

    def test_identity_jacobian_mode(self, sched, rng):
        prior, model, acts, y = _setup(rng)
        x, tau = rng.normal(size=16), 30
        g0 = measurement_gradient(model, y, tweedie_denoise(prior, x, tau, sched))
        g = guided_gradient(prior, model, acts, y, x, tau, sched, GuidanceConfig(mode="identity-jacobian"))
        np.testing.assert_allclose(g, g0 / np.sqrt(sched.alpha_bar(tau)))

    def test_batched(self, sched, rng):
        prior, model, acts, y = _setup(rng)
        X = rng.normal(size=(3, 16))
        G = guided_gradient(prior, model, acts, y, X, 20, sched, GuidanceConfig())
        for i in range(3):
            np.testing.assert_allclose(G[i], guided_gradient(prior, model, acts, y, X[i], 20, sched,
                                                             GuidanceConfig()), rtol=1e-12)


class TestFidelityStep:
    def test_zero_zeta(self, rng):
        x = rng.normal(size=5)
        np.testing.assert_array_equal(data_fidelity_step(x, rng.normal(size=5), GuidanceConfig(zeta=0.0)), x)

    def test_zero_grad(self, rng):
        x = rng.normal(size=5)
        np.testing.assert_array_equal(data_fidelity_step(x, np.zeros(5), GuidanceConfig(zeta=3.0)), x)

    def test_unit_zeta(self, rng):
        x, g = rng.normal(size=5), rng.normal(size=5)
        np.testing.assert_allclose(data_fidelity_step(x, g, GuidanceConfig(zeta=1.0)), x - g)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            data_fidelity_step(np.zeros(3), np.zeros(4), GuidanceConfig())

    @pytest.mark.parametrize("kw", [{"zeta": -1.0}, {"zeta": float("nan")}, {"mode": "adam"}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            GuidanceConfig(**kw)
