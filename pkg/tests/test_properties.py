"""Property-based checks on invariances that hold for any input."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adsub.measurement import build_action_space
from adsub.metrics import mae, mask_distribution_entropy, psnr, ssim
from adsub.policy import MeasurementParticles, PolicyConfig, action_scores, select_max_entropy
from adsub.prior import IsotropicGmm, tweedie_denoise
from adsub.schedule import build_linear_schedule

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
unit = st.floats(0, 1, allow_nan=False, allow_infinity=False)
SETTINGS = settings(max_examples=60, deadline=None)


def particles(n_p, d):
    return arrays(np.float64, (n_p, d), elements=finite)


class TestPolicyProperties:
    @SETTINGS
    @given(particles(4, 16), arrays(np.float64, 16, elements=finite))
    def test_scores_invariant_to_common_shift(self, y, shift):
        space = build_action_space("pixel", (4, 4))
        rem = list(range(16))
        a = action_scores(MeasurementParticles(y), space, rem)
        b = action_scores(MeasurementParticles(y + shift), space, rem)
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9)

    @SETTINGS
    @given(particles(5, 16), st.permutations(range(5)))
    def test_scores_invariant_to_particle_order(self, y, perm):
        space = build_action_space("row-line", (4, 4))
        rem = [0, 2, 3]
        a = action_scores(MeasurementParticles(y), space, rem)
        b = action_scores(MeasurementParticles(y[list(perm)]), space, rem)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)

    @SETTINGS
    @given(particles(3, 16), st.sampled_from(["positive", "hershey-negative"]))
    def test_selection_is_a_remaining_action(self, y, sign):
        space = build_action_space("pixel", (4, 4))
        rem = [1, 5, 9, 14]
        cfg = PolicyConfig(exponent_sign=sign)
        pick = select_max_entropy(action_scores(MeasurementParticles(y), space, rem, cfg), rem, cfg)
        assert pick in rem

    @SETTINGS
    @given(particles(4, 16))
    def test_scores_at_least_identical_particle_floor(self, y):
        # identical particles give zero distances; any spread can only raise a positive-sign score
        space = build_action_space("pixel", (4, 4))
        rem = list(range(16))
        flat = action_scores(MeasurementParticles(np.zeros_like(y)), space, rem)
        spread = action_scores(MeasurementParticles(y), space, rem)
        assert np.all(spread >= flat - 1e-12)


class TestMetricProperties:
    @SETTINGS
    @given(arrays(np.float64, (6, 6), elements=unit), arrays(np.float64, (6, 6), elements=unit))
    def test_mae_symmetric_and_bounded(self, a, b):
        assert mae(a, b) == mae(b, a)
        assert 0.0 <= mae(a, b) <= 1.0

    @SETTINGS
    @given(arrays(np.float64, (6, 6), elements=unit))
    def test_identity_is_perfect(self, a):
        assert mae(a, a) == 0.0
        assert psnr(a, a) == float("inf")
        assert abs(ssim(a, a) - 1.0) < 1e-12

    @SETTINGS
    @given(arrays(np.float64, (6, 6), elements=unit), arrays(np.float64, (6, 6), elements=unit))
    def test_ssim_symmetric_and_at_most_one(self, a, b):
        s = ssim(a, b)
        assert abs(s - ssim(b, a)) < 1e-12
        assert s <= 1.0 + 1e-12

    @SETTINGS
    @given(arrays(np.bool_, (7, 10)))
    def test_mask_entropy_in_unit_interval(self, masks):
        p, h = mask_distribution_entropy(masks)
        assert np.all((p >= 0) & (p <= 1))
        assert 0.0 <= h <= 1.0


class TestPriorProperties:
    sched = build_linear_schedule(200, 5e-4, 0.1)

    @SETTINGS
    @given(arrays(np.float64, 3, elements=finite), st.integers(1, 199), finite)
    def test_denoiser_equivariant_to_translation(self, x, tau, c):
        # shifting every mean by c and x_tau by sqrt(alpha_bar) c shifts the posterior mean by c
        prior = IsotropicGmm(np.array([0.3, 0.7]), np.array([[0.0, 1.0, -1.0], [2.0, 0.0, 1.0]]),
                             np.array([0.2, 0.5]))
        moved = IsotropicGmm(prior.weights, prior.means + c, prior.variances)
        ab = self.sched.alpha_bar(tau)
        a = tweedie_denoise(prior, x, tau, self.sched)
        b = tweedie_denoise(moved, x + np.sqrt(ab) * c, tau, self.sched)
        np.testing.assert_allclose(b, a + c, atol=1e-7)
