"""Ancestral reverse step and DPS data-fidelity correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from adsub.measurement import MeasurementModel, SparseMeasurement, apply_adjoint, apply_forward
from adsub.prior import IsotropicGmm, tweedie_denoise, tweedie_jacobian_apply
from adsub.schedule import NoiseSchedule

GUIDANCE_MODES = ("exact-jacobian", "identity-jacobian", "finite-difference-oracle")


@dataclass(frozen=True)
class GuidanceConfig:
    zeta: float = 1.0
    mode: str = "exact-jacobian"

    def __post_init__(self):
        if not np.isfinite(self.zeta) or self.zeta < 0:
            raise ValueError(f"zeta must be finite and non-negative, got {self.zeta}")
        if self.mode not in GUIDANCE_MODES:
            raise ValueError(f"unknown guidance mode {self.mode!r}; expected one of {GUIDANCE_MODES}")


def reverse_coefficients(tau: int, sched: NoiseSchedule) -> tuple[float, float, float]:
    """Weights on ``x_tau``, on ``x0_hat`` and on the noise for one ancestral step."""
    ab, ab_prev = sched.alpha_bar(tau), sched.alpha_bar(tau - 1)
    c_x = np.sqrt(sched.alpha(tau)) * (1.0 - ab_prev) / (1.0 - ab)
    c_0 = np.sqrt(ab_prev) * sched.beta(tau) / (1.0 - ab)
    return float(c_x), float(c_0), sched.posterior_sigma(tau)


def reverse_step(x_tau, x0_hat, tau: int, sched: NoiseSchedule, z) -> np.ndarray:
    """Sample ``x'_{tau-1}`` from the Gaussian posterior ``q(x_{tau-1} | x_tau, x0_hat)``."""
    if int(tau) == 1:
        # coefficients are exactly (0, 1, 0) here; the float expression is not
        return np.array(x0_hat, dtype=np.float64, copy=True)
    c_x, c_0, sig = reverse_coefficients(tau, sched)
    return c_x * np.asarray(x_tau) + c_0 * np.asarray(x0_hat) + sig * np.asarray(z)


def _residual_loss(model, y_t, x0):
    r = y_t.values - apply_forward(model, x0)[..., y_t.indices]
    return np.sum(np.abs(r) ** 2, axis=-1)


def measurement_gradient(model: MeasurementModel, y_t: SparseMeasurement, x0_hat) -> np.ndarray:
    """Gradient of ``||y_t - U f(x0)||^2`` with respect to ``x0``."""
    x0 = np.asarray(x0_hat, dtype=np.float64)
    pred = apply_forward(model, x0)
    r = y_t.values - pred[..., y_t.indices]
    zf = np.zeros(pred.shape, dtype=pred.dtype)
    zf[..., y_t.indices] = r
    return -2.0 * apply_adjoint(model, zf)


def guided_gradient(prior: IsotropicGmm, model: MeasurementModel, actions, y_t: SparseMeasurement,
                    x_tau, tau: int, sched: NoiseSchedule, cfg: GuidanceConfig,
                    x0_hat=None) -> np.ndarray:
    """Gradient of the squared measurement residual with respect to ``x_tau``.

    ``x0_hat`` may be passed when the Tweedie estimate is already at hand.
    """
    x = np.asarray(x_tau, dtype=np.float64)
    if len(actions) == 0 or len(y_t) == 0:
        return np.zeros_like(x)
    if cfg.mode == "finite-difference-oracle":
        return _fd_gradient(prior, model, y_t, x, tau, sched)
    if x0_hat is None:
        x0_hat = tweedie_denoise(prior, x, tau, sched)
    g0 = measurement_gradient(model, y_t, x0_hat)
    if cfg.mode == "identity-jacobian":
        return g0 / np.sqrt(sched.alpha_bar(tau))
    return tweedie_jacobian_apply(prior, x, tau, sched, g0)


def _fd_gradient(prior, model, y_t, x, tau, sched, h: float = 1e-5) -> np.ndarray:
    xb = np.atleast_2d(x)
    out = np.empty_like(xb)
    for n, row in enumerate(xb):
        for k in range(row.size):
            e = np.zeros_like(row)
            e[k] = h
            lp = _residual_loss(model, y_t, tweedie_denoise(prior, row + e, tau, sched))
            lm = _residual_loss(model, y_t, tweedie_denoise(prior, row - e, tau, sched))
            out[n, k] = (lp - lm) / (2 * h)
    return out[0] if x.ndim == 1 else out


def data_fidelity_step(x_prime, grad, cfg: GuidanceConfig) -> np.ndarray:
    x_prime, grad = np.asarray(x_prime), np.asarray(grad)
    if x_prime.shape != grad.shape:
        raise ValueError(f"shape mismatch {x_prime.shape} vs {grad.shape}")
    return x_prime - cfg.zeta * grad
