"""Discrete variance-preserving noise schedules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SCHEDULE_KINDS = ("linear", "cosine")


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed coefficients of a discrete VP diffusion.

    ``alpha_bars`` has length ``T + 1`` with ``alpha_bars[0] == 1`` so that
    step ``tau`` reads ``alpha_bars[tau]`` and ``alpha_bars[tau - 1]`` without
    special cases. ``betas``, ``alphas`` and ``posterior_sigmas`` are indexed
    from 0, i.e. step ``tau`` lives at position ``tau - 1``; use the accessor
    methods to avoid off-by-one mistakes.
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)
    posterior_sigmas: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if not np.all((betas > 0) & (betas < 1)):
            raise ValueError("every beta must lie in (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.empty(betas.size + 1)
        alpha_bars[0] = 1.0
        # sequential product so alpha_bars[t] == alpha_bars[t-1] * alphas[t-1] bit for bit
        for i, a in enumerate(alphas):
            alpha_bars[i + 1] = alpha_bars[i] * a
        var = betas * (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:])
        for name, arr in (("betas", betas), ("alphas", alphas),
                          ("alpha_bars", alpha_bars), ("posterior_sigmas", np.sqrt(var))):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    def _check(self, tau: int) -> int:
        tau = int(tau)
        if not 1 <= tau <= self.T:
            raise IndexError(f"step {tau} outside [1, {self.T}]")
        return tau

    def beta(self, tau: int) -> float:
        return float(self.betas[self._check(tau) - 1])

    def alpha(self, tau: int) -> float:
        return float(self.alphas[self._check(tau) - 1])

    def alpha_bar(self, tau: int) -> float:
        """Cumulative product at ``tau``; ``tau = 0`` is allowed and returns 1."""
        tau = int(tau)
        if not 0 <= tau <= self.T:
            raise IndexError(f"step {tau} outside [0, {self.T}]")
        return float(self.alpha_bars[tau])

    def posterior_sigma(self, tau: int) -> float:
        return float(self.posterior_sigmas[self._check(tau) - 1])


def build_linear_schedule(T: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not 0 < beta_min <= beta_max < 1:
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
    return NoiseSchedule(np.linspace(beta_min, beta_max, int(T)))


def build_cosine_schedule(T: int, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    t = np.arange(T + 1) / T
    f = np.cos((t + s) / (1 + s) * np.pi / 2) ** 2
    betas = np.clip(1 - f[1:] / f[:-1], 1e-8, max_beta)
    return NoiseSchedule(betas)


def build_schedule(kind: str = "linear", T: int = 1000, beta_min: float = 1e-4,
                   beta_max: float = 0.02) -> NoiseSchedule:
    if kind == "linear":
        return build_linear_schedule(T, beta_min, beta_max)
    if kind == "cosine":
        return build_cosine_schedule(T)
    raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")


def forward_noise(x0, tau: int, sched: NoiseSchedule, noise) -> np.ndarray:
    """Sample ``q(x_tau | x_0)`` given a standard normal draw ``noise``."""
    ab = sched.alpha_bar(sched._check(tau))
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - ab) * np.asarray(noise)
