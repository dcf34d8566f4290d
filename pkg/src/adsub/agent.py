"""Active acquisition interleaved with a single guided reverse diffusion."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from adsub.guidance import GuidanceConfig, data_fidelity_step, guided_gradient, reverse_step
from adsub.measurement import (
    ActionSet,
    MeasurementModel,
    SparseMeasurement,
    acquire,
    apply_forward,
    mask_and_zero_fill,
)
from adsub.policy import (
    MeasurementParticles,
    PolicyConfig,
    action_scores,
    baseline_next_action,
    select_max_entropy,
)
from adsub.prior import IsotropicGmm, tweedie_denoise
from adsub.schedule import NoiseSchedule, build_schedule

POLICY_KINDS = ("ads", "random", "data-variance")

# stream tags for keyed generators
_INIT, _STEP, _MEAS, _POLICY = 0, 1, 2, 3


class NonFiniteParticleError(RuntimeError):
    def __init__(self, tau: int, particle: int):
        super().__init__(f"non-finite particle {particle} at diffusion step {tau}")
        self.tau = tau
        self.particle = particle


@dataclass(frozen=True)
class AgentConfig:
    """Run parameters.

    ``schedule_steps`` are step indices in ``[0, T)``: index ``k`` is the
    iteration that produces ``x_k`` (i.e. runs at ``tau = k + 1``), so
    acquisitions happen after the particle update of that iteration.
    """

    T: int = 200
    n_particles: int = 16
    schedule_steps: tuple[int, ...] = ()
    zeta: float = 0.5
    sigma_y: float = 1.0
    init_actions: tuple[int, ...] = ()
    policy: str = "ads"
    guidance_mode: str = "exact-jacobian"
    exponent_sign: str = "positive"
    seed: int = 0
    schedule_kind: str = "linear"
    beta_min: float = 1e-4
    beta_max: float = 0.02
    check_every: int = 50

    def __post_init__(self):
        object.__setattr__(self, "schedule_steps", tuple(sorted(int(s) for s in self.schedule_steps)))
        object.__setattr__(self, "init_actions", tuple(int(a) for a in self.init_actions))
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.n_particles < 1:
            raise ValueError("need at least one particle")
        if len(set(self.schedule_steps)) != len(self.schedule_steps):
            raise ValueError("schedule steps must be distinct")
        if any(not 0 <= s < self.T for s in self.schedule_steps):
            raise ValueError(f"schedule steps must lie in [0, {self.T})")
        if len(set(self.init_actions)) != len(self.init_actions):
            raise ValueError("initial actions must be distinct")
        if self.policy not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICY_KINDS}")
        if self.policy == "ads" and self.schedule_steps and self.n_particles < 2:
            raise ValueError("max-entropy scoring needs at least two particles")
        GuidanceConfig(self.zeta, self.guidance_mode)
        PolicyConfig(self.sigma_y, self.exponent_sign)

    @property
    def guidance(self) -> GuidanceConfig:
        return GuidanceConfig(self.zeta, self.guidance_mode)

    @property
    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(self.sigma_y, self.exponent_sign)

    def build_schedule(self) -> NoiseSchedule:
        return build_schedule(self.schedule_kind, self.T, self.beta_min, self.beta_max)

    def validate_for(self, n_actions: int) -> None:
        if len(self.init_actions) + len(self.schedule_steps) > n_actions:
            raise ValueError(
                f"{len(self.init_actions)} initial + {len(self.schedule_steps)} scheduled "
                f"acquisitions exceed the {n_actions} available actions")
        if any(not 0 <= a < n_actions for a in self.init_actions):
            raise ValueError("initial action outside the action space")


def evenly_spaced_steps(n: int, lo: int, hi: int) -> tuple[int, ...]:
    """``n`` distinct integer steps evenly partitioning ``[lo, hi]``."""
    if n <= 0:
        return ()
    if hi - lo + 1 < n:
        raise ValueError(f"cannot place {n} distinct steps in [{lo}, {hi}]")
    if n == 1:
        return (int(round((lo + hi) / 2)),)
    steps = np.round(np.linspace(lo, hi, n)).astype(int)
    return tuple(int(s) for s in steps)


@dataclass
class AcquisitionRecord:
    step: int
    action: int
    scores: np.ndarray
    values: np.ndarray


@dataclass
class AcquisitionTrace:
    records: list[AcquisitionRecord]
    samples: np.ndarray
    actions: list[int]
    mask: np.ndarray
    action_mask: np.ndarray
    measurements: SparseMeasurement
    timings: dict = field(default_factory=dict)
    policy_evaluations: int = 0

    @property
    def posterior_mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)


def keyed_rng(seed: int, stream: int, tag: int, counter: int = 0) -> np.random.Generator:
    """Generator keyed by ``(seed, stream, tag, counter)``; order independent."""
    return np.random.default_rng([int(seed), int(stream), int(tag), int(counter)])


def _guard(X: np.ndarray, tau: int) -> None:
    bad = ~np.all(np.isfinite(X), axis=1)
    if np.any(bad):
        raise NonFiniteParticleError(tau, int(np.flatnonzero(bad)[0]))


def _run(cfg: AgentConfig, prior: IsotropicGmm, model: MeasurementModel, x_true,
         initial_actions, schedule_steps, stream: int, weights=None) -> AcquisitionTrace:
    space = model.space
    x_true = np.asarray(x_true, dtype=np.float64).ravel()
    if x_true.size != model.data_dim or prior.d != model.data_dim:
        raise ValueError("x_true, prior and measurement model disagree on the data dimension")
    if len(initial_actions) + len(schedule_steps) > space.n_actions:
        raise ValueError("requested acquisitions exceed the action space")

    sched = cfg.build_schedule()
    gcfg, pcfg = cfg.guidance, cfg.policy_config
    acquire_at = set(schedule_steps)
    timings = {"denoise": 0.0, "guidance": 0.0, "policy": 0.0, "acquire": 0.0}

    actions = ActionSet(space, list(initial_actions))
    y_t = SparseMeasurement.empty(model.is_complex)
    if len(actions):
        y_t = acquire(model, x_true, actions, keyed_rng(cfg.seed, stream, _MEAS, 0))

    X = keyed_rng(cfg.seed, stream, _INIT).standard_normal((cfg.n_particles, model.data_dim))
    records: list[AcquisitionRecord] = []
    n_policy = 0
    for tau in range(sched.T, 0, -1):
        t0 = time.perf_counter()
        x0 = tweedie_denoise(prior, X, tau, sched)
        z = keyed_rng(cfg.seed, stream, _STEP, tau).standard_normal(X.shape)
        X_prime = reverse_step(X, x0, tau, sched, z)
        t1 = time.perf_counter()
        if len(actions) and gcfg.zeta > 0:
            g = guided_gradient(prior, model, actions, y_t, X, tau, sched, gcfg, x0_hat=x0)
            X = data_fidelity_step(X_prime, g, gcfg)
        else:
            X = X_prime
        t2 = time.perf_counter()
        timings["denoise"] += t1 - t0
        timings["guidance"] += t2 - t1

        if tau == 1 or (sched.T - tau + 1) % cfg.check_every == 0:
            _guard(X, tau)

        if tau - 1 in acquire_at:
            t3 = time.perf_counter()
            remaining = actions.remaining()
            full_scores = np.full(space.n_actions, np.nan)
            if cfg.policy == "ads":
                particles = MeasurementParticles(apply_forward(model, x0))
                scores = action_scores(particles, space, remaining, pcfg)
                a = select_max_entropy(scores, remaining, pcfg)
                full_scores[remaining] = scores
                n_policy += 1
            else:
                a = baseline_next_action(cfg.policy, remaining, weights,
                                         keyed_rng(cfg.seed, stream, _POLICY, tau))
            t4 = time.perf_counter()
            actions.add(a)
            new = acquire(model, x_true, [a], keyed_rng(cfg.seed, stream, _MEAS, tau))
            y_t = y_t.concat(new)
            records.append(AcquisitionRecord(tau - 1, a, full_scores, new.values))
            timings["policy"] += t4 - t3
            timings["acquire"] += time.perf_counter() - t4

    m, _ = mask_and_zero_fill(actions, y_t)
    return AcquisitionTrace(
        records=records,
        samples=X,
        actions=list(actions.actions),
        mask=m,
        action_mask=space.inclusion(actions.actions),
        measurements=y_t,
        timings=timings,
        policy_evaluations=n_policy,
    )


def run_ads(cfg: AgentConfig, prior: IsotropicGmm, model: MeasurementModel, x_true,
            stream: int = 0, weights=None) -> AcquisitionTrace:
    """Acquire at ``cfg.schedule_steps`` while denoising; return the trace.

    ``stream`` separates random streams of different targets under one seed.
    ``weights`` are per-action masses, only used by the ``data-variance`` policy.
    """
    cfg.validate_for(model.space.n_actions)
    return _run(cfg, prior, model, x_true, cfg.init_actions, cfg.schedule_steps, stream, weights)


def run_fixed_mask(cfg: AgentConfig, prior: IsotropicGmm, model: MeasurementModel, x_true,
                   mask_actions, stream: int = 0) -> AcquisitionTrace:
    """Guide every step with a design fixed before the chain starts."""
    ids = mask_actions.actions if isinstance(mask_actions, ActionSet) else list(mask_actions)
    if not ids:
        raise ValueError("fixed mask must contain at least one action")
    return _run(cfg, prior, model, x_true, ids, (), stream)
