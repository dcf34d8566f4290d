"""Maximum-entropy action selection and the fixed-design baselines.

The measurement posterior is modelled as an equal-weight mixture of
isotropic Gaussians of width ``sigma_y`` centred on the simulated particle
measurements. Its entropy is approximated by the pairwise log-sum-exp
estimator, and because the measurement operator only subsamples coordinates,
the estimator for a candidate action only involves that action's
coordinates. ``action_scores`` therefore scores every remaining action from
one pass over particle pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from adsub.measurement import ActionSpace

logger = logging.getLogger(__name__)

EXPONENT_SIGNS = ("positive", "hershey-negative")
BASELINES = ("random", "data-variance")


@dataclass(frozen=True)
class PolicyConfig:
    sigma_y: float = 1.0
    exponent_sign: str = "positive"
    tie_break: str = "lowest-index"

    def __post_init__(self):
        if not self.sigma_y > 0:
            raise ValueError(f"sigma_y must be positive, got {self.sigma_y}")
        if self.exponent_sign not in EXPONENT_SIGNS:
            raise ValueError(f"unknown exponent sign {self.exponent_sign!r}")
        if self.tie_break != "lowest-index":
            raise ValueError(f"unsupported tie break {self.tie_break!r}")


@dataclass(frozen=True)
class MeasurementParticles:
    """Simulated full measurements, one row per particle (complex allowed)."""

    y_hat: np.ndarray

    def __post_init__(self):
        y = np.atleast_2d(np.asarray(self.y_hat))
        object.__setattr__(self, "y_hat", y)

    @property
    def n_particles(self) -> int:
        return int(self.y_hat.shape[0])

    def real_components(self) -> np.ndarray:
        """``(N, M')`` real view: complex coordinates contribute two columns."""
        if np.iscomplexobj(self.y_hat):
            return np.stack([self.y_hat.real, self.y_hat.imag], axis=-1).reshape(self.n_particles, -1)
        return self.y_hat.astype(np.float64)


def entropy_estimate(p: MeasurementParticles, restrict=None, cfg: PolicyConfig = PolicyConfig()) -> float:
    """Pairwise entropy estimate of the particle mixture, additive constant dropped.

    Computed pair by pair over the restricted coordinates, independently of
    ``action_scores``; this is the reference the fast path is checked against.
    """
    n = p.n_particles
    if n < 2:
        raise ValueError("need at least two particles")
    y = p.y_hat if restrict is None else p.y_hat[:, np.asarray(list(restrict), dtype=np.int64)]
    logw = -np.log(n)
    total = 0.0
    for i in range(n):
        dist = np.array([np.sum(np.abs(y[i] - y[j]) ** 2) for j in range(n)])
        e = dist / (2.0 * cfg.sigma_y ** 2)
        if cfg.exponent_sign == "positive":
            total += logsumexp(e + logw)
        else:
            total -= logsumexp(-e + logw)
    return float(total / n)


def pairwise_action_distances(p: MeasurementParticles, space: ActionSpace, remaining) -> np.ndarray:
    """Squared particle differences summed per action -> ``(n_pairs, n_remaining)``.

    Pairs are the upper triangle ``i < j`` in ``np.triu_indices`` order.
    """
    n = p.n_particles
    iu, ju = np.triu_indices(n, k=1)
    groups = [space.groups[a] for a in remaining]
    perm = np.concatenate(groups)
    offsets = np.concatenate([[0], np.cumsum([g.size for g in groups])[:-1]])
    y = p.y_hat[:, perm]
    diff = y[iu] - y[ju]
    sq = diff.real ** 2 + diff.imag ** 2 if np.iscomplexobj(diff) else diff * diff
    return np.add.reduceat(sq, offsets, axis=1)


def action_scores(p: MeasurementParticles, space: ActionSpace, remaining, cfg: PolicyConfig = PolicyConfig()) -> np.ndarray:
    """Score each remaining action; higher means more particle disagreement."""
    remaining = list(remaining)
    if not remaining:
        raise ValueError("no remaining actions to score")
    n = p.n_particles
    if n < 2:
        raise ValueError("need at least two particles")
    pair_d = pairwise_action_distances(p, space, remaining)
    iu, ju = np.triu_indices(n, k=1)
    D = np.zeros((n, n, len(remaining)))
    D[iu, ju] = pair_d
    D[ju, iu] = pair_d
    e = D / (2.0 * cfg.sigma_y ** 2)
    if cfg.exponent_sign == "positive":
        return logsumexp(e, axis=1).sum(axis=0)
    return -logsumexp(-e, axis=1).sum(axis=0)


def select_max_entropy(scores, remaining, cfg: PolicyConfig = PolicyConfig()) -> int:
    scores = np.asarray(scores, dtype=np.float64)
    remaining = np.asarray(list(remaining), dtype=np.int64)
    if scores.size == 0 or scores.size != remaining.size:
        raise ValueError("scores and remaining actions must be non-empty and aligned")
    best = scores.max()
    return int(remaining[scores == best].min())


def baseline_next_action(kind: str, remaining, weights=None, rng: np.random.Generator | None = None) -> int:
    """Draw one action from the random or data-variance categorical."""
    remaining = np.asarray(list(remaining), dtype=np.int64)
    if remaining.size == 0:
        raise ValueError("no remaining actions")
    if remaining.size == 1:
        return int(remaining[0])
    if rng is None:
        raise ValueError("an rng is required to sample baseline actions")
    if kind == "random":
        return int(rng.choice(remaining))
    if kind != "data-variance":
        raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    if weights is None:
        raise ValueError("data-variance sampling needs per-action weights")
    w = np.asarray(weights, dtype=np.float64)[remaining]
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if w.sum() <= 0:
        logger.warning("all remaining data-variance weights are zero; sampling uniformly")
        return int(rng.choice(remaining))
    return int(rng.choice(remaining, p=w / w.sum()))


def baseline_mask(kind: str, space: ActionSpace, budget: int, weights=None,
                  rng: np.random.Generator | None = None, initial=()) -> list[int]:
    """Build a fixed design of ``budget`` actions without replacement."""
    chosen = list(initial)
    if budget > space.n_actions:
        raise ValueError(f"budget {budget} exceeds the {space.n_actions} available actions")
    while len(chosen) < budget:
        taken = set(chosen)
        remaining = [a for a in range(space.n_actions) if a not in taken]
        chosen.append(baseline_next_action(kind, remaining, weights, rng))
    return chosen
