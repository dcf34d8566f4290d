"""Analytic isotropic Gaussian-mixture prior.

Under the VP noising ``x_tau = sqrt(ab) x_0 + sqrt(1 - ab) eps`` a mixture of
isotropic Gaussians stays a mixture of isotropic Gaussians, so the score, the
Tweedie denoiser and its Jacobian are all available in closed form. Every
function here accepts a single ``(d,)`` vector or a ``(n, d)`` batch.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from adsub.schedule import NoiseSchedule

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
MIN_ALPHA_BAR = 1e-12
FORMAT_NAME = "adsub.isotropic-gmm"
FORMAT_VERSION = 1


class NumericalDomainError(ValueError):
    """Raised when a closed form is requested where it is ill-conditioned."""


@dataclass(frozen=True)
class IsotropicGmm:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    fit_info: dict | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        var = np.asarray(self.variances, dtype=np.float64).ravel()
        if not (w.size == mu.shape[0] == var.size):
            raise ValueError("weights, means and variances disagree on the component count")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        for name, arr in (("weights", w), ("means", mu), ("variances", var)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return int(self.weights.size)

    @property
    def d(self) -> int:
        return int(self.means.shape[1])

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` points; returns ``(x, component_labels)``."""
        labels = rng.choice(self.K, size=n, p=self.weights)
        eps = rng.standard_normal((n, self.d))
        x = self.means[labels] + np.sqrt(self.variances[labels])[:, None] * eps
        return x, labels

    def log_density(self, x) -> np.ndarray:
        return log_density(noised_view(self, 0, None), x)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "K": self.K,
            "d": self.d,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "IsotropicGmm":
        if obj.get("format") != FORMAT_NAME:
            raise ValueError(f"not a serialized prior (format={obj.get('format')!r})")
        if obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported prior version {obj.get('version')!r}")
        gmm = cls(np.array(obj["weights"]), np.array(obj["means"]), np.array(obj["variances"]))
        if gmm.K != obj["K"] or gmm.d != obj["d"]:
            raise ValueError("K/d header does not match payload")
        return gmm

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "IsotropicGmm":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class NoisedGmmView:
    """Marginal of the prior at step ``tau``."""

    tau: int
    weights: np.ndarray
    means_tau: np.ndarray
    variances_tau: np.ndarray


def noised_view(prior: IsotropicGmm, tau: int, sched: NoiseSchedule | None) -> NoisedGmmView:
    ab = 1.0 if sched is None else sched.alpha_bar(tau)
    return NoisedGmmView(
        tau=int(tau),
        weights=prior.weights,
        means_tau=np.sqrt(ab) * prior.means,
        variances_tau=ab * prior.variances + (1.0 - ab),
    )


def _log_joint(view: NoisedGmmView, x: np.ndarray) -> np.ndarray:
    """``log w_k + log N(x; m_k, v_k I)`` for every row of ``x`` -> ``(n, K)``."""
    d = x.shape[-1]
    # ||x - m||^2 expanded to avoid an (n, K, d) temporary
    sq = (np.sum(x * x, axis=1)[:, None] - 2.0 * x @ view.means_tau.T
          + np.sum(view.means_tau ** 2, axis=1)[None, :])
    sq = np.maximum(sq, 0.0)
    with np.errstate(divide="ignore"):
        logw = np.log(view.weights)
    return (logw[None, :] - 0.5 * d * np.log(2 * np.pi * view.variances_tau)[None, :]
            - 0.5 * sq / view.variances_tau[None, :])


def responsibilities(view: NoisedGmmView, x) -> np.ndarray:
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    lj = _log_joint(view, x2)
    gamma = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    return gamma[0] if np.ndim(x) == 1 else gamma


def log_density(view: NoisedGmmView, x) -> np.ndarray:
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = logsumexp(_log_joint(view, x2), axis=1)
    return out[0] if np.ndim(x) == 1 else out


def score(view: NoisedGmmView, x) -> np.ndarray:
    """Exact gradient of the noised log density."""
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    gamma = responsibilities(view, x2)
    c = gamma / view.variances_tau[None, :]
    s = c @ view.means_tau - c.sum(axis=1, keepdims=True) * x2
    return s[0] if np.ndim(x) == 1 else s


def _check_alpha_bar(sched: NoiseSchedule, tau: int) -> float:
    ab = sched.alpha_bar(tau)
    if ab < MIN_ALPHA_BAR:
        raise NumericalDomainError(f"alpha_bar({tau}) = {ab:.3e} is too small to invert")
    return ab


def tweedie_denoise(prior: IsotropicGmm, x_tau, tau: int, sched: NoiseSchedule) -> np.ndarray:
    """Posterior mean ``E[x_0 | x_tau]`` via Tweedie's formula."""
    ab = _check_alpha_bar(sched, tau)
    x = np.asarray(x_tau, dtype=np.float64)
    s = score(noised_view(prior, tau, sched), x)
    return (x + (1.0 - ab) * s) / np.sqrt(ab)


def _hessian_apply(view: NoisedGmmView, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    # H = -(sum_k g_k / v_k) I + sum_k g_k u_k u_k^T - u_bar u_bar^T,  u_k = (m_k - x) / v_k
    gamma = responsibilities(view, x)
    inv_v = 1.0 / view.variances_tau
    diff = view.means_tau[None, :, :] - x[:, None, :]
    u = diff * inv_v[None, :, None]
    u_bar = np.einsum("nk,nkd->nd", gamma, u)
    uv = np.einsum("nkd,nd->nk", u, v)
    out = -(gamma @ inv_v)[:, None] * v
    out += np.einsum("nk,nkd->nd", gamma * uv, u)
    out -= u_bar * np.sum(u_bar * v, axis=1, keepdims=True)
    return out


def tweedie_jacobian_apply(prior: IsotropicGmm, x_tau, tau: int, sched: NoiseSchedule, v) -> np.ndarray:
    """Return ``v^T J`` with ``J`` the Jacobian of the Tweedie denoiser.

    ``J`` is symmetric, so this is also ``J v``.
    """
    ab = _check_alpha_bar(sched, tau)
    single = np.ndim(x_tau) == 1
    x = np.atleast_2d(np.asarray(x_tau, dtype=np.float64))
    vv = np.atleast_2d(np.asarray(v, dtype=np.float64))
    hv = _hessian_apply(noised_view(prior, tau, sched), x, vv)
    out = (vv + (1.0 - ab) * hv) / np.sqrt(ab)
    return out[0] if single else out


def _kmeanspp_init(data: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centers = [data[rng.integers(n)]]
    d2 = np.sum((data - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(data[idx])
        d2 = np.minimum(d2, np.sum((data - data[idx]) ** 2, axis=1))
    return np.array(centers)


def fit_gmm_em(dataset, K: int, max_iters: int = 100, tol: float = 1e-6, seed: int = 0) -> IsotropicGmm:
    """Fit an isotropic-covariance mixture by EM.

    Means are initialised with k-means++ seeding. The returned model carries a
    ``fit_info`` dict with the per-iteration average log-likelihood (evaluated
    at the parameters entering that iteration), the iteration count and any
    variance-floor warnings.
    """
    data = np.atleast_2d(np.asarray(dataset, dtype=np.float64))
    if data.size == 0:
        raise ValueError("dataset is empty")
    n, d = data.shape
    if not 1 <= K <= n:
        raise ValueError(f"need 1 <= K <= N, got K={K}, N={n}")
    rng = np.random.default_rng(seed)

    means = _kmeanspp_init(data, K, rng)
    variances = np.full(K, max(data.var(axis=0).mean(), VARIANCE_FLOOR))
    weights = np.full(K, 1.0 / K)

    history: list[float] = []
    warnings: list[str] = []
    converged = False
    for it in range(max_iters):
        view = NoisedGmmView(0, weights, means, variances)
        lj = _log_joint(view, data)
        norm = logsumexp(lj, axis=1, keepdims=True)
        history.append(float(norm.mean()))
        if len(history) > 1 and history[-1] - history[-2] < tol:
            converged = True
            break
        resp = np.exp(lj - norm)
        nk = resp.sum(axis=0)
        alive = nk > 1e-10
        new_means = means.copy()
        new_means[alive] = (resp[:, alive].T @ data) / nk[alive, None]
        sq = (np.sum(data ** 2, axis=1)[:, None] - 2 * data @ new_means.T
              + np.sum(new_means ** 2, axis=1)[None, :])
        new_var = variances.copy()
        new_var[alive] = np.sum(resp[:, alive] * np.maximum(sq[:, alive], 0), axis=0) / (nk[alive] * d)
        low = new_var < VARIANCE_FLOOR
        if np.any(low):
            msg = f"iteration {it}: clamped variance of components {np.flatnonzero(low).tolist()} to {VARIANCE_FLOOR}"
            warnings.append(msg)
            logger.warning(msg)
            new_var[low] = VARIANCE_FLOOR
        means, variances = new_means, new_var
        weights = nk / nk.sum()

    weights = weights / weights.sum()
    info = {"log_likelihood": history, "iterations": len(history), "converged": converged,
            "warnings": warnings}
    return IsotropicGmm(weights, means, variances, fit_info=info)
