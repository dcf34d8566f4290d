"""Reconstruction metrics and mask-distribution entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter


def _pair(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a, b = _pair(a, b)
    if not peak > 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean(np.abs(a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak ** 2 / mse))


def ssim(a, b, window: int = 4, k1: float = 0.01, k2: float = 0.03, dynamic_range: float = 1.0) -> float:
    """Mean structural similarity over every ``window x window`` patch.

    Uniform window, unit stride, no padding; local covariances use the
    ``n / (n - 1)`` sample normalisation. Complex inputs are compared by magnitude.
    """
    a, b = _pair(a, b)
    if np.iscomplexobj(a) or np.iscomplexobj(b):
        a, b = np.abs(a), np.abs(b)
    a, b = a.astype(np.float64), b.astype(np.float64)
    if a.ndim != 2 or min(a.shape) < window:
        raise ValueError(f"need a 2-D image of at least {window}x{window}, got {a.shape}")
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    npx = window * window
    norm = npx / (npx - 1.0)

    def local(img):
        # uniform_filter with an even window centres at offset window//2; crop to valid patches
        f = uniform_filter(img, size=window, mode="constant")
        lo = window // 2
        return f[lo:lo + img.shape[0] - window + 1, lo:lo + img.shape[1] - window + 1]

    ua, ub = local(a), local(b)
    vaa = norm * (local(a * a) - ua * ua)
    vbb = norm * (local(b * b) - ub * ub)
    vab = norm * (local(a * b) - ua * ub)
    s = ((2 * ua * ub + c1) * (2 * vab + c2)) / ((ua ** 2 + ub ** 2 + c1) * (vaa + vbb + c2))
    return float(np.mean(s))


@dataclass
class MetricReport:
    mae: np.ndarray
    psnr: np.ndarray
    ssim: np.ndarray

    @staticmethod
    def _stats(v):
        v = np.asarray(v, dtype=np.float64)
        finite = v[np.isfinite(v)]
        if finite.size == 0:
            return float("nan"), float("nan")
        se = float(finite.std(ddof=1) / np.sqrt(finite.size)) if finite.size > 1 else 0.0
        return float(finite.mean()), se

    def summary(self) -> dict:
        out = {"n": int(len(self.mae))}
        for name in ("mae", "psnr", "ssim"):
            mean, se = self._stats(getattr(self, name))
            out[name] = {"mean": mean, "stderr": se}
        return out


def metric_report(targets, recons, shape, peak: float = 1.0) -> MetricReport:
    """Per-sample metrics for aligned lists of flat vectors."""
    rows = [(mae(t, r), psnr(t, r, peak),
             ssim(np.reshape(t, shape), np.reshape(r, shape), dynamic_range=peak))
            for t, r in zip(targets, recons)]
    arr = np.array(rows, dtype=np.float64).reshape(-1, 3)
    return MetricReport(arr[:, 0], arr[:, 1], arr[:, 2])


def bernoulli_entropy_bits(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    inside = (p > 0) & (p < 1)
    q = p[inside]
    out[inside] = -q * np.log2(q) - (1 - q) * np.log2(1 - q)
    return out


def mask_distribution_entropy(masks) -> tuple[np.ndarray, float]:
    """Per-action inclusion frequency and mean Bernoulli entropy (bits)."""
    m = np.asarray(masks, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1:
        raise ValueError("need a non-empty stack of equal-length masks")
    p = m.mean(axis=0)
    return p, float(bernoulli_entropy_bits(p).mean())
