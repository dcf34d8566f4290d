"""Experiment configuration (YAML) and its validation.

Every section is optional except where noted; missing keys take the defaults
below. Validation happens up front and reports the dotted path of the first
offending key.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from adsub.agent import POLICY_KINDS
from adsub.guidance import GUIDANCE_MODES
from adsub.measurement import ACTION_KINDS, FORWARD_KINDS
from adsub.policy import EXPONENT_SIGNS
from adsub.schedule import SCHEDULE_KINDS

DATASET_KINDS = ("planted", "gmm", "idx", "csv", "tensor")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class DatasetSpec:
    kind: str = "planted"
    shape: list = field(default_factory=lambda: [16, 16])
    n_train: int = 2000
    n_test: int = 100
    seed: int = 1
    path: str | None = None
    downsample: int = 1
    pad_to: list | None = None
    # planted-structure generator
    n_components: int = 8
    n_groups: int = 2
    blob: int = 6
    marker: int = 2
    marker_level: float = 0.6
    background: float = 0.1
    noise: float = 0.005


@dataclass
class PriorSpec:
    K: int = 8
    max_iters: int = 200
    tol: float = 1e-9
    seed: int = 0
    path: str | None = None


@dataclass
class MeasurementSpec:
    forward: str = "identity"
    action: str = "pixel"
    box: list = field(default_factory=lambda: [4, 4])
    noise_std: float = 0.0


@dataclass
class AgentSpec:
    T: int = 200
    schedule: str = "linear"
    beta_min: float | None = None
    beta_max: float | None = None
    n_particles: int = 16
    window: list | None = None
    zeta: float = 0.5
    sigma_y: float = 1.0
    exponent_sign: str = "positive"
    guidance: str = "exact-jacobian"
    init_actions: list = field(default_factory=list)

    def betas(self) -> tuple[float, float]:
        # DDPM's (1e-4, 0.02) at T=1000, rescaled so shorter chains still end near pure noise
        lo = self.beta_min if self.beta_min is not None else 0.1 / self.T
        hi = self.beta_max if self.beta_max is not None else 20.0 / self.T
        return lo, hi

    def resolved_window(self) -> tuple[int, int]:
        if self.window is None:
            return int(round(0.1 * self.T)), int(round(0.9 * self.T))
        return int(self.window[0]), int(self.window[1])


@dataclass
class EvaluationSpec:
    policies: list = field(default_factory=lambda: ["ads", "random", "data-variance"])
    budgets: list = field(default_factory=lambda: [26, 45, 64])
    metrics: list = field(default_factory=lambda: ["mae", "psnr", "ssim"])
    n_samples: int = 100
    peak: float = 1.0
    traces: bool = True
    figure_samples: int = 4


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/experiment"
    workers: int = 1
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    prior: PriorSpec = field(default_factory=PriorSpec)
    measurement: MeasurementSpec = field(default_factory=MeasurementSpec)
    agent: AgentSpec = field(default_factory=AgentSpec)
    evaluation: EvaluationSpec = field(default_factory=EvaluationSpec)

    def to_dict(self) -> dict:
        return asdict(self)

    def resolved(self) -> dict:
        """Config with every derived default filled in (for the summary)."""
        d = self.to_dict()
        lo, hi = self.agent.betas()
        d["agent"]["beta_min"], d["agent"]["beta_max"] = lo, hi
        d["agent"]["window"] = list(self.agent.resolved_window())
        return d


_SECTIONS = {
    "dataset": DatasetSpec,
    "prior": PriorSpec,
    "measurement": MeasurementSpec,
    "agent": AgentSpec,
    "evaluation": EvaluationSpec,
}


def _build(cls, raw, path):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a mapping")
    known = cls.__dataclass_fields__
    for key in raw:
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    return cls(**copy.deepcopy(raw))


def _expect(cond, path, msg):
    if not cond:
        raise ConfigError(path, msg)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    top = {k: v for k, v in raw.items() if k not in _SECTIONS}
    cfg = _build(ExperimentConfig, top, "")
    for name, cls in _SECTIONS.items():
        setattr(cfg, name, _build(cls, raw.get(name), name))
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from None
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    return config_from_dict(raw or {})


def validate(cfg: ExperimentConfig) -> None:
    _expect(_is_int(cfg.seed) and cfg.seed >= 0, "seed", "must be a non-negative integer")
    _expect(_is_int(cfg.workers) and cfg.workers >= 1, "workers", "must be a positive integer")
    _expect(isinstance(cfg.output_dir, str) and cfg.output_dir, "output_dir", "must be a path")

    ds = cfg.dataset
    _expect(ds.kind in DATASET_KINDS, "dataset.kind", f"must be one of {DATASET_KINDS}")
    _expect(isinstance(ds.shape, list) and len(ds.shape) == 2 and all(_is_int(s) and s > 0 for s in ds.shape),
            "dataset.shape", "must be [H, W]")
    _expect(_is_int(ds.n_test) and ds.n_test >= 1, "dataset.n_test", "must be >= 1")
    _expect(_is_int(ds.n_train) and ds.n_train >= 1, "dataset.n_train", "must be >= 1")
    _expect(_is_int(ds.downsample) and ds.downsample >= 1, "dataset.downsample", "must be >= 1")
    if ds.kind in ("idx", "csv", "tensor"):
        _expect(isinstance(ds.path, str), "dataset.path", f"required for kind {ds.kind!r}")
    _expect(_is_num(ds.noise) and ds.noise > 0, "dataset.noise", "must be positive")

    pr = cfg.prior
    if pr.path is None:
        _expect(_is_int(pr.K) and pr.K >= 1, "prior.K", "must be a positive integer")
        _expect(_is_int(pr.max_iters) and pr.max_iters >= 1, "prior.max_iters", "must be >= 1")
        _expect(_is_num(pr.tol) and pr.tol >= 0, "prior.tol", "must be >= 0")
        _expect(pr.K <= ds.n_train, "prior.K", "exceeds dataset.n_train")
    else:
        _expect(isinstance(pr.path, str), "prior.path", "must be a path")

    ms = cfg.measurement
    _expect(ms.forward in FORWARD_KINDS, "measurement.forward", f"must be one of {FORWARD_KINDS}")
    _expect(ms.action in ACTION_KINDS, "measurement.action", f"must be one of {ACTION_KINDS}")
    _expect(_is_num(ms.noise_std) and ms.noise_std >= 0, "measurement.noise_std", "must be >= 0")
    _expect(isinstance(ms.box, list) and len(ms.box) == 2, "measurement.box", "must be [w, h]")

    ag = cfg.agent
    _expect(_is_int(ag.T) and ag.T >= 1, "agent.T", "must be a positive integer")
    _expect(ag.schedule in SCHEDULE_KINDS, "agent.schedule", f"must be one of {SCHEDULE_KINDS}")
    lo, hi = ag.betas()
    _expect(0 < lo <= hi < 1, "agent.beta_max", "need 0 < beta_min <= beta_max < 1")
    _expect(_is_int(ag.n_particles) and ag.n_particles >= 2, "agent.n_particles", "must be >= 2")
    _expect(_is_num(ag.zeta) and ag.zeta >= 0, "agent.zeta", "must be >= 0")
    _expect(_is_num(ag.sigma_y) and ag.sigma_y > 0, "agent.sigma_y", "must be > 0")
    _expect(ag.exponent_sign in EXPONENT_SIGNS, "agent.exponent_sign", f"must be one of {EXPONENT_SIGNS}")
    _expect(ag.guidance in GUIDANCE_MODES[:2], "agent.guidance", f"must be one of {GUIDANCE_MODES[:2]}")
    if ag.window is not None:
        _expect(isinstance(ag.window, list) and len(ag.window) == 2 and all(_is_int(w) for w in ag.window)
                and 0 <= ag.window[0] <= ag.window[1] < ag.T, "agent.window", "must be [lo, hi] with 0 <= lo <= hi < T")
    _expect(isinstance(ag.init_actions, list) and all(_is_int(a) and a >= 0 for a in ag.init_actions),
            "agent.init_actions", "must be a list of action ids")

    ev = cfg.evaluation
    _expect(isinstance(ev.policies, list) and ev.policies and all(p in POLICY_KINDS for p in ev.policies),
            "evaluation.policies", f"must be a non-empty subset of {POLICY_KINDS}")
    _expect(isinstance(ev.budgets, list) and ev.budgets and all(_is_int(b) and b >= 1 for b in ev.budgets),
            "evaluation.budgets", "must be a non-empty list of positive integers")
    _expect(all(m in ("mae", "psnr", "ssim") for m in ev.metrics), "evaluation.metrics",
            "entries must be mae, psnr or ssim")
    _expect(_is_int(ev.n_samples) and 1 <= ev.n_samples <= ds.n_test, "evaluation.n_samples",
            "must be between 1 and dataset.n_test")
    _expect(_is_num(ev.peak) and ev.peak > 0, "evaluation.peak", "must be > 0")

    wlo, whi = ag.resolved_window()
    n_init = len(ag.init_actions)
    for b in ev.budgets:
        _expect(b >= max(n_init, 1), "evaluation.budgets", f"budget {b} is below the {n_init} initial actions")
        _expect(b - n_init <= whi - wlo + 1, "evaluation.budgets",
                f"budget {b} needs more acquisition steps than agent.window provides")
