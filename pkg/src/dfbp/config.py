"""JSON run configuration with strict validation and documented defaults.

Sections and defaults::

    model     DiTConfig fields (16x16x1, P=4, D=32, depth 2, 4 heads, mlp x4)
    schedule  {T: 1000, beta_start: 1e-4, beta_end: 0.02}
    optim     {lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01}
    train     {steps: 500, batch: 8, seed: 0, log_every: 0}
    head      {hidden: null (= ceil(D/2)), steps: 2000, lr: 1e-3, weight_decay: 0.01,
               batch: 0 (full), init_std: 0.02, standardize: true, clamp: true}
    eval      {k: 5, seed: 0, folds_csv: null}
    feature   {pooling: "cls", t_feat: 1}

``model.T`` defaults to ``schedule.T``. ``feature.pooling`` sets
``model.feature_pooling``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .diffusion import ScheduleError, build_schedule
from .dit import POOLING_MODES, ConfigError, DiTConfig
from .head import HeadConfig
from .training import OptimConfig, ScheduleConfig


@dataclass
class TrainConfig:
    steps: int = 500
    batch: int = 8
    seed: int = 0
    log_every: int = 0


@dataclass
class EvalConfig:
    k: int = 5
    seed: int = 0
    folds_csv: str | None = None


@dataclass
class FeatureConfig:
    pooling: str = "cls"
    t_feat: int = 1


@dataclass
class RunConfig:
    model: DiTConfig = field(default_factory=DiTConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    feature: FeatureConfig = field(default_factory=FeatureConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: int) -> "RunConfig":
        self.train.seed = seed
        self.eval.seed = seed
        return self


_SECTIONS = {
    "schedule": ScheduleConfig,
    "optim": OptimConfig,
    "train": TrainConfig,
    "head": HeadConfig,
    "eval": EvalConfig,
    "feature": FeatureConfig,
}


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {unknown}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad {name!r} section: {exc}") from exc


def _int(name, v, lo=1):
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigError(f"{name} must be an integer >= {lo}, got {v!r}")


def _pos(name, v, allow_zero=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0 or (v == 0 and not allow_zero):
        raise ConfigError(f"{name} must be a {'non-negative' if allow_zero else 'positive'} number, got {v!r}")


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - {"model", *_SECTIONS})
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {unknown}")
    parts = {name: _section(cls, raw.get(name), name) for name, cls in _SECTIONS.items()}
    sched: ScheduleConfig = parts["schedule"]
    feat: FeatureConfig = parts["feature"]

    model_raw = dict(raw.get("model") or {})
    if not isinstance(raw.get("model", {}), dict):
        raise ConfigError("section 'model' must be an object")
    if "feature_pooling" in model_raw and model_raw["feature_pooling"] != feat.pooling \
            and "pooling" in (raw.get("feature") or {}):
        raise ConfigError("model.feature_pooling conflicts with feature.pooling")
    model_raw.setdefault("T", sched.T)
    if "pooling" in (raw.get("feature") or {}) or "feature_pooling" not in model_raw:
        model_raw["feature_pooling"] = feat.pooling
    else:
        feat.pooling = model_raw["feature_pooling"]
    try:
        model = DiTConfig.from_dict(model_raw)
    except TypeError as exc:
        raise ConfigError(f"bad 'model' section: {exc}") from exc

    cfg = RunConfig(model=model, **parts)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Reject physically invalid settings before any computation."""
    cfg.model.validate()
    try:
        build_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    except ScheduleError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.schedule.T > cfg.model.T:
        raise ConfigError(f"schedule.T={cfg.schedule.T} exceeds model.T={cfg.model.T}")
    o = cfg.optim
    _pos("optim.lr", o.lr)
    _pos("optim.eps", o.eps)
    _pos("optim.weight_decay", o.weight_decay, allow_zero=True)
    for name in ("beta1", "beta2"):
        v = getattr(o, name)
        if not isinstance(v, (int, float)) or not 0 <= v < 1:
            raise ConfigError(f"optim.{name} must be in [0, 1), got {v!r}")
    _int("train.steps", cfg.train.steps, lo=0)
    _int("train.batch", cfg.train.batch)
    _int("train.seed", cfg.train.seed, lo=0)
    _int("train.log_every", cfg.train.log_every, lo=0)
    h = cfg.head
    if h.hidden is not None:
        _int("head.hidden", h.hidden)
    _int("head.steps", h.steps, lo=0)
    _int("head.batch", h.batch, lo=0)
    _pos("head.lr", h.lr)
    _pos("head.weight_decay", h.weight_decay, allow_zero=True)
    _pos("head.init_std", h.init_std, allow_zero=True)
    _int("eval.k", cfg.eval.k, lo=2)
    _int("eval.seed", cfg.eval.seed, lo=0)
    if cfg.feature.pooling not in POOLING_MODES:
        raise ConfigError(f"feature.pooling must be one of {POOLING_MODES}")
    _int("feature.t_feat", cfg.feature.t_feat)
    if cfg.feature.t_feat > cfg.model.T:
        raise ConfigError(f"feature.t_feat={cfg.feature.t_feat} exceeds model.T={cfg.model.T}")


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(raw)
