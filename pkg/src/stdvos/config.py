"""Experiment configuration: one YAML file, fully validated, unknown keys rejected.

Precedence for the overridable scalars is flag > environment > file > default.
Environment variables: ``STDVOS_SEED``, ``STDVOS_JOBS``, ``STDVOS_SEGMENTER``,
``STDVOS_JITTER``.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .association import TrackerConfig
from .attention import AttentionConfig, ConfigError
from .losses import LossConfig
from .model import ModelConfig
from .train import TrainConfig

ENV_PREFIX = "STDVOS_"


def _default_attention() -> AttentionConfig:
    # desk-scale defaults; radius and k_inter keep the values chosen in the ablations
    return AttentionConfig(n_heads=4, n_levels=3, k_intra=4, k_inter=4, radius=3, channels=32,
                           n_layers=1, ffn_dim=64, fusion_hidden=8)


def _default_model() -> ModelConfig:
    return ModelConfig(num_queries=10, dec_layers=2, dec_points=4, reid_dim=32, first_stride=8,
                       backbone_hidden=32)


@dataclass(frozen=True)
class ExperimentConfig:
    attention: AttentionConfig = field(default_factory=_default_attention)
    model: ModelConfig = field(default_factory=_default_model)
    loss: LossConfig = field(default_factory=LossConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    jobs: int = 1
    segmenter: str = "oracle"
    jitter: float = 0.0
    data_dir: str | None = None
    eval_dir: str | None = None

    def __post_init__(self):
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.jitter < 0:
            raise ConfigError("jitter must be >= 0")
        if self.segmenter != "oracle" and not self.segmenter.startswith("remote:"):
            raise ConfigError(f"segmenter must be 'oracle' or 'remote:URL', got {self.segmenter!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


_SECTIONS = {"attention": AttentionConfig, "model": ModelConfig, "loss": LossConfig,
             "tracker": TrackerConfig, "train": TrainConfig}
_SCALARS = {"seed": int, "jobs": int, "segmenter": str, "jitter": float}


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = ExperimentConfig()
    kwargs = {}
    for name, value in data.items():
        if name in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{name}: expected a mapping")
            merged = {**asdict(getattr(base, name)), **value}
            try:
                kwargs[name] = _SECTIONS[name].from_dict(merged)
            except TypeError as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        else:
            kwargs[name] = value
    return ExperimentConfig(**kwargs)


def load_config(path=None, overrides: dict | None = None, environ=None) -> ExperimentConfig:
    """Defaults, then the file, then ``STDVOS_*`` env vars, then explicit overrides."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    cfg = from_dict(data)
    environ = os.environ if environ is None else environ
    changes = {}
    for name, cast in _SCALARS.items():
        raw = environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            try:
                changes[name] = cast(raw)
            except ValueError as exc:
                raise ConfigError(f"{ENV_PREFIX + name.upper()}: {exc}") from exc
    for name, value in (overrides or {}).items():
        if value is not None:
            changes[name] = value
    return replace(cfg, **changes) if changes else cfg
