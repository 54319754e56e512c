"""Run configuration: one JSON key-value file, hashed into every artifact.

Top-level keys mirror :class:`TrainConfig`; ``unet``, ``a2m``, ``autoencoder``
and ``emotion`` hold the module dimensions and ``loss_weights`` maps loss
component names to non-negative weights. Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..a2m import A2MConfig
from ..diffusion.autoencoder import AutoencoderConfig
from ..diffusion.unet import UNetConfig
from ..emotion import EmotionConfig
from ..io import config_hash
from ..losses import DEFAULT_WEIGHTS


class ConfigError(ValueError):
    pass


LOCATION_KEYS = ("data_dir", "work_dir")
_NESTED = {"unet": UNetConfig, "a2m": A2MConfig, "autoencoder": AutoencoderConfig, "emotion": EmotionConfig}


@dataclass(frozen=True)
class TrainConfig:
    data_dir: str = "data/ingested"
    work_dir: str = "runs/default"
    stage: int = 1
    seed: int = 0
    steps: int = 3000
    batch_size: int = 2
    learning_rate: float = 3e-4
    resolution: int = 32
    clip_frames: int = 14
    motion_frames: int = 2
    a2m_steps: int = 2000
    a2m_window: int = 50
    ddim_steps: int = 40
    probe_size: int = 20
    strict: bool = True
    loss_weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    unet: UNetConfig = field(default_factory=UNetConfig)
    a2m: A2MConfig = field(default_factory=A2MConfig)
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    emotion: EmotionConfig = field(default_factory=EmotionConfig)

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        for name in ("steps", "batch_size", "resolution", "clip_frames", "a2m_window", "ddim_steps",
                     "probe_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("motion_frames", "a2m_steps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.ddim_steps > self.unet.schedule_T:
            raise ConfigError(f"ddim_steps ({self.ddim_steps}) exceeds T ({self.unet.schedule_T})")
        if self.resolution != 4 * self.unet.latent_size:
            raise ConfigError(f"resolution {self.resolution} does not match latent size {self.unet.latent_size}")
        for name, w in self.loss_weights.items():
            if name not in DEFAULT_WEIGHTS:
                raise ConfigError(f"unknown loss component {name!r}")
            if w < 0:
                raise ConfigError(f"loss weight {name!r} is negative ({w})")

    def to_dict(self) -> dict:
        return asdict(self)

    def artifact_dict(self) -> dict:
        """Everything except filesystem locations; this is what gets hashed and
        embedded in artifacts, so relocating a run does not change its bytes."""
        d = self.to_dict()
        for key in LOCATION_KEYS:
            d.pop(key)
        return d

    @property
    def hash(self) -> str:
        return config_hash(self.artifact_dict())

    def with_stage(self, stage: int) -> "TrainConfig":
        return replace(self, stage=stage)

    @property
    def weights(self) -> dict:
        return {**{k: 0.0 for k in DEFAULT_WEIGHTS}, **self.loss_weights}


def config_from_dict(data: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(data)
    for key, cls in _NESTED.items():
        if key in kwargs:
            sub = kwargs[key]
            allowed = {f.name for f in fields(cls)}
            bad = set(sub) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(bad)}")
            kwargs[key] = cls(**sub)
    if "loss_weights" in kwargs:
        kwargs["loss_weights"] = {**DEFAULT_WEIGHTS, **kwargs["loss_weights"]}
    return TrainConfig(**kwargs)


def load_config(path: str | Path | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return config_from_dict(data)


def save_config(path: str | Path, cfg: TrainConfig) -> Path:
    path = Path(path)
    path.write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
    return path
