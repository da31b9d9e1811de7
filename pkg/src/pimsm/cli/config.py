"""Experiment configuration: a JSON file mapped onto typed sections."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..errors import ConfigError, ParameterError
from ..msssm.backbone import DIM_PRESETS, PRESET_DELTA_MODE
from ..train.losses import LossWeights

TASKS = ("classify", "forecast", "pretrain", "kernel-study", "ablation")
AXES = ("standard", "truncation", "low-resource", "state-shift")


@dataclass
class ExperimentConfig:
    task: str = "classify"
    axis: str = "standard"
    # dataset: {"generator": "two_timescale" | "colored_noise", ...params} or {"csv_dir": ..., "test_csv_dir": ...}
    data: dict = field(default_factory=lambda: {"generator": "two_timescale", "n_per_class": 64, "T": 64, "d": 2})
    preset: str = "pimsm"
    size: str = "desk"
    dims: dict = field(default_factory=dict)  # overrides of BackboneConfig dimensions
    weights: dict = field(default_factory=dict)  # LossWeights fields
    scale: dict = field(default_factory=dict)  # w, map_mode, delta_min, delta_max, spectral_pooling
    train: dict = field(default_factory=dict)  # TrainConfig fields
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "runs/experiment"
    view_frac: float = 0.125  # truncation axis: backbone sees the first ceil(view_frac T) samples
    ratios: list = field(default_factory=lambda: [0.01, 0.05, 0.10, 1.0])  # low-resource axis
    ablation: dict = field(default_factory=lambda: {"w": [0.0, 0.3, 0.5, 1.0], "mode": ["per-band", "global"]})
    horizon: int = 4  # forecast targets
    kernel: dict = field(default_factory=lambda: {"alpha": 2.0, "K": [1, 2, 3, 4, 5], "restarts": 32})

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.axis not in AXES:
            raise ConfigError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.preset not in PRESET_DELTA_MODE:
            raise ConfigError(f"preset must be one of {sorted(PRESET_DELTA_MODE)}, got {self.preset!r}")
        if self.size not in DIM_PRESETS:
            raise ConfigError(f"size must be one of {sorted(DIM_PRESETS)}, got {self.size!r}")
        if not self.seeds:
            raise ConfigError("seeds must be a nonempty list")
        if not 0 < self.view_frac <= 1:
            raise ConfigError("view_frac must be in (0, 1]")
        if any(not 0 < r <= 1 for r in self.ratios):
            raise ConfigError("low-resource ratios must be in (0, 1]")
        if "csv_dir" in self.data:
            for key in ("csv_dir", "test_csv_dir"):
                if key in self.data and not Path(self.data[key]).is_dir():
                    raise ConfigError(f"data.{key} does not exist: {self.data[key]}")
        elif self.task not in ("kernel-study",) and "generator" not in self.data:
            raise ConfigError("data needs either 'generator' or 'csv_dir'")
        try:
            LossWeights(**self.weights)
        except (TypeError, ParameterError) as exc:
            raise ConfigError(f"bad weights section: {exc}") from None

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(**self.weights)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """Stable hash of the configuration (output directory excluded)."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(d)
