"""Run configuration: model, synthetic data and training sections in one JSON document.

Every default is written out explicitly by ``RunConfig.to_dict`` so a saved
config fully describes a run. Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple, Union

from .errors import ConfigurationError
from .model import ModelConfig
from .region import BranchConfig


@dataclass
class DataConfig:
    train_seed: int = 0
    val_seed: int = 1
    train_count: int = 256
    val_count: int = 64
    size: Tuple[int, int] = (64, 64)
    num_classes: int = 5


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 4
    base_lr: float = 2e-3
    lr_power: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    flip_p: float = 0.5
    scale_range: Tuple[float, float] = (0.75, 1.25)
    augment: bool = True
    checkpoint_every: int = 0
    seed: int = 0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "RunConfig":
        self.model.validate()
        if self.data.num_classes != self.model.num_classes:
            raise ConfigurationError("data.num_classes must equal model.num_classes")
        if tuple(self.data.size) != tuple(self.model.input_size):
            raise ConfigurationError("data.size must equal model.input_size")
        if self.train.epochs < 0 or self.train.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        lo, hi = self.train.scale_range
        if not 0 < lo <= hi:
            raise ConfigurationError("scale_range must satisfy 0 < lo <= hi")
        return self

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "data": {**asdict(self.data), "size": list(self.data.size)},
            "train": {**asdict(self.train), "scale_range": list(self.train.scale_range)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {"model", "data", "train"}
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        return cls(
            model=ModelConfig.from_dict(d.get("model", {})),
            data=_section(DataConfig, d.get("data", {})),
            train=_section(TrainConfig, d.get("train", {})),
        ).validate()


def _section(cls, d: dict):
    names = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(names)
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    base = cls()
    values = {}
    for k, v in d.items():
        default = getattr(base, k)
        values[k] = tuple(type(default[0])(x) for x in v) if isinstance(default, tuple) else type(default)(v)
    return replace(base, **values)


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    return RunConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: RunConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(cfg.to_json() + "\n")


def tiny_config() -> RunConfig:
    """Narrow 16x16, 3-class model used for full gradient checks."""
    model = ModelConfig(
        num_classes=3, input_size=(16, 16), encoder_channels=(3, 4, 6), head_channels=6,
        branches=(BranchConfig(1, 1, 0.25), BranchConfig(3, 1, 0.5), BranchConfig(5, 2, 0.75), BranchConfig(7, 16, 1.0)),
        decoder_lowlevel_channels=2, decoder_channels=4,
    )
    data = DataConfig(train_count=8, val_count=4, size=(16, 16), num_classes=3)
    train = TrainConfig(epochs=2, batch_size=2)
    return RunConfig(model, data, train).validate()


def with_overrides(cfg: RunConfig, **sections) -> RunConfig:
    """Copy of ``cfg`` with ``model={...}``, ``data={...}``, ``train={...}`` keys replaced."""
    d = cfg.to_dict()
    for section, values in sections.items():
        d[section].update(values)
    return RunConfig.from_dict(d)
