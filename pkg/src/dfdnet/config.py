"""Training configuration stored as line-oriented ``key=value`` text."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .generator import GeneratorConfig
from .losses import LossWeights


@dataclass
class TrainingConfig:
    resolution: int = 256
    task: str = "blind"
    batch_size: int = 8
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    lr_patience: int = 2
    val_every: int = 500
    ckpt_every: int = 500
    max_steps: int = 100000
    log_every: int = 10
    # loss weights
    lambda_l2: float = 100.0
    lambda_p: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    lambda_a: tuple[float, ...] = (4.0, 2.0, 1.0, 1.0)
    pixel_loss_reduction: str = "mean"
    use_adversarial: bool = True
    disc_channels: int = 32
    # ablations
    dft_blocks: int = 4
    use_cadain: bool = True
    use_confidence: bool = True
    match_mode: str = "inner"
    # encoder: "toy" or a path written by save_encoder
    encoder: str = "toy"
    encoder_seed: int = 0
    # seeds
    seed: int = 0
    data_seed: int = 0
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.lr_patience < 1:
            raise ConfigurationError(f"lr_patience must be >= 1, got {self.lr_patience}")
        if self.task not in ("x4", "x8", "blind"):
            raise ConfigurationError(f"task must be x4, x8 or blind, got {self.task!r}")
        if len(self.lambda_p) != 4 or len(self.lambda_a) != 4:
            raise ConfigurationError("lambda_p and lambda_a need four values each")

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            l2=self.lambda_l2,
            perceptual=tuple(self.lambda_p),
            adversarial=dict(zip((1, 2, 4, 8), self.lambda_a)) if self.use_adversarial else {},
            pixel_reduction=self.pixel_loss_reduction,
        )

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(resolution=self.resolution, dft_blocks=self.dft_blocks,
                               use_cadain=self.use_cadain, use_confidence=self.use_confidence,
                               match_mode=self.match_mode, seed=self.seed)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            if f.name == "extra":
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        lines += [f"{k}={v}" for k, v in self.extra.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainingConfig":
        known = {f.name: f for f in dataclasses.fields(cls) if f.name != "extra"}
        defaults = cls()
        kwargs, extra = {}, {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep:
                raise ConfigurationError(f"line {n}: expected key=value, got {raw!r}")
            if key not in known:
                extra[key] = value
                continue
            kwargs[key] = _coerce(key, value, getattr(defaults, key))
        return cls(**kwargs, extra=extra)

    @classmethod
    def load(cls, path) -> "TrainingConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def _coerce(key, value, default):
    try:
        if isinstance(default, bool):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(float(x) for x in value.split(","))
        return value
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {value!r}") from None
