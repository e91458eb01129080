"""Model, training and corpus configuration.

Config files are YAML mappings with up to three sections::

    model:                # ModelConfig fields
      feature_size: 64
      cnn:                # CnnConfig fields
        channels: [16, 32, 64]
    train:                # TrainConfig fields
      initial_lr: 0.001
    synth:                # SynthConfig fields
      n_lines: 2000

Unknown keys anywhere are rejected. Command-line overrides use dotted
keys (``model.cnn.channels=[8,16,32]``); the value is parsed as YAML.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

# 80 content characters; with the three specials this gives |A| = 83.
PAPER_CHARS = (" !\"#&'()*+,-./0123456789:;?"
               "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
               "abcdefghijklmnopqrstuvwxyz|")
# 13 content characters; |A| = 16.
DESK_CHARS = " adehilmnorst"


@dataclass
class CnnConfig:
    channels: tuple[int, ...] = (16, 32, 64)
    kernel_sizes: tuple[int, ...] = (3, 3, 3)
    strides: tuple[int, ...] = (2, 2, 2)
    convs_per_stage: int = 2
    last_stage_stride_one: bool = True
    input_height: int = 64
    norm: str = "none"          # "none" | "channel" (per-pixel LayerNorm over channels)

    def validate(self) -> None:
        n = len(self.channels)
        if n == 0 or len(self.kernel_sizes) != n or len(self.strides) != n:
            raise ConfigError("cnn channels, kernel_sizes and strides must have equal nonzero length")
        if any(s < 1 for s in self.strides) or any(c < 1 for c in self.channels):
            raise ConfigError("cnn strides and channels must be >= 1")
        if any(k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigError("cnn kernel sizes must be odd")
        if self.convs_per_stage not in (1, 2):
            raise ConfigError("convs_per_stage must be 1 or 2")
        _choice("cnn.norm", self.norm, ("none", "channel"))
        if self.input_height % self.vertical_stride:
            raise ConfigError(f"input height {self.input_height} not divisible by vertical stride "
                              f"{self.vertical_stride}")

    @property
    def vertical_stride(self) -> int:
        out = 1
        for s in self.strides:
            out *= s
        return out

    @property
    def horizontal_strides(self) -> tuple[int, ...]:
        strides = list(self.strides)
        if self.last_stage_stride_one:
            strides[-1] = 1
        return tuple(strides)

    @property
    def horizontal_stride(self) -> int:
        out = 1
        for s in self.horizontal_strides:
            out *= s
        return out

    @property
    def output_height(self) -> int:
        return self.input_height // self.vertical_stride


@dataclass
class ModelConfig:
    alphabet: str = DESK_CHARS
    feature_size: int = 64
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    heads: int = 2
    max_length: int = 32
    dropout: float = 0.1
    ffn_multiplier: int = 4
    activation: str = "relu"
    attention_scale: str = "model"
    norm_position: str = "post"
    cross_attention: str = "per_block"
    visual_temporal_encoding: bool = True
    text_temporal_encoding: bool = True
    layer_norm_eps: float = 1e-5
    precision: int = 32
    cnn: CnnConfig = field(default_factory=CnnConfig)

    def validate(self) -> None:
        self.cnn.validate()
        if self.feature_size % 2:
            raise ConfigError(f"feature_size must be even for the temporal encoding, got {self.feature_size}")
        if self.heads < 1 or self.feature_size % self.heads:
            raise ConfigError(f"heads ({self.heads}) must divide feature_size ({self.feature_size})")
        if self.encoder_blocks < 0 or self.decoder_blocks < 1:
            raise ConfigError("need encoder_blocks >= 0 and decoder_blocks >= 1")
        if self.max_length < 3:
            raise ConfigError("max_length must leave room for start and end symbols")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if len(set(self.alphabet)) != len(self.alphabet) or not self.alphabet:
            raise ConfigError("alphabet must be a nonempty string of distinct characters")
        _choice("activation", self.activation, ("relu", "gelu"))
        _choice("attention_scale", self.attention_scale, ("model", "head"))
        _choice("norm_position", self.norm_position, ("post", "pre"))
        _choice("cross_attention", self.cross_attention, ("per_block", "final_only"))
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        if not self.layer_norm_eps > 0:
            raise ConfigError("layer_norm_eps must be positive")


@dataclass
class TrainConfig:
    initial_lr: float = 2e-4
    halving_period: int = 20
    label_smoothing: float = 0.4
    batch_size: int = 8
    max_epochs: int = 200
    early_stop_patience: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = 5.0
    pad_width: int | None = None
    workers: int = 1
    train_fraction: float = 1.0

    def validate(self) -> None:
        if not self.initial_lr >= 0:
            raise ConfigError("initial_lr must be >= 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0 or self.halving_period < 1:
            raise ConfigError("batch_size and halving_period must be >= 1, max_epochs >= 0")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must lie in (0, 1]")
        if self.workers != 1:
            raise ConfigError("only workers=1 is supported (deterministic data loading)")


@dataclass
class SynthConfig:
    n_lines: int = 2000
    seed: int = 0
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    min_words: int = 1
    max_words: int = 3
    min_word_length: int = 2
    max_word_length: int = 6
    max_chars: int = 22
    corpus: str | None = None
    augment: bool = True
    image_format: str = "pgm"

    def validate(self) -> None:
        if self.n_lines < 1:
            raise ConfigError("n_lines must be >= 1")
        if not (0 <= self.val_fraction < 1 and 0 <= self.test_fraction < 1
                and self.val_fraction + self.test_fraction < 1):
            raise ConfigError("val_fraction + test_fraction must be < 1")
        if not 1 <= self.min_words <= self.max_words:
            raise ConfigError("need 1 <= min_words <= max_words")
        if not 1 <= self.min_word_length <= self.max_word_length:
            raise ConfigError("need 1 <= min_word_length <= max_word_length")
        _choice("image_format", self.image_format, ("pgm", "png"))


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        self.synth.validate()


def _choice(name: str, value: str, allowed: tuple[str, ...]) -> None:
    if value not in allowed:
        raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")


def desk_profile() -> RunConfig:
    cfg = RunConfig()
    cfg.train.initial_lr = 1e-3
    cfg.train.halving_period = 20
    return cfg


def paper_profile() -> RunConfig:
    """Hyperparameters pinned to the published setup (IAM-scale)."""
    cfg = RunConfig()
    cfg.model = ModelConfig(alphabet=PAPER_CHARS, feature_size=1024, encoder_blocks=4,
                            decoder_blocks=4, heads=8, max_length=89, dropout=0.1)
    cfg.train = TrainConfig(initial_lr=2e-4, halving_period=20, label_smoothing=0.4, pad_width=2227)
    return cfg


PROFILES = {"desk": desk_profile, "paper": paper_profile}


def to_dict(obj) -> dict[str, Any]:
    def convert(v):
        if dataclasses.is_dataclass(v):
            return {f.name: convert(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return [convert(x) for x in v]
        return v

    return convert(obj)


def from_dict(cls, data: dict[str, Any] | None, base=None):
    """Build dataclass ``cls`` from ``data`` layered on ``base`` (or defaults)."""
    obj = dataclasses.replace(base) if base is not None else cls()
    if data is None:
        return obj
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {cls.__name__}.{key}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            value = from_dict(type(current), value, current)
        elif isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        setattr(obj, key, value)
    return obj


def load_config(path: str | Path | None = None, profile: str = "desk",
                overrides: list[str] | None = None) -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = PROFILES[profile]()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        cfg = from_dict(RunConfig, data, cfg)
    for item in overrides or []:
        cfg = apply_override(cfg, item)
    cfg.validate()
    return cfg


def apply_override(cfg: RunConfig, item: str) -> RunConfig:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form dotted.key=value")
    key, raw = item.split("=", 1)
    value = yaml.safe_load(raw)
    nested: Any = value
    for part in reversed(key.strip().split(".")):
        nested = {part: nested}
    return from_dict(RunConfig, nested, cfg)


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(to_dict(cfg), fh, sort_keys=False, allow_unicode=True)
