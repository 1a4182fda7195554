"""Run configuration: dataclasses, the key=value file format, presets.

The config file is flat ``section.key = value`` text (``#`` comments).
Serialization is canonical (fixed field order), so the SHA-256 of the
formatted text doubles as the compatibility hash stored in checkpoints.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from .discriminator import DiscriminatorConfig
from .errors import ConfigError
from .generator import GeneratorConfig
from .losses import LossWeights

CONFIG_VERSION = 1


@dataclass
class TrainConfig:
    iterations: int = 50_000
    batch_size: int = 8
    segment_frames: int = 64
    max_mask_frames: int = 25
    lr_initial: float = 2e-4
    lr_decay: float = 0.999
    adam_beta1: float = 0.5
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 5000
    enable_masking: bool = True
    enable_adv2: bool = True

    def validate(self) -> None:
        if self.iterations < 1 or self.batch_size < 1:
            raise ConfigError("iterations and batch_size must be positive")
        if self.lr_initial <= 0 or not (0.0 < self.lr_decay <= 1.0):
            raise ConfigError("learning rate must be positive with decay in (0, 1]")
        if self.segment_frames < 4:
            raise ConfigError("segments must span at least 4 frames (one analysis window)")
        if self.max_mask_frames < 0 or self.max_mask_frames > self.segment_frames:
            raise ConfigError("max_mask_frames must lie in [0, segment_frames]")


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def validate(self) -> None:
        self.train.validate()
        self.weights.validate()
        self.generator.validate()
        self.discriminator.validate()
        if self.generator.use_mask_input != self.train.enable_masking:
            raise ConfigError("generator mask input must match the masking task flag")


_SECTIONS = ("train", "weights", "generator", "discriminator")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(text: str, kind):
    text = text.strip()
    if kind is bool:
        if text not in ("true", "false"):
            raise ConfigError(f"expected true/false, got {text!r}")
        return text == "true"
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is str:
        return text
    raise ConfigError(f"unsupported config field type {kind}")


def format_config(cfg: RunConfig) -> str:
    lines = [f"config_version = {CONFIG_VERSION}"]
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    seen_version = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "config_version":
            if int(value) != CONFIG_VERSION:
                raise ConfigError(f"unsupported config version {value}")
            seen_version = True
            continue
        if "." not in key:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        obj = getattr(cfg, section)
        if name not in {f.name for f in fields(obj)}:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        current = getattr(obj, name)
        if isinstance(current, tuple):
            # every tuple-valued knob holds ints (kernels, strides, widths)
            parsed = tuple(int(p) for p in value.split(",")) if value else ()
        else:
            parsed = _parse_value(value, type(current))
        setattr(obj, name, parsed)
    if not seen_version:
        raise ConfigError("config file lacks a config_version line")
    return cfg


def load_config(path) -> RunConfig:
    from pathlib import Path
    cfg = parse_config(Path(path).read_text())
    cfg.validate()
    return cfg


def save_config(cfg: RunConfig, path) -> None:
    from pathlib import Path
    Path(path).write_text(format_config(cfg))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(format_config(cfg).encode()).hexdigest()


# ---------------------------------------------------------------------------
# presets


def paper_config() -> RunConfig:
    """Published hyperparameters; 50k iterations is a long CPU run."""
    return RunConfig()


def desk_config() -> RunConfig:
    """Small widths and short schedule for CPU experimentation."""
    cfg = RunConfig()
    cfg.train.iterations = 2000
    cfg.train.checkpoint_every = 500
    cfg.generator.base_channels = 32
    cfg.generator.glu_channels = 8
    return cfg


def variant_config(variant: int, base: RunConfig | None = None) -> RunConfig:
    """Ablation variants 4..7: plain cycle, +masking, +second adversarial, +GLU."""
    if variant not in (4, 5, 6, 7):
        raise ConfigError(f"unknown experiment variant {variant}")
    cfg = base if base is not None else desk_config()
    cfg.train.enable_masking = variant >= 5
    cfg.train.enable_adv2 = variant >= 6
    cfg.generator.use_mask_input = variant >= 5
    cfg.generator.use_glu_encoder = variant >= 7
    cfg.validate()
    return cfg
