"""Model/training configuration.

Config files are plain ``key = value`` lines with ``#`` comments. Values
are looked up through python-decouple so that ``DIFFGAN_<KEY>``
environment variables override the file; explicit overrides (CLI flags)
override both.
"""
from __future__ import annotations

import dataclasses
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from decouple import Config, Csv, RepositoryEmpty

from .diffusion import DiffusionSchedule, make_variance_schedule
from .errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "DIFFGAN_"
_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class ModelConfig:
    preset: str = "tiny"
    n_fft_blocks: int = 2
    hidden: int = 32
    n_heads: int = 2
    conv_kernel: int = 3
    conv_filter: int = 64
    n_wavenet_blocks: int = 4
    wavenet_hidden: int = 32
    mel_bins: int = 16
    n_speakers: int = 4
    n_tokens: int = 24
    T: int = 4
    variance_kernel: int = 3
    disc_channels: Tuple[int, ...] = (16, 32, 64, 32, 1)
    disc_kernels: Tuple[int, ...] = (3, 5, 5, 5, 3)
    disc_strides: Tuple[int, ...] = (1, 2, 2, 1, 1)
    two_stage: bool = False
    latent_dim: int = 0
    beta_min: float = 0.1
    beta_max: float = 40.0

    def __post_init__(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r} (choose from {', '.join(PRESETS)})")
        for name in ("n_fft_blocks", "hidden", "n_heads", "conv_kernel", "conv_filter", "n_wavenet_blocks",
                     "wavenet_hidden", "mel_bins", "n_speakers", "n_tokens", "T", "variance_kernel"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.hidden % self.n_heads:
            raise ConfigError(f"hidden={self.hidden} is not divisible by n_heads={self.n_heads}")
        if self.hidden % 2 or self.wavenet_hidden % 2:
            raise ConfigError("hidden and wavenet_hidden must be even (sinusoidal encodings)")
        if not (len(self.disc_channels) == len(self.disc_kernels) == len(self.disc_strides) == 5):
            raise ConfigError("discriminator tables need 5 entries (3 shared layers + 2 head layers)")
        if self.latent_dim < 0:
            raise ConfigError(f"latent_dim must be >= 0, got {self.latent_dim}")
        if self.beta_min < 0 or self.beta_max < self.beta_min:
            raise ConfigError(f"need beta_max >= beta_min >= 0, got {self.beta_min}, {self.beta_max}")

    @classmethod
    def from_preset(cls, preset: str = "tiny", **overrides: Any) -> "ModelConfig":
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r} (choose from {', '.join(PRESETS)})")
        values = dict(PRESETS[preset])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(preset=preset, **values)

    def replace(self, **changes: Any) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def schedule(self, T: Optional[int] = None) -> DiffusionSchedule:
        """Variance schedule for this model, optionally with a different step count."""
        return make_variance_schedule(self.T if T is None else T, self.beta_min, self.beta_max)

    def to_meta(self) -> Dict[str, str]:
        return {f"model.{f.name}": _format_value(getattr(self, f.name)) for f in dataclasses.fields(self)}

    @classmethod
    def from_meta(cls, meta: Mapping[str, str]) -> "ModelConfig":
        values = {}
        for f in dataclasses.fields(cls):
            key = f"model.{f.name}"
            if key in meta:
                values[f.name] = _parse_value(f.default, meta[key], key)
        return cls(**values)

    def to_text(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in self.to_meta().items())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        meta = {}
        for raw in text.splitlines():
            key, sep, value = raw.partition("=")
            if sep:
                meta[key.strip()] = value.strip()
        return cls.from_meta(meta)


PRESETS: Dict[str, Dict[str, Any]] = {
    "paper": dict(
        n_fft_blocks=4,
        hidden=256,
        n_heads=2,
        conv_kernel=9,
        conv_filter=1024,
        n_wavenet_blocks=20,
        wavenet_hidden=256,
        mel_bins=80,
        disc_channels=(64, 128, 512, 128, 1),
    ),
    "tiny": dict(
        n_fft_blocks=2,
        hidden=32,
        n_heads=2,
        conv_kernel=3,
        conv_filter=64,
        n_wavenet_blocks=4,
        wavenet_hidden=32,
        mel_bins=16,
        disc_channels=(16, 32, 64, 32, 1),
    ),
}


STAGE1_OBJECTIVES = ("diffused", "recon")


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    steps: int = 1000
    batch_size: int = 4
    seed: int = 0
    g_lr: float = 1e-4
    d_lr: float = 2e-4
    adam_betas: Tuple[float, ...] = (0.5, 0.9)
    adam_eps: float = 1e-8
    decay_rate: float = 0.999
    decay_interval: int = 1000
    stage1_iters: int = 1000
    stage1_betas: Tuple[float, ...] = (0.9, 0.98)
    stage1_warmup: int = 4000
    stage1_objective: str = "diffused"
    lambda_d: float = 0.1
    lambda_p: float = 0.1
    lambda_e: float = 0.1
    use_mel_loss: bool = True
    use_fm_loss: bool = True
    checkpoint_interval: int = 500
    log_interval: int = 50

    def __post_init__(self) -> None:
        if self.g_lr <= 0 or self.d_lr <= 0:
            raise ConfigError(f"learning rates must be positive (g_lr={self.g_lr}, d_lr={self.d_lr})")
        if not 0 < self.decay_rate <= 1:
            raise ConfigError(f"decay_rate must lie in (0, 1], got {self.decay_rate}")
        if self.decay_interval < 1 or self.stage1_warmup < 1:
            raise ConfigError("decay_interval and stage1_warmup must be positive")
        if self.checkpoint_interval < 1 or self.log_interval < 1:
            raise ConfigError("checkpoint_interval and log_interval must be positive")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.steps < 0 or self.stage1_iters < 0:
            raise ConfigError("steps and stage1_iters must be >= 0")
        if self.stage1_objective not in STAGE1_OBJECTIVES:
            raise ConfigError(f"stage1_objective must be one of {STAGE1_OBJECTIVES}, got {self.stage1_objective!r}")
        if len(self.adam_betas) != 2 or len(self.stage1_betas) != 2:
            raise ConfigError("adam_betas and stage1_betas need exactly two values")

    @property
    def T(self) -> int:
        return self.model.T

    @property
    def beta_min(self) -> float:
        return self.model.beta_min

    @property
    def beta_max(self) -> float:
        return self.model.beta_max

    def schedule(self) -> DiffusionSchedule:
        return self.model.schedule()

    def replace(self, **changes: Any) -> "TrainConfig":
        model_changes = {k: changes.pop(k) for k in list(changes) if k in MODEL_KEYS}
        if model_changes:
            changes["model"] = changes.get("model", self.model).replace(**model_changes)
        return dataclasses.replace(self, **changes)


MODEL_KEYS = tuple(f.name for f in dataclasses.fields(ModelConfig))
TRAIN_KEYS = tuple(f.name for f in dataclasses.fields(TrainConfig) if f.name != "model")
KNOWN_KEYS = frozenset(MODEL_KEYS + TRAIN_KEYS)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(default: Any, raw: str, key: str) -> Any:
    try:
        return _caster(default)(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc


_TRUE = frozenset({"1", "true", "yes", "on", "y", "t"})
_FALSE = frozenset({"0", "false", "no", "off", "n", "f", ""})


def _to_bool(raw: Any) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"invalid truth value {raw!r}")


def _caster(default: Any):
    if isinstance(default, bool):
        return _to_bool
    if isinstance(default, tuple):
        item = float if any(isinstance(v, float) for v in default) else int
        return Csv(cast=item, post_process=tuple)
    return type(default)


class RepositoryConf(RepositoryEmpty):
    """decouple repository over a parsed ``key = value`` file."""

    def __init__(self, values: Mapping[str, str]) -> None:
        self.data = {ENV_PREFIX + k.upper(): v for k, v in values.items()}

    def __contains__(self, key: str) -> bool:
        return key in self.data

    def __getitem__(self, key: str) -> str:
        return self.data[key]


def parse_config_file(path: Path | str) -> Tuple[Dict[str, str], Dict[str, int]]:
    """Parse a ``key = value`` file; returns (values, line numbers per key)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from exc
    values: Dict[str, str] = {}
    lines: Dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not _KEY_RE.match(key):
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", str(path), lineno)
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", str(path), lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", str(path), lineno)
        values[key] = value
        lines[key] = lineno
    logger.debug("Parsed %d config keys from %s", len(values), path)
    return values, lines


def parse_overrides(pairs) -> Dict[str, Any]:
    """Turn ``key=value`` strings (``--set`` flags) into typed overrides."""
    defaults = {f.name: f.default for f in dataclasses.fields(ModelConfig)}
    defaults.update({f.name: getattr(TrainConfig(), f.name) for f in dataclasses.fields(TrainConfig) if f.name != "model"})
    out: Dict[str, Any] = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        key = key.strip()
        if not sep or key not in KNOWN_KEYS:
            raise ConfigError(f"--set expects key=value with a known key, got {pair!r}")
        out[key] = _parse_value(defaults[key], value.strip(), key)
    return out


def load_train_config(path: Optional[Path | str] = None, overrides: Optional[Mapping[str, Any]] = None) -> TrainConfig:
    """Resolve a TrainConfig: overrides > DIFFGAN_* environment > file > defaults."""
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = set(overrides) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown override(s): {', '.join(sorted(unknown))}")
    values, lines = parse_config_file(path) if path is not None else ({}, {})
    config = Config(RepositoryConf(values))

    def lookup(key: str, default: Any) -> Any:
        if key in overrides:
            return overrides[key]
        try:
            return config(ENV_PREFIX + key.upper(), default=_format_value(default), cast=_caster(default))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}", str(path) if path else None, lines.get(key)) from exc

    preset = lookup("preset", "tiny")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}", str(path) if path else None, lines.get("preset"))
    base = ModelConfig.from_preset(preset)
    model_values = {name: lookup(name, getattr(base, name)) for name in MODEL_KEYS if name != "preset"}
    model = ModelConfig(preset=preset, **model_values)
    defaults = TrainConfig(model=model)
    train_values = {name: lookup(name, getattr(defaults, name)) for name in TRAIN_KEYS}
    return TrainConfig(model=model, **train_values)


__all__ = [
    "ModelConfig",
    "TrainConfig",
    "PRESETS",
    "STAGE1_OBJECTIVES",
    "KNOWN_KEYS",
    "RepositoryConf",
    "parse_config_file",
    "parse_overrides",
    "load_train_config",
]
