"""Experiment configuration: flat ``key = value`` files with CLI overrides."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

METHODS = ("bptt", "dni", "bptt_restart", "dni_restart", "alternating")

# keys that do not change the training trajectory
UNHASHED = frozenset({"train", "valid", "test", "epochs", "ckpt_every"})


@dataclass
class ExperimentConfig:
    method: str = "bptt"
    layers: int = 2
    hidden: int = 64
    embed: int = 32
    k: int = 1
    bptt: int = 16
    batch: int = 16
    epochs: int = 30
    e_base: int = 2
    lr: float = 3e-3
    lr_min: float = 0.0
    dni_lr: float = 1e-4
    dni_hidden: int = 16
    seed: int = 1234
    precision: str = "float64"
    train: str = ""
    valid: str = ""
    test: str = ""
    tokenization: str = "char"
    max_vocab: int = 0
    train_dni_during_real: bool = True
    clip: float = 10.0
    reset_on_restart: bool = True
    freeze_dni: bool = False
    dropout: float = 0.0
    ckpt_every: int = 5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        for key in ("layers", "hidden", "embed", "bptt", "batch", "e_base", "dni_hidden"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.epochs < 0 or self.ckpt_every < 0 or self.max_vocab < 0:
            raise ConfigError("epochs, ckpt_every and max_vocab must be >= 0")
        if self.k not in (1, 2):
            raise ConfigError(f"k must be 1 or 2, got {self.k}")
        if not self.lr > 0 or not self.dni_lr > 0 or not 0 <= self.lr_min <= self.lr:
            raise ConfigError("need lr > 0, dni_lr > 0 and 0 <= lr_min <= lr")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.tokenization not in ("char", "word"):
            raise ConfigError(f"tokenization must be char or word, got {self.tokenization!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    # -- (de)serialization ------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        return cls(**_coerce_all(values))

    def replace(self, **overrides) -> "ExperimentConfig":
        merged = self.to_dict()
        merged.update(_coerce_all(overrides))
        return ExperimentConfig(**merged)

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_dict().items())

    def config_hash(self) -> str:
        items = [f"{k}={_format(v)}" for k, v in self.to_dict().items() if k not in UNHASHED]
        return hashlib.sha256("\n".join(items).encode()).hexdigest()


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, raw):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    if not isinstance(raw, str):
        if kind == "bool" and not isinstance(raw, bool):
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
        return raw
    text = raw.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return text


def _coerce_all(values: dict) -> dict:
    return {k: _coerce(k, v) for k, v in values.items()}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the file at ``path``, then ``overrides``; later wins.

    Corpus paths in the file are resolved relative to the file's directory.
    """
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text(encoding="utf-8")))
        for key in ("train", "valid", "test"):
            if values.get(key) and not Path(values[key]).is_absolute():
                values[key] = str((p.parent / values[key]).resolve())
    for key, value in (overrides or {}).items():
        values[key.replace("-", "_")] = value
    return ExperimentConfig.from_dict(values)
