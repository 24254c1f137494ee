"""Flat ``key = value`` experiment configuration with an explicit schema version.

Blank lines and ``#`` comments are ignored. Lists are comma separated. Every
key has a declared type, so a typo or an unknown key fails loudly instead of
being silently dropped.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .model import TrainConfig

SCHEMA_VERSION = 1
NOISE_MODES = ("test", "train", "both")


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _strs(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    # data source
    data: str = "synthetic"
    modalities: int = 3
    classes: int = 4
    dims: tuple = (32, 32, 32)
    n_samples: int = 2000
    separation: tuple = (6.0, 6.0, 6.0)
    data_seed: int = 0
    tabular_paths: tuple = ()
    label_path: str = ""
    delimiter: str = ","
    header: bool = False
    split: tuple = (0.6, 0.2, 0.2)
    # noise
    noise_modalities: tuple = (0,)
    noise_fraction: float = 1.0
    noise_mode: str = "test"
    sigmas: tuple = (0.0,)
    train_sigma: float = 0.0
    variants: tuple = ("full",)
    # training (mirrors TrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def seed(self) -> int:
        return self.train.seed

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}; expected {SCHEMA_VERSION}")
        if self.data not in ("synthetic", "tabular"):
            raise ConfigError(f"data must be 'synthetic' or 'tabular', got {self.data!r}")
        if self.data == "tabular" and (not self.tabular_paths or not self.label_path):
            raise ConfigError("tabular data needs tabular_paths and label_path")
        if self.noise_mode not in NOISE_MODES:
            raise ConfigError(f"noise_mode must be one of {NOISE_MODES}")
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise ConfigError("noise_fraction must lie in [0, 1]")
        if any(s < 0 for s in self.sigmas) or self.train_sigma < 0:
            raise ConfigError("noise sigmas must be non-negative")
        if len(self.split) != 3:
            raise ConfigError("split needs three ratios (train, val, test)")
        try:
            self.train.validate()
            for v in self.variants:
                self.train.replace(variant=v).validate()
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def snapshot(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "train"}
        out.update(asdict(self.train))
        return out

    def to_text(self) -> str:
        lines = []
        for key, value in self.snapshot().items():
            if isinstance(value, tuple | list):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


_OWN = {f.name: f for f in fields(ExperimentConfig) if f.name != "train"}
_TRAIN = {f.name: f for f in fields(TrainConfig)}
_PARSERS = {
    "dims": _ints, "separation": _floats, "tabular_paths": _strs, "split": _floats,
    "noise_modalities": _ints, "sigmas": _floats, "variants": _strs,
}


def _parse_value(key: str, text: str, default):
    if key in _PARSERS:
        return _PARSERS[key](text)
    if isinstance(default, bool):
        return _bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text.strip()


def apply_overrides(cfg: ExperimentConfig, values: dict) -> ExperimentConfig:
    """Return a copy with ``values`` (raw strings or typed values) applied."""
    own = {k: v for k, v in asdict(cfg).items() if k != "train"}
    train = asdict(cfg.train)
    for key, raw in values.items():
        if key in _OWN:
            target = own
        elif key in _TRAIN:
            target = train
        else:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            target[key] = _parse_value(key, raw, target[key]) if isinstance(raw, str) else raw
        except ValueError as err:
            raise ConfigError(f"bad value for {key}: {err}") from None
    own["train"] = TrainConfig(**train)
    return ExperimentConfig(**own)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        values[key] = value
    if "schema_version" not in values:
        raise ConfigError(f"{source}: missing schema_version")
    return apply_overrides(ExperimentConfig(), values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), str(path))
