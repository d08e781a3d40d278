"""Experiment configuration files.

Flat INI-style key/value text with four sections ([model], [train],
[data], [run]); no code execution, every key optional except the
training data path, unknown keys rejected. The full schema with
defaults is in the README and mirrors the ModelConfig / TrainConfig
dataclasses plus the run-level fields below.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .embedding import ScalingScheme
from .model import DECODE_MODES, ModelConfig
from .train import TrainConfig

OUTPUT_ROOT_ENV = "SEQLAB_OUTPUT_ROOT"


class ConfigError(ValueError):
    """Bad experiment configuration; message names the key or line."""


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_data: Optional[str] = None
    iid_valid_data: Optional[str] = None
    gen_valid_data: Optional[str] = None
    gen_test_data: Optional[str] = None
    out_dir: str = "runs/experiment"
    decode_mode: str = "plus_eos"
    seeds: tuple[int, ...] = (0,)

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        if self.train_data is None:
            raise ConfigError("[data] train is required")
        if self.decode_mode not in DECODE_MODES:
            raise ConfigError(f"[run] decode_mode must be one of {DECODE_MODES}")
        if not self.seeds:
            raise ConfigError("[run] seeds must not be empty")

    def resolved_out_dir(self) -> Path:
        """Relative output dirs resolve under $SEQLAB_OUTPUT_ROOT if set."""
        out = Path(self.out_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            return Path(root) / out
        return out


def _coerce(section: str, key: str, raw: str, target_type):
    try:
        if target_type is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is ScalingScheme:
            return ScalingScheme.parse(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def _fill_dataclass(obj, section: str, items: dict[str, str]) -> None:
    types = {f.name: f.type for f in dataclasses.fields(obj)}
    hints = {name: type(getattr(obj, name)) if getattr(obj, name) is not None
             else str for name in types}
    for key, raw in items.items():
        if key not in types:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        target = hints[key]
        if isinstance(getattr(obj, key), ScalingScheme):
            target = ScalingScheme
        setattr(obj, key, _coerce(section, key, raw, target))


def load_experiment_config(path) -> ExperimentConfig:
    """Parse and validate one experiment config file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh, source=str(path))
    except FileNotFoundError:
        raise
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    known = {"model", "train", "data", "run"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")

    config = ExperimentConfig()
    if parser.has_section("model"):
        _fill_dataclass(config.model, "model", dict(parser.items("model")))
    if parser.has_section("train"):
        _fill_dataclass(config.train, "train", dict(parser.items("train")))

    data_keys = {"train": "train_data", "iid_valid": "iid_valid_data",
                 "gen_valid": "gen_valid_data", "gen_test": "gen_test_data"}
    if parser.has_section("data"):
        for key, raw in parser.items("data"):
            if key not in data_keys:
                raise ConfigError(f"[data] unknown key {key!r}")
            setattr(config, data_keys[key], raw.strip())

    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key == "out_dir":
                config.out_dir = raw.strip()
            elif key == "decode_mode":
                config.decode_mode = raw.strip()
            elif key == "seeds":
                try:
                    config.seeds = tuple(int(s) for s in raw.split(","))
                except ValueError as exc:
                    raise ConfigError(f"[run] seeds: {exc}") from exc
            else:
                raise ConfigError(f"[run] unknown key {key!r}")

    try:
        config.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config
