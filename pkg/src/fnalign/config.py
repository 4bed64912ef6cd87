"""Declarative run configuration: one JSON file drives every command, with
individual keys overridable from the command line (`--set a.b=value`)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .corpus import SynthConfig
from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig

_SECTIONS = ("paths", "synth", "synth_test", "model", "train")


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/out"
    paths: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    synth_test: dict | None = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def path(self, key: str, default: str | None = None) -> Path:
        value = self.paths.get(key, default)
        if value is None:
            raise ConfigError(f"config: paths.{key} is required for this command")
        return Path(value)

    def out_path(self, name: str) -> Path:
        return Path(self.out_dir) / name

    def synth_config(self) -> SynthConfig:
        return _build(SynthConfig, {"seed": self.seed, **self.synth}, "synth")

    def synth_test_config(self) -> SynthConfig:
        base = {"seed": self.seed, **self.synth}
        base["seed"] = int(base["seed"]) + 1  # test split draws its own stream
        if self.synth_test:
            base.update(self.synth_test)
        return _build(SynthConfig, base, "synth_test")

    def model_config(self, vocab_size: int, n_relations: int) -> ModelConfig:
        merged = {"vocab_size": vocab_size, "n_relations": n_relations, **self.model}
        if "kernel_sizes" in merged:
            merged["kernel_sizes"] = tuple(merged["kernel_sizes"])
        return _build(ModelConfig, merged, "model")

    def train_config(self) -> TrainConfig:
        return _build(TrainConfig, {"seed": self.seed, **self.train}, "train")


def _build(cls, values: dict, section: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"config: unknown {section} keys: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"config: bad {section} section ({exc})") from None


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON in {path} ({exc.msg})") from None
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    unknown = set(raw) - set(_SECTIONS) - {"seed", "out_dir"}
    if unknown:
        raise ConfigError(f"config: unknown top-level keys: {sorted(unknown)}")
    for section in _SECTIONS:
        value = raw.get(section)
        if value is not None and not isinstance(value, dict):
            raise ConfigError(f"config: section {section} must be an object")
    return RunConfig(
        seed=int(raw.get("seed", 0)),
        out_dir=str(raw.get("out_dir", "runs/out")),
        paths=dict(raw.get("paths", {})),
        synth=dict(raw.get("synth", {})),
        synth_test=dict(raw["synth_test"]) if raw.get("synth_test") else None,
        model=dict(raw.get("model", {})),
        train=dict(raw.get("train", {})),
    )


def _parse_literal(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text  # bare strings are allowed


def apply_overrides(config: RunConfig, pairs: list[str]) -> RunConfig:
    """Apply `section.key=value` (or `seed=7`, `out_dir=...`) overrides."""
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, text = pair.split("=", 1)
        value = _parse_literal(text)
        parts = key.split(".")
        if len(parts) == 1:
            if parts[0] == "seed":
                config.seed = int(value)
            elif parts[0] == "out_dir":
                config.out_dir = str(value)
            else:
                raise ConfigError(f"--set: unknown top-level key {parts[0]!r}")
        elif len(parts) == 2 and parts[0] in _SECTIONS:
            section = getattr(config, parts[0]) or {}
            section[parts[1]] = value
            setattr(config, parts[0], section)
        else:
            raise ConfigError(f"--set: unknown key {key!r}")
    return config
