"""Experiment configuration: a flat ``section.key = value`` text format.

Values are JSON literals (numbers, ``true``/``false``, quoted strings, lists).
Lines starting with ``#`` are comments.  Unknown keys are rejected.

    run_id = "desk"
    dims = [2, 4]
    seeds = [0, 1, 2]
    dataset.k = 64
    train.epochs = 60
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .dataset import MixtureSpec
from .errors import ConfigError
from .models import VariantKind
from .sampler import IntegratorSpec
from .training import TrainConfig

__all__ = ["ExperimentConfig", "load_config", "parse_config", "dump_config", "SEED_ENV"]

SEED_ENV = "TGFLOW_SEED"


@dataclass(frozen=True)
class DatasetConfig:
    k: int = 10_000
    alpha: float = 250.0
    sigma2: float = 0.5
    seed: int = 0
    n_train: int = 45_000
    n_test: int = 15_000
    rescale: bool = False

    def spec(self, n: int) -> MixtureSpec:
        return MixtureSpec(n=n, k=self.k, alpha=self.alpha, sigma2=self.sigma2, seed=self.seed)

    @property
    def scale(self) -> float:
        """Factor applied to data before training (1/alpha when rescaling)."""
        return 1.0 / self.alpha if self.rescale else 1.0


@dataclass(frozen=True)
class SampleConfig:
    count: int = 1000
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    run_id: str = "default"
    output_dir: str = "runs"
    dims: tuple[int, ...] = (2, 4)
    variants: tuple[VariantKind, ...] = tuple(VariantKind)
    seeds: tuple[int, ...] = (0, 1, 2)
    budget: int = 12_000
    aux_share: float = 0.5
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    integrator: IntegratorSpec = field(default_factory=IntegratorSpec)
    sample: SampleConfig = field(default_factory=SampleConfig)

    def __post_init__(self) -> None:
        if not self.dims:
            raise ConfigError("dims must be nonempty")
        if not self.variants:
            raise ConfigError("variants must be nonempty")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if any(n < 1 for n in self.dims):
            raise ConfigError(f"dims must be >= 1, got {list(self.dims)}")
        if any(n < 2 for n in self.dims) and any(v.has_gauge for v in self.variants):
            raise ConfigError("gauge variants need every N >= 2")
        if self.budget < 1:
            raise ConfigError(f"budget must be positive, got {self.budget}")
        if not 0.0 < self.aux_share < 1.0:
            raise ConfigError(f"aux_share must lie in (0, 1), got {self.aux_share}")
        if not self.run_id or "/" in self.run_id:
            raise ConfigError(f"invalid run_id {self.run_id!r}")
        if self.dataset.n_train < 0 or self.dataset.n_test < 0:
            raise ConfigError("dataset sizes must be >= 0")
        if self.sample.count < 0:
            raise ConfigError("sample.count must be >= 0")
        # Surfaces MixtureSpec validation before any run starts.
        for n in self.dims:
            self.dataset.spec(n)

    def train_config(self, seed: int) -> TrainConfig:
        return replace(self.train, seed=seed)

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.run_id

    def cells(self) -> list[tuple[int, VariantKind, int]]:
        return [(n, v, s) for n in self.dims for v in self.variants for s in self.seeds]


_SECTIONS = {
    "dataset": DatasetConfig,
    "train": TrainConfig,
    "integrator": IntegratorSpec,
    "sample": SampleConfig,
}
_TOP = {f.name: f for f in fields(ExperimentConfig) if f.name not in _SECTIONS}
# Per-cell seeds come from the top-level ``seeds`` list.
_HIDDEN = {("train", "seed")}


def _coerce(key: str, value: Any, default: Any) -> Any:
    def bad(what: str) -> ConfigError:
        return ConfigError(f"{key}: expected {what}, got {value!r}")

    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise bad("true/false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise bad("a quoted string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise bad("a list")
        if key == "variants":
            return tuple(VariantKind.parse(v) for v in value)
        if any(isinstance(v, bool) or not isinstance(v, int) for v in value):
            raise bad("a list of integers")
        return tuple(value)
    raise ConfigError(f"{key}: unsupported type")


def parse_config(text: str, env: dict[str, str] | None = None) -> ExperimentConfig:
    top: dict[str, Any] = {}
    sections: dict[str, dict[str, Any]] = {name: {} for name in _SECTIONS}
    defaults = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value_text = (part.strip() for part in line.partition("="))
        try:
            value = json.loads(value_text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {lineno}: {key}: value is not a JSON literal: {value_text!r}") from exc
        section, dot, name = key.partition(".")
        if dot:
            if section not in _SECTIONS or (section, name) in _HIDDEN:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            default_obj = getattr(defaults, section)
            if name not in {f.name for f in fields(default_obj)}:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if name in sections[section]:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            sections[section][name] = _coerce(key, value, getattr(default_obj, name))
        else:
            if key not in _TOP:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in top:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            top[key] = _coerce(key, value, getattr(defaults, key))
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            top["seeds"] = (int(env[SEED_ENV]),)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from exc
    built = {name: replace(getattr(defaults, name), **vals) for name, vals in sections.items()}
    return ExperimentConfig(**top, **built)


def load_config(path: str | Path | None, env: dict[str, str] | None = None) -> ExperimentConfig:
    if path is None:
        return parse_config("", env)
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), env)


def _literal(value: Any) -> str:
    if isinstance(value, tuple):
        return json.dumps([v.value if isinstance(v, VariantKind) else v for v in value])
    return json.dumps(value)


def dump_config(cfg: ExperimentConfig) -> str:
    """Text form that :func:`parse_config` reads back to an equal config."""
    lines = []
    for name in _TOP:
        lines.append(f"{name} = {_literal(getattr(cfg, name))}")
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            if (section, f.name) in _HIDDEN:
                continue
            lines.append(f"{section}.{f.name} = {_literal(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def config_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return {line.partition(" = ")[0]: json.loads(line.partition(" = ")[2]) for line in dump_config(cfg).splitlines()}
