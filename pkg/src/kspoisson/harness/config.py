"""Experiment configuration: JSON-serialisable, validated against the registry."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

FILTER_CHOICES = ("ekspf", "sir", "ensrf", "all")


class ConfigError(ValueError):
    """Invalid experiment configuration (bad name, unknown override, ...)."""


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    n_runs: int = 20
    ensemble_sizes: list[int] = field(default_factory=lambda: [200])
    filter: str = "all"
    overrides: dict = field(default_factory=dict)
    out_dir: str = "artifacts"

    def __post_init__(self):
        from .experiments import EXPERIMENTS

        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {sorted(EXPERIMENTS)}")
        if isinstance(self.ensemble_sizes, int):
            self.ensemble_sizes = [self.ensemble_sizes]
        self.ensemble_sizes = [int(n) for n in self.ensemble_sizes]
        self.seed = int(self.seed)
        self.n_runs = int(self.n_runs)
        self.overrides = dict(self.overrides)
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if not self.ensemble_sizes or min(self.ensemble_sizes) < 2:
            raise ConfigError("ensemble sizes must be >= 2")
        if self.filter not in FILTER_CHOICES:
            raise ConfigError(f"filter must be one of {FILTER_CHOICES}")
        exp = EXPERIMENTS[self.experiment]
        unknown = sorted(set(self.overrides) - set(exp.defaults))
        if unknown:
            raise ConfigError(f"unknown override keys for {self.experiment}: {unknown}")
        if self.filter != "all" and self.filter not in exp.filters:
            raise ConfigError(f"filter {self.filter!r} does not apply to {self.experiment}; use one of {exp.filters}")

    @property
    def filters(self) -> tuple[str, ...]:
        from .experiments import EXPERIMENTS

        exp = EXPERIMENTS[self.experiment]
        return exp.filters if self.filter == "all" else (self.filter,)

    def params(self) -> dict:
        """Experiment defaults with the overrides applied."""
        from .experiments import EXPERIMENTS

        merged = dict(EXPERIMENTS[self.experiment].defaults)
        merged.update(self.overrides)
        return merged

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(f"unknown config fields: {extra}")
        if "experiment" not in data:
            raise ConfigError("config needs an 'experiment' field")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def parse_override(item: str) -> tuple[str, object]:
    """``key=value`` with the value read as JSON when possible, else as a string."""
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value
