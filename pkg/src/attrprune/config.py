"""Experiment configuration: a flat ``key = value`` text file.

Blank lines and ``#`` comments are ignored. List values are comma
separated. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .pruning import METHODS

STRATEGY_NAMES = ("L-FT", "F-FT", "retrain")


@dataclass
class ExperimentConfig:
    # dataset: a CSV path, or generator parameters when empty
    dataset_path: str = ""
    n_per_class: int = 1000
    classes: int = 4
    dim: int = 20
    spread: float = 1.0
    separation: float = 4.0
    data_seed: int = -1  # -1: follow ``seed``
    test_fraction: float = 0.2
    train_fraction: float = 1.0
    # corruption of the training split
    noise_kind: str = "feature-gaussian"
    noise_level: float = 8.0
    noise_fraction: float = 0.5
    # model and optimisation
    hidden: list[int] = field(default_factory=lambda: [64, 32])
    target_layer: int = 1
    epochs: int = 10
    finetune_epochs: int = 5
    lr: float = 0.05
    batch_size: int = 32
    # method
    alpha: float = 0.15
    lam: float = 1.0
    lam_reg: float = 1e-3
    eps: float = 1e-9
    gmm_max_iter: int = 200
    gmm_tol: float = 1e-6
    gmm_jitter: float = 1e-6
    covariance: str = "auto"
    methods: list[str] = field(default_factory=lambda: ["ours"])
    strategies: list[str] = field(default_factory=lambda: list(STRATEGY_NAMES))
    seed: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 1 <= self.target_layer <= len(self.hidden):
            raise ConfigError(
                f"target_layer {self.target_layer} is not a hidden layer (1..{len(self.hidden)})"
            )
        if not 0 < self.train_fraction <= 1:
            raise ConfigError("train_fraction must lie in (0, 1]")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        for s in self.strategies:
            if s not in STRATEGY_NAMES:
                raise ConfigError(f"unknown strategy {s!r}; choose from {', '.join(STRATEGY_NAMES)}")
        if self.covariance not in ("auto", "full", "diag"):
            raise ConfigError(f"unknown covariance {self.covariance!r}")
        if self.noise_kind not in ("feature-gaussian", "label-flip"):
            raise ConfigError(f"unknown noise_kind {self.noise_kind!r}")
        for name in ("lam", "lam_reg"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    @property
    def effective_data_seed(self) -> int:
        return self.seed if self.data_seed < 0 else self.data_seed

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_HINTS = typing.get_type_hints(ExperimentConfig)


def coerce(key: str, raw: str):
    """Convert a text value to the type of config field ``key``."""
    if key not in _HINTS:
        raise ConfigError(f"unknown config key {key!r}")
    hint = _HINTS[key]
    raw = raw.strip()
    try:
        if hint == list[int]:
            return [int(v) for v in raw.split(",") if v.strip()]
        if hint == list[str]:
            return [v.strip() for v in raw.split(",") if v.strip()]
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = coerce(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    base = base or ExperimentConfig()
    return base.replace(**values)


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
