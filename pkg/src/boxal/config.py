"""Strategy configuration and the flat key=value config file loader."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path

from .errors import ConfigError


class Strategy(str, Enum):
    CRB = "crb"
    RAND = "rand"
    ENTROPY = "entropy"
    CORESET = "coreset"
    BADGE = "badge"
    MC_REG = "mc_reg"


@dataclass(frozen=True)
class StrategyConfig:
    """All selection tunables. K1 >= K2 >= Nr >= 1 is enforced."""

    num_classes: int
    k1: int
    k2: int
    nr: int
    rounds: int = 1
    bandwidth: float = 5.0
    mc_passes: int = 5
    dropout_rate: float = 0.3
    grid_size: int = 256
    seed: int = 0
    strategy: Strategy = Strategy.CRB

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if not (self.k1 >= self.k2 >= self.nr >= 1):
            raise ConfigError(
                f"need k1 >= k2 >= nr >= 1, got k1={self.k1} k2={self.k2} nr={self.nr}"
            )
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ConfigError(f"bandwidth must be > 0, got {self.bandwidth}")
        if self.mc_passes < 1:
            raise ConfigError(f"mc_passes must be >= 1, got {self.mc_passes}")
        if not (0.0 < self.dropout_rate < 1.0):
            raise ConfigError(f"dropout_rate must be in (0, 1), got {self.dropout_rate}")
        if self.grid_size < 16:
            raise ConfigError(f"grid_size must be >= 16, got {self.grid_size}")
        if not isinstance(self.strategy, Strategy):
            object.__setattr__(self, "strategy", Strategy(self.strategy))

    def with_overrides(self, **kwargs) -> "StrategyConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


_INT_KEYS = {"num_classes", "k1", "k2", "nr", "rounds", "mc_passes", "grid_size", "seed"}
_FLOAT_KEYS = {"bandwidth", "dropout_rate"}
_CONFIG_FIELDS = {f.name for f in fields(StrategyConfig)}

# Harness keys a loop config file may carry beyond StrategyConfig itself.
LOOP_KEYS = {
    "pool", "scenes", "out_dir", "n", "budget_boxes", "init_labeled",
    "timing_mode", "threads", "abundance", "boxes_mean",
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse a flat ``key = value`` document into a raw string map."""
    values: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{source}:{line_no}: empty key or value")
        if key in values:
            raise ConfigError(f"{source}:{line_no}: duplicate key {key!r}")
        if key not in _CONFIG_FIELDS and key not in LOOP_KEYS:
            raise ConfigError(f"{source}:{line_no}: unknown key {key!r}")
        values[key] = value
    return values


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


def strategy_config_from_values(values: dict, **overrides) -> StrategyConfig:
    """Build a StrategyConfig from a raw string map, applying typed coercion.

    Non-None ``overrides`` win over file values (flags override file).
    """
    kwargs: dict = {}
    for key, raw in values.items():
        if key not in _CONFIG_FIELDS:
            continue
        try:
            if key in _INT_KEYS:
                kwargs[key] = int(raw)
            elif key in _FLOAT_KEYS:
                kwargs[key] = float(raw)
            elif key == "strategy":
                kwargs[key] = Strategy(raw)
            else:
                kwargs[key] = raw
        except ValueError as exc:
            raise ConfigError(f"config field {key!r}: {exc}") from None
    for key, value in overrides.items():
        if value is not None:
            kwargs[key] = value
    missing = {"num_classes", "k1", "k2", "nr"} - kwargs.keys()
    if missing:
        raise ConfigError(f"config missing required fields: {sorted(missing)}")
    return StrategyConfig(**kwargs)
