"""Pipeline configuration: defaults, JSON files, and dotted-key overrides.

The on-disk form is a JSON object mirroring the dataclass layout. Top-level
keys are the early-stopping controls plus one section per stage:

    {
      "entropy_threshold": 0.75,
      "group_threshold": 3,
      "early_stopping": false,
      "certainty":  {"measure": "entropy", "bottom_fraction": 0.1},
      "grouping":   {"strategy": "marginal", "max_frames_per_group": 64},
      "allocation": {"tau": 2.0, "budget_tokens": null, "budget_frames": null,
                     "overselect_rate": 0.1},
      "redundancy": {"sigma": 0.3, "enabled": true}
    }

Unknown keys are rejected. Flat dotted keys ("allocation.tau") address the
same fields for CLI flags and ablation grids.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .certainty import MEASURES
from .grouping import STRATEGIES


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CertaintyConfig:
    measure: str = "entropy"
    bottom_fraction: float = 0.10


@dataclass(frozen=True)
class GroupingConfig:
    strategy: str = "marginal"
    max_frames_per_group: int = 64


@dataclass(frozen=True)
class AllocationConfig:
    tau: float = 2.0
    budget_tokens: int | None = None
    budget_frames: int | None = None
    overselect_rate: float = 0.1


@dataclass(frozen=True)
class RedundancyConfig:
    sigma: float = 0.3
    enabled: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    entropy_threshold: float = 0.75
    group_threshold: int = 3
    early_stopping: bool = False
    certainty: CertaintyConfig = field(default_factory=CertaintyConfig)
    grouping: GroupingConfig = field(default_factory=GroupingConfig)
    allocation: AllocationConfig = field(default_factory=AllocationConfig)
    redundancy: RedundancyConfig = field(default_factory=RedundancyConfig)

    def validate(self) -> "PipelineConfig":
        if self.entropy_threshold <= 0:
            raise ConfigError(f"entropy_threshold must be > 0, got {self.entropy_threshold}")
        if self.group_threshold < 1:
            raise ConfigError(f"group_threshold must be >= 1, got {self.group_threshold}")
        if self.certainty.measure not in MEASURES:
            raise ConfigError(f"certainty.measure must be one of {MEASURES}, got {self.certainty.measure!r}")
        if not 0 < self.certainty.bottom_fraction <= 1:
            raise ConfigError(f"certainty.bottom_fraction must be in (0, 1], got {self.certainty.bottom_fraction}")
        if self.grouping.strategy not in STRATEGIES:
            raise ConfigError(f"grouping.strategy must be one of {STRATEGIES}, got {self.grouping.strategy!r}")
        if self.grouping.max_frames_per_group < 1:
            raise ConfigError("grouping.max_frames_per_group must be >= 1")
        if self.allocation.tau <= 0:
            raise ConfigError(f"allocation.tau must be > 0, got {self.allocation.tau}")
        if self.allocation.budget_tokens is not None and self.allocation.budget_frames is not None:
            raise ConfigError("set only one of allocation.budget_tokens / allocation.budget_frames")
        if not 0 <= self.allocation.overselect_rate <= 1:
            raise ConfigError(f"allocation.overselect_rate must be in [0, 1], got {self.allocation.overselect_rate}")
        if self.redundancy.sigma <= 0:
            raise ConfigError(f"redundancy.sigma must be > 0, got {self.redundancy.sigma}")
        return self


_SECTIONS = {
    "certainty": CertaintyConfig,
    "grouping": GroupingConfig,
    "allocation": AllocationConfig,
    "redundancy": RedundancyConfig,
}
_TOP_FIELDS = ("entropy_threshold", "group_threshold", "early_stopping")


def config_keys() -> list[str]:
    """All valid dotted config keys."""
    keys = list(_TOP_FIELDS)
    for section, cls in _SECTIONS.items():
        keys.extend(f"{section}.{f.name}" for f in dataclasses.fields(cls))
    return keys


def from_dict(data: dict[str, Any]) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"config must be a JSON object, got {type(data).__name__}")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _TOP_FIELDS:
            kwargs[key] = value
        elif key in _SECTIONS:
            cls = _SECTIONS[key]
            known = {f.name for f in dataclasses.fields(cls)}
            unknown = set(value) - known
            if unknown:
                raise ConfigError(f"unknown config key(s) {sorted(f'{key}.{u}' for u in unknown)}")
            kwargs[key] = cls(**value)
        else:
            raise ConfigError(f"unknown config key(s) ['{key}']")
    return PipelineConfig(**kwargs).validate()


def to_dict(config: PipelineConfig) -> dict[str, Any]:
    return dataclasses.asdict(config)


def load_config(path: str | Path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    return from_dict(data)


def save_config(config: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(config), indent=2, sort_keys=True) + "\n")


def apply_overrides(config: PipelineConfig, overrides: dict[str, Any]) -> PipelineConfig:
    """Return a copy with dotted-key overrides applied (e.g. "allocation.tau")."""
    valid = set(config_keys())
    cfg = config
    for key, value in overrides.items():
        if key not in valid:
            raise ConfigError(f"unknown config key(s) ['{key}']")
        if "." in key:
            section, name = key.split(".", 1)
            sub = dataclasses.replace(getattr(cfg, section), **{name: value})
            cfg = dataclasses.replace(cfg, **{section: sub})
        else:
            cfg = dataclasses.replace(cfg, **{key: value})
    return cfg.validate()
