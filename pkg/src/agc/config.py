"""Experiment configuration: one JSON document holding every sub-config."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .bilevel import BilevelConfig
from .domain import DEFAULT_BOUNDS, ActionBounds, DomainError, EconConfig, bounds_from_dict, econ_from_dict
from .strategy.ega import EgaConfig
from .strategy.sac import SacConfig
from .twin import ArchConfig
from .world import PROFILES, WorldParams

SECTIONS = ("world", "econ", "bounds", "arch", "ega", "sac", "bilevel", "data", "seeds", "paths")


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 1000
    n_test: int = 200
    days: int = 60
    profile: str = "temperate"

    def __post_init__(self) -> None:
        if self.n_train < 1 or self.n_test < 1 or self.days < 1:
            raise DomainError("n_train, n_test and days must be >= 1")
        if self.profile not in PROFILES:
            raise DomainError(f"unknown weather profile {self.profile!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldParams = field(default_factory=WorldParams)
    econ: EconConfig = field(default_factory=EconConfig)
    bounds: ActionBounds = DEFAULT_BOUNDS
    arch: ArchConfig = field(default_factory=ArchConfig)
    ega: EgaConfig = field(default_factory=EgaConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    bilevel: BilevelConfig = field(default_factory=BilevelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seeds: tuple[int, ...] = (0,)
    paths: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], base: Path | None = None) -> "ExperimentConfig":
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise DomainError(f"unknown config section(s): {sorted(unknown)}")
        try:
            paths = {k: str(v) for k, v in doc.get("paths", {}).items()}
            for name, p in paths.items():
                full = Path(p) if base is None or Path(p).is_absolute() else base / p
                if not full.exists():
                    raise DomainError(f"paths.{name}: {full} does not exist")
                paths[name] = str(full)
            return cls(
                world=WorldParams.from_dict(doc.get("world", {})),
                econ=econ_from_dict(doc.get("econ", {})),
                bounds=bounds_from_dict(doc.get("bounds", {})),
                arch=ArchConfig.from_dict(doc.get("arch", {})),
                ega=EgaConfig.from_dict(doc.get("ega", {})),
                sac=SacConfig.from_dict(doc.get("sac", {})),
                bilevel=BilevelConfig.from_dict(doc.get("bilevel", {})),
                data=DataConfig(**doc.get("data", {})),
                seeds=tuple(int(s) for s in doc.get("seeds", [0])),
                paths=paths,
            )
        except TypeError as exc:  # unexpected keyword in a sub-config
            raise DomainError(f"invalid config: {exc}") from exc


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Read an experiment config; ``None`` gives all defaults."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DomainError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise DomainError(f"{path}: config must be a JSON object")
    return ExperimentConfig.from_dict(doc, base=path.parent)
