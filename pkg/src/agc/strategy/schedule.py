"""Setpoint schedules: the genome searched by the genetic optimizer.

A schedule holds one action per *slot*. With control interval ``k`` hours a
day has ``24 / k`` slots, and with block sharing ``B`` one daily pattern is
reused for ``B`` consecutive days. The action at absolute hour ``h`` is

    values[(h // 24 // B) * (24 // k) + (h % 24) // k]
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..domain import DEFAULT_BOUNDS, ActionBounds, DomainError
from ..world import random_piecewise_actions

SCHEDULE_FORMAT = "agc-schedule"
BASELINE_KINDS = ("expert_like", "random", "minimal")


@dataclass(frozen=True)
class Layout:
    """Slot geometry shared by every schedule in a search."""

    horizon: int  # hours, counted from hour 0
    control_interval: int = 1
    block_days: int = 5

    def __post_init__(self) -> None:
        if self.horizon < 0:
            raise DomainError("horizon must be >= 0")
        if self.control_interval < 1 or 24 % self.control_interval:
            raise DomainError("control_interval must divide 24")
        if self.block_days < 1:
            raise DomainError("block_days must be >= 1")

    @property
    def slots_per_day(self) -> int:
        return 24 // self.control_interval

    @property
    def n_slots(self) -> int:
        days = math.ceil(self.horizon / 24)
        return math.ceil(days / self.block_days) * self.slots_per_day

    @property
    def genome_length(self) -> int:
        return 4 * self.n_slots

    def slot_of(self, hours: np.ndarray) -> np.ndarray:
        hours = np.asarray(hours, dtype=np.int64)
        return (hours // 24 // self.block_days) * self.slots_per_day + (hours % 24) // self.control_interval

    def slot_start_hour(self) -> np.ndarray:
        """Hour of day at which each slot starts."""
        return np.tile(np.arange(self.slots_per_day) * self.control_interval, self.n_slots // self.slots_per_day)

    def elapsed_slots(self, t_now: int) -> np.ndarray:
        """Mask of slots used by at least one hour before ``t_now``."""
        mask = np.zeros(self.n_slots, dtype=bool)
        if t_now > 0:
            mask[np.unique(self.slot_of(np.arange(min(t_now, self.horizon))))] = True
        return mask

    def to_dict(self) -> dict[str, int]:
        return {"horizon": self.horizon, "control_interval": self.control_interval, "block_days": self.block_days}


@dataclass
class Schedule:
    values: np.ndarray  # (n_slots, 4)
    layout: Layout

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.layout.n_slots, 4):
            raise DomainError(f"schedule values must be ({self.layout.n_slots}, 4), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("schedule values must be finite")

    @property
    def horizon(self) -> int:
        return self.layout.horizon

    def genome(self) -> np.ndarray:
        return self.values.reshape(-1).copy()

    @classmethod
    def from_genome(cls, genome: np.ndarray, layout: Layout) -> "Schedule":
        return cls(np.asarray(genome, dtype=float).reshape(layout.n_slots, 4), layout)

    def actions(self, start: int = 0, horizon: int | None = None) -> np.ndarray:
        """Hourly ``(horizon, 4)`` actions for absolute hours ``start .. start+horizon-1``."""
        if horizon is None:
            horizon = self.horizon - start
        if start < 0 or start + horizon > self.horizon:
            raise DomainError(f"schedule covers {self.horizon} h, asked for {start}..{start + horizon}")
        return self.values[self.layout.slot_of(np.arange(start, start + horizon))]

    def within(self, bounds: ActionBounds = DEFAULT_BOUNDS) -> bool:
        return bounds.contains(self.values)

    def copy(self) -> "Schedule":
        return Schedule(self.values.copy(), self.layout)

    def to_json(self) -> dict[str, Any]:
        return {"format": SCHEDULE_FORMAT, "version": 1, "layout": self.layout.to_dict(), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "Schedule":
        if doc.get("format") != SCHEDULE_FORMAT or doc.get("version") != 1:
            raise DomainError("not a version-1 schedule document")
        return cls(np.asarray(doc["values"], dtype=float).reshape(-1, 4), Layout(**doc["layout"]))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), sort_keys=True))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Schedule":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DomainError(f"{path}: malformed schedule ({exc})") from exc


def genome_bounds(layout: Layout, bounds: ActionBounds = DEFAULT_BOUNDS) -> tuple[np.ndarray, np.ndarray]:
    return np.tile(bounds.low_array, layout.n_slots), np.tile(bounds.high_array, layout.n_slots)


def baseline_schedule(
    kind: str,
    layout: Layout | None = None,
    seed: int = 0,
    bounds: ActionBounds = DEFAULT_BOUNDS,
) -> Schedule:
    """Fixed reference strategies.

    ``expert_like`` heats to 21 C by day and 17 C by night, doses CO2 to
    800 ppm and runs the lamps over a 16 h photoperiod (06:00-22:00) with a
    constant irrigation rate. ``random`` is piecewise constant and seeded.
    ``minimal`` sits on the lower bounds.
    """
    layout = layout or Layout(horizon=24 * 60)
    n = layout.n_slots
    lo, hi = bounds.low_array, bounds.high_array
    if kind == "minimal":
        values = np.tile(lo, (n, 1))
    elif kind == "expert_like":
        hour = layout.slot_start_hour()
        day = (hour >= 6) & (hour < 22)
        values = np.empty((n, 4))
        values[:, 0] = np.where(day, 21.0, 17.0)
        values[:, 1] = np.where(day, 800.0, lo[1])
        values[:, 2] = np.where(day, 1.0, 0.0)
        values[:, 3] = 1.0
        values = np.clip(values, lo, hi)
    elif kind == "random":
        rng = np.random.default_rng(seed)
        per_day = layout.slots_per_day
        values = random_piecewise_actions(rng, n, bounds, max(1, per_day // 4), per_day)
    else:
        raise DomainError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")
    return Schedule(values, layout)
