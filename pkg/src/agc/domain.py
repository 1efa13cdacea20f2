"""Greenhouse control domain: state/action types, action bounds and economics.

Everything here is immutable value data plus pure functions. Monetary values
are per square metre of greenhouse floor; reports scale them by
``EconConfig.greenhouse_area``.

Observable state layout (14 values)::

    weather  t_out, rh_out, i_glob, wind, t_sky, co2_out
    climate  air_t, air_rh, air_co2, par
    growth   lai, plant_load, net_growth
    yield    fw
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

WEATHER_FIELDS = ("t_out", "rh_out", "i_glob", "wind", "t_sky", "co2_out")
CLIMATE_FIELDS = ("air_t", "air_rh", "air_co2", "par")
GROWTH_FIELDS = ("lai", "plant_load", "net_growth")
ACTION_FIELDS = ("temp_sp", "co2_sp", "light", "irrigation")
LEDGER_COST_FIELDS = ("energy_cost", "co2_cost", "water_cost", "maintenance_cost", "depreciation")

N_WEATHER, N_CLIMATE, N_GROWTH, N_ACTION = 6, 4, 3, 4
STATE_DIM = N_WEATHER + N_CLIMATE + N_GROWTH + 1

# Climate clamp box, column order as CLIMATE_FIELDS.
CLIMATE_LOW = np.array([-10.0, 0.0, 0.0, 0.0])
CLIMATE_HIGH = np.array([60.0, 100.0, np.inf, np.inf])

# kg CO2 dosed per m2 per hour for each ppm the setpoint sits above outside air.
CO2_DOSE_KG_PER_PPM_H = 2.0e-5


class DomainError(ValueError):
    """Invalid domain value (non-finite action, negative yield, bad config...)."""


# --------------------------------------------------------------------------- types


@dataclass(frozen=True)
class Weather:
    t_out: float
    rh_out: float
    i_glob: float
    wind: float
    t_sky: float
    co2_out: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.rh_out <= 100.0:
            raise DomainError(f"rh_out out of [0, 100]: {self.rh_out}")
        if self.i_glob < 0 or self.wind < 0:
            raise DomainError("i_glob and wind must be >= 0")
        if self.co2_out <= 0:
            raise DomainError("co2_out must be > 0")

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in WEATHER_FIELDS], dtype=float)

    @classmethod
    def from_array(cls, x: Iterable[float]) -> "Weather":
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class Climate:
    air_t: float
    air_rh: float
    air_co2: float
    par: float

    def __post_init__(self) -> None:
        if not -10.0 <= self.air_t <= 60.0:
            raise DomainError(f"air_t out of [-10, 60]: {self.air_t}")
        if not 0.0 <= self.air_rh <= 100.0:
            raise DomainError(f"air_rh out of [0, 100]: {self.air_rh}")
        if self.air_co2 < 0 or self.par < 0:
            raise DomainError("air_co2 and par must be >= 0")

    def to_array(self) -> np.ndarray:
        return np.array([self.air_t, self.air_rh, self.air_co2, self.par], dtype=float)

    @classmethod
    def from_array(cls, x: Iterable[float]) -> "Climate":
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class Growth:
    lai: float
    plant_load: float
    net_growth: float

    def __post_init__(self) -> None:
        if self.lai < 0 or self.plant_load < 0 or self.net_growth < 0:
            raise DomainError("growth components must be >= 0")

    def to_array(self) -> np.ndarray:
        return np.array([self.lai, self.plant_load, self.net_growth], dtype=float)

    @classmethod
    def from_array(cls, x: Iterable[float]) -> "Growth":
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class YieldState:
    fw: float = 0.0

    def __post_init__(self) -> None:
        if self.fw < 0:
            raise DomainError("fw must be >= 0")


@dataclass(frozen=True)
class Action:
    temp_sp: float
    co2_sp: float
    light: float
    irrigation: float

    def to_array(self) -> np.ndarray:
        return np.array([self.temp_sp, self.co2_sp, self.light, self.irrigation], dtype=float)

    @classmethod
    def from_array(cls, x: Iterable[float]) -> "Action":
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class ActionBounds:
    """Closed box for the four setpoints."""

    low: tuple[float, float, float, float] = (13.0, 400.0, 0.0, 0.0)
    high: tuple[float, float, float, float] = (32.0, 1200.0, 1.0, 2.0)

    def __post_init__(self) -> None:
        if len(self.low) != N_ACTION or len(self.high) != N_ACTION:
            raise DomainError("action bounds need 4 entries")
        if any(lo > hi for lo, hi in zip(self.low, self.high)):
            raise DomainError("action bound low > high")

    @property
    def low_array(self) -> np.ndarray:
        return np.asarray(self.low, dtype=float)

    @property
    def high_array(self) -> np.ndarray:
        return np.asarray(self.high, dtype=float)

    @property
    def span(self) -> np.ndarray:
        return self.high_array - self.low_array

    def contains(self, a: np.ndarray) -> bool:
        a = np.asarray(a, dtype=float)
        return bool(np.all(a >= self.low_array) and np.all(a <= self.high_array))


DEFAULT_BOUNDS = ActionBounds()


@dataclass(frozen=True)
class State:
    """Full greenhouse state.

    ``assim_today`` is the assimilate accumulated since the last day boundary.
    It is bookkeeping for the daily harvest and not one of the 14 observables.
    """

    weather: Weather
    climate: Climate
    growth: Growth
    yield_: YieldState
    hour_of_day: int = 0
    day: int = 0
    assim_today: float = 0.0

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.weather.to_array(), self.climate.to_array(), self.growth.to_array(), [self.yield_.fw]]
        )

    @property
    def t(self) -> int:
        return 24 * self.day + self.hour_of_day


@dataclass(frozen=True)
class EconConfig:
    fruit_price: float = 0.49  # EUR/kg
    elec_price: float = 0.08  # EUR/kWh
    lamp_power: float = 100.0  # W/m2 at full lamp fraction
    heat_coeff: float = 0.0003  # EUR per (degC * h * m2) of setpoint above outside air
    co2_price: float = 0.15  # EUR/kg
    water_price: float = 0.002  # EUR/L
    maintenance_per_day: float = 1543.96 / 667.0 / 150.0  # EUR/m2/day
    depreciation_per_episode: float = 1711.88 / 667.0  # EUR/m2
    greenhouse_area: float = 667.0  # m2

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"EconConfig.{f.name} must be finite and > 0, got {v}")

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class EconomicLedger:
    """Cumulative per-m2 economics of one trajectory."""

    energy_cost: float = 0.0
    co2_cost: float = 0.0
    water_cost: float = 0.0
    maintenance_cost: float = 0.0
    depreciation: float = 0.0
    gains: float = 0.0
    finalized: bool = False

    def __post_init__(self) -> None:
        for name in (*LEDGER_COST_FIELDS, "gains"):
            if getattr(self, name) < 0:
                raise DomainError(f"ledger component {name} is negative")

    @property
    def total_cost(self) -> float:
        return (
            self.energy_cost + self.co2_cost + self.water_cost + self.maintenance_cost + self.depreciation
        )

    @property
    def net_profit(self) -> float:
        return self.gains - self.total_cost

    def add(self, costs: Mapping[str, float] | None = None, gain: float = 0.0) -> "EconomicLedger":
        costs = costs or {}
        updates = {k: getattr(self, k) + float(v) for k, v in costs.items()}
        return replace(self, gains=self.gains + gain, **updates)

    def scaled(self, area: float) -> dict[str, float]:
        """Per-greenhouse view used in reports."""
        out = {name: getattr(self, name) * area for name in (*LEDGER_COST_FIELDS, "gains")}
        out["total_cost"] = self.total_cost * area
        out["net_profit"] = self.net_profit * area
        return out

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EconomicLedger":
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


# ---------------------------------------------------------------------- operations


def clamp_action(raw: Any, bounds: ActionBounds = DEFAULT_BOUNDS) -> Action:
    """Clip an action-like value (Action, sequence or mapping) into the box."""
    if isinstance(raw, Action):
        x = raw.to_array()
    elif isinstance(raw, Mapping):
        x = np.array([raw[f] for f in ACTION_FIELDS], dtype=float)
    else:
        x = np.asarray(raw, dtype=float).reshape(-1)
    if x.shape != (N_ACTION,):
        raise DomainError(f"action needs {N_ACTION} values, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"non-finite action {x.tolist()}")
    return Action.from_array(np.clip(x, bounds.low_array, bounds.high_array))


def clip_actions(x: np.ndarray, bounds: ActionBounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Vectorised clamp over a ``(..., 4)`` array."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite action values")
    return np.clip(x, bounds.low_array, bounds.high_array)


def cost_components(actions: np.ndarray, weather: np.ndarray, dt: float, cfg: EconConfig) -> dict[str, np.ndarray]:
    """Per-step cost breakdown for ``(..., 4)`` actions under ``(..., 6)`` weather.

    Energy covers heating and lamps. Heating is charged on the setpoint excess
    over outside air, lamps on electrical power drawn.
    """
    if dt <= 0:
        raise DomainError("dt must be > 0")
    actions = np.asarray(actions, dtype=float)
    weather = np.asarray(weather, dtype=float)
    temp_sp, co2_sp, light, irrigation = (actions[..., i] for i in range(N_ACTION))
    t_out, co2_out = weather[..., 0], weather[..., 5]
    heating = cfg.heat_coeff * np.maximum(0.0, temp_sp - t_out) * dt
    lighting = cfg.lamp_power * light * dt * cfg.elec_price / 1000.0
    co2 = cfg.co2_price * CO2_DOSE_KG_PER_PPM_H * np.maximum(0.0, co2_sp - co2_out) * dt
    water = cfg.water_price * irrigation * dt
    maintenance = np.broadcast_to(cfg.maintenance_per_day * dt / 24.0, heating.shape)
    return {
        "energy_cost": heating + lighting,
        "co2_cost": co2,
        "water_cost": water,
        "maintenance_cost": np.array(maintenance),
        "heating": heating,
        "lighting": lighting,
    }


def step_cost(a: Action, w: Weather, dt: float, cfg: EconConfig) -> float:
    """Total cost (EUR/m2) of holding action ``a`` for ``dt`` hours."""
    c = cost_components(a.to_array(), w.to_array(), dt, cfg)
    return float(c["energy_cost"] + c["co2_cost"] + c["water_cost"] + c["maintenance_cost"])


def step_gain(delta_fw: float, cfg: EconConfig) -> float:
    if not math.isfinite(delta_fw) or delta_fw < 0:
        raise DomainError(f"delta_fw must be finite and >= 0, got {delta_fw}")
    return delta_fw * cfg.fruit_price


def reward(prev_ledger: EconomicLedger, next_ledger: EconomicLedger) -> float:
    return next_ledger.net_profit - prev_ledger.net_profit


def finalize_ledger(ledger: EconomicLedger, cfg: EconConfig) -> EconomicLedger:
    """Charge the per-episode equipment depreciation, exactly once."""
    if ledger.finalized:
        raise DomainError("ledger already finalized")
    return replace(ledger, depreciation=ledger.depreciation + cfg.depreciation_per_episode, finalized=True)


def step_ledger(
    ledger: EconomicLedger, a: Action, w: Weather, dt: float, delta_fw: float, cfg: EconConfig
) -> EconomicLedger:
    c = cost_components(a.to_array(), w.to_array(), dt, cfg)
    costs = {k: float(c[k]) for k in ("energy_cost", "co2_cost", "water_cost", "maintenance_cost")}
    return ledger.add(costs, step_gain(delta_fw, cfg))


def ledger_curves(
    actions: np.ndarray, weather: np.ndarray, delta_fw: np.ndarray, cfg: EconConfig, finalize: bool = True
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Cumulative ledger components and rewards for (batched) trajectories.

    ``actions`` is ``(..., T, 4)``, ``weather`` ``(..., T, 6)`` and
    ``delta_fw`` ``(..., T)`` holds the harvest booked at each step. Returns
    the cumulative components after every step (depreciation lands on the last
    step when ``finalize``) and the per-step rewards, each the difference of
    consecutive net profits.
    """
    c = cost_components(actions, weather, 1.0, cfg)
    T = actions.shape[-2]
    comps = {k: np.cumsum(c[k], axis=-1) for k in ("energy_cost", "co2_cost", "water_cost", "maintenance_cost")}
    comps["gains"] = np.cumsum(np.asarray(delta_fw, dtype=float) * cfg.fruit_price, axis=-1)
    dep = np.zeros(actions.shape[:-1])
    if finalize and T > 0:
        dep[..., -1] = cfg.depreciation_per_episode
    comps["depreciation"] = dep
    net = comps["gains"] - (
        comps["energy_cost"] + comps["co2_cost"] + comps["water_cost"] + comps["maintenance_cost"] + dep
    )
    prev = np.concatenate([np.zeros(net.shape[:-1] + (1,)), net[..., :-1]], axis=-1)
    return comps, net - prev


def ledger_at(comps: Mapping[str, np.ndarray], index: tuple = (), finalized: bool = True) -> EconomicLedger:
    """Ledger read from the last step of :func:`ledger_curves` output."""
    vals = {k: float(v[index + (-1,)]) if v.shape[-1] else 0.0 for k, v in comps.items()}
    return EconomicLedger(**vals, finalized=finalized)


# -------------------------------------------------------------------------- config


def load_domain_config(path: str | Path) -> tuple[EconConfig, ActionBounds]:
    """Read ``{"econ": {...}, "bounds": {"low": [...], "high": [...]}}`` from JSON."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DomainError(f"cannot read domain config {path}: {exc}") from exc
    return econ_from_dict(doc.get("econ", {})), bounds_from_dict(doc.get("bounds", {}))


def econ_from_dict(d: Mapping[str, Any]) -> EconConfig:
    known = {f.name for f in fields(EconConfig)}
    unknown = set(d) - known
    if unknown:
        raise DomainError(f"unknown econ keys: {sorted(unknown)}")
    return EconConfig(**{k: float(v) for k, v in d.items()})


def bounds_from_dict(d: Mapping[str, Any]) -> ActionBounds:
    if not d:
        return DEFAULT_BOUNDS
    return ActionBounds(low=tuple(map(float, d["low"])), high=tuple(map(float, d["high"])))
