"""Rule-based reference greenhouse.

This is the ground truth the learned twin is fitted to and that strategies
are finally scored on. The hourly transition is deterministic; randomness
enters only through generated weather and sampled control schedules.

The dynamics are written over arrays with arbitrary leading batch axes so
that whole populations of schedules can be simulated at once.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
from scipy.signal import lfilter

from .domain import (
    CLIMATE_HIGH,
    CLIMATE_LOW,
    DEFAULT_BOUNDS,
    ActionBounds,
    Climate,
    DomainError,
    EconConfig,
    EconomicLedger,
    Growth,
    State,
    Weather,
    YieldState,
    finalize_ledger,
    ledger_at,
    ledger_curves,
)
from .trajectory import Dataset, Trajectory


@dataclass(frozen=True)
class WorldParams:
    # climate mixing
    k_vent: float = 0.3
    k_heat: float = 0.5
    k_sun: float = 1.5
    k_rh: float = 0.2
    k_co2: float = 0.2
    k_inj: float = 0.5
    k_up: float = 30.0
    # photosynthesis
    p_max: float = 6.0  # g assimilate / m2 / h
    K_L: float = 200.0  # umol/m2/s
    K_C: float = 500.0  # ppm
    T_opt: float = 24.0
    T_sd: float = 8.0
    k_ext: float = 0.7
    # growth and harvest
    lai_gain: float = 0.01
    lai_max: float = 4.0
    fruit_partition: float = 0.7
    dry_to_fresh: float = 50.0
    maturity_day: int = 10
    # light
    tau_glass: float = 0.7
    lamp_yield: float = 200.0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not v > 0:
                raise DomainError(f"WorldParams.{f.name} must be > 0, got {v}")

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "WorldParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown world parameter(s): {sorted(unknown)}")
        return cls(**d)

    def shifted(self, **scale: float) -> "WorldParams":
        """Copy with the named parameters multiplied by the given factors."""
        return replace(self, **{k: getattr(self, k) * v for k, v in scale.items()})


INITIAL_CLIMATE = np.array([18.0, 70.0, 400.0, 0.0])
INITIAL_GROWTH = np.array([0.5, 0.0, 0.0])


def photosynthesis(par, co2, air_t, lai, p: WorldParams):
    """Gross canopy assimilation rate (g/m2/h).

    Michaelis-Menten in light and CO2, Gaussian in temperature, Beer's law
    light interception by the canopy.
    """
    light = par / (par + p.K_L)
    carbon = co2 / (co2 + p.K_C)
    temp = np.exp(-(((air_t - p.T_opt) / p.T_sd) ** 2))
    canopy = 1.0 - np.exp(-p.k_ext * lai)
    return p.p_max * light * carbon * temp * canopy


def advance(climate, growth, fw, assim, action, w, t: int, p: WorldParams):
    """One hour of dynamics for hour index ``t`` (hours since season start).

    All arguments broadcast over leading axes. Returns
    ``(climate', growth', fw', assim', delta_fw)``.
    """
    air_t, rh, co2 = climate[..., 0], climate[..., 1], climate[..., 2]
    lai, load = growth[..., 0], growth[..., 1]
    t_out, rh_out, i_glob, co2_out = w[..., 0], w[..., 1], w[..., 2], w[..., 5]
    temp_sp, co2_sp, light, irrigation = action[..., 0], action[..., 1], action[..., 2], action[..., 3]

    air_t1 = air_t + p.k_vent * (t_out - air_t) + p.k_heat * np.maximum(0.0, temp_sp - air_t) + p.k_sun * i_glob / 1000.0
    air_t1 = np.clip(air_t1, CLIMATE_LOW[0], CLIMATE_HIGH[0])
    par1 = p.tau_glass * 2.0 * i_glob + p.lamp_yield * light
    # Assimilation sees the CO2 level before canopy uptake is removed.
    co2_pre = np.maximum(0.0, co2 + p.k_co2 * (co2_out - co2) + p.k_inj * np.maximum(0.0, co2_sp - co2))
    photo = photosynthesis(par1, co2_pre, air_t1, lai, p)
    co2_1 = np.maximum(0.0, co2_pre - p.k_up * photo)
    rh1 = np.clip(rh + p.k_rh * (rh_out - rh) + 2.0 * irrigation + 0.05 * lai * np.maximum(0.0, air_t - 15.0) - 0.5, 10.0, 100.0)

    # Reported net growth is floored at zero: night respiration is not booked
    # against the canopy, which keeps every emitted Growth non-negative.
    net1 = np.maximum(0.0, photo - 0.01 * lai)
    lai1 = lai + p.lai_gain * photo * (1.0 - lai / p.lai_max)
    load1 = np.maximum(0.0, load + 0.01 * net1)
    assim1 = assim + np.maximum(0.0, net1)

    delta = np.zeros_like(assim1)
    if (t + 1) % 24 == 0:
        if t // 24 >= p.maturity_day:
            delta = p.fruit_partition * (p.dry_to_fresh / 1000.0) * assim1
        assim1 = np.zeros_like(assim1)
    climate1 = np.stack([air_t1, rh1, co2_1, par1], axis=-1)
    growth1 = np.stack([lai1, load1, net1], axis=-1)
    return climate1, growth1, fw + delta, assim1, delta


# ------------------------------------------------------------------------ weather

PROFILES: dict[str, dict[str, float]] = {
    "temperate": dict(t_mean=12.0, t_amp=5.0, t_drift=0.08, i_peak=550.0, i_drift=2.0, rh_mean=75.0, wind=3.0, daylen=12.0),
    "cold": dict(t_mean=3.0, t_amp=4.0, t_drift=0.05, i_peak=350.0, i_drift=1.0, rh_mean=82.0, wind=4.0, daylen=9.5),
    "warm": dict(t_mean=21.0, t_amp=6.0, t_drift=0.03, i_peak=750.0, i_drift=0.5, rh_mean=60.0, wind=2.5, daylen=13.5),
}


@dataclass
class WeatherSeries:
    data: np.ndarray  # (T, 6) rows as domain.WEATHER_FIELDS
    seed: int
    profile: str = "temperate"

    def __len__(self) -> int:
        return int(self.data.shape[0])

    def at(self, t: int) -> Weather:
        return Weather.from_array(self.data[t])

    def to_json(self) -> dict[str, Any]:
        return {"seed": self.seed, "profile": self.profile, "data": self.data.tolist()}

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "WeatherSeries":
        return cls(np.asarray(doc["data"], dtype=float).reshape(-1, 6), int(doc["seed"]), doc.get("profile", "temperate"))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), sort_keys=True))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "WeatherSeries":
        return cls.from_json(json.loads(Path(path).read_text()))


def generate_weather(days: int, seed: int, profile: str = "temperate") -> WeatherSeries:
    """Hourly outside weather: diurnal sinusoids, seasonal drift, seeded noise."""
    if days < 1:
        raise DomainError("days must be >= 1")
    if profile not in PROFILES:
        raise DomainError(f"unknown weather profile {profile!r}; choose from {sorted(PROFILES)}")
    pr = PROFILES[profile]
    rng = np.random.default_rng(seed)
    T = 24 * days
    t = np.arange(T)
    hour = t % 24
    day = t // 24

    clear = rng.uniform(0.35, 1.0, size=days)[day]
    daylen = np.minimum(pr["daylen"] + 0.03 * day, 16.0)
    sunrise = 12.0 - daylen / 2.0
    phase = (hour + 0.5 - sunrise) / daylen
    elevation = np.where((phase > 0) & (phase < 1), np.sin(np.pi * np.clip(phase, 0, 1)), 0.0)
    i_glob = (pr["i_peak"] + pr["i_drift"] * day) * clear * elevation
    i_glob[hour == 0] = 0.0

    t_noise = lfilter([1.0], [1.0, -0.9], rng.normal(0.0, 0.45, size=T))
    t_base = pr["t_mean"] + pr["t_drift"] * day
    t_out = t_base + pr["t_amp"] * np.sin(2 * np.pi * (hour - 9) / 24.0) + 2.0 * (clear - 0.675) + t_noise
    rh_noise = lfilter([1.0], [1.0, -0.8], rng.normal(0.0, 2.0, size=T))
    rh_out = np.clip(pr["rh_mean"] - 2.0 * (t_out - t_base) + rh_noise, 20.0, 100.0)
    wind = rng.gamma(2.0, pr["wind"] / 2.0, size=T)
    t_sky = t_out - (6.0 + 14.0 * clear)
    co2_out = np.maximum(300.0, 410.0 + rng.normal(0.0, 5.0, size=T))
    data = np.stack([t_out, rh_out, i_glob, wind, t_sky, co2_out], axis=1)
    return WeatherSeries(data, seed, profile)


# ------------------------------------------------------------------------ stepping


def initial_state(weather: np.ndarray | Weather, climate0=None, growth0=None, fw0: float = 0.0) -> State:
    w = weather if isinstance(weather, Weather) else Weather.from_array(weather)
    return State(
        weather=w,
        climate=Climate.from_array(INITIAL_CLIMATE if climate0 is None else climate0),
        growth=Growth.from_array(INITIAL_GROWTH if growth0 is None else growth0),
        yield_=YieldState(fw0),
    )


def world_step(s: State, a, w_next: Weather, params: WorldParams = WorldParams(), bounds: ActionBounds = DEFAULT_BOUNDS) -> State:
    """Advance the reference greenhouse one hour under action ``a``.

    ``w_next`` is the weather over the simulated hour and becomes the new
    state's weather. Out-of-box actions are rejected; clamp them first.
    """
    a_arr = a.to_array() if hasattr(a, "to_array") else np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a_arr)) or not bounds.contains(a_arr):
        raise DomainError(f"action outside bounds: {a_arr.tolist()}")
    c1, g1, fw1, assim1, _ = advance(
        s.climate.to_array(), s.growth.to_array(), s.yield_.fw, s.assim_today, a_arr, w_next.to_array(), s.t, params
    )
    t1 = s.t + 1
    return State(
        weather=w_next,
        climate=Climate.from_array(c1),
        growth=Growth.from_array(g1),
        yield_=YieldState(float(fw1)),
        hour_of_day=t1 % 24,
        day=t1 // 24,
        assim_today=float(assim1),
    )


def simulate_batch(
    actions: np.ndarray,
    weather: np.ndarray,
    params: WorldParams = WorldParams(),
    climate0=None,
    growth0=None,
    fw0=0.0,
    assim0=0.0,
    start: int = 0,
) -> dict[str, np.ndarray]:
    """Open-loop simulation of ``(B, T, 4)`` actions; weather ``(T, 6)`` or ``(B, T, 6)``."""
    actions = np.asarray(actions, dtype=float)
    B, T = actions.shape[0], actions.shape[1]
    climate = np.broadcast_to(INITIAL_CLIMATE if climate0 is None else np.asarray(climate0, float), (B, 4)).copy()
    growth = np.broadcast_to(INITIAL_GROWTH if growth0 is None else np.asarray(growth0, float), (B, 3)).copy()
    fw = np.broadcast_to(np.asarray(fw0, float), (B,)).copy()
    assim = np.broadcast_to(np.asarray(assim0, float), (B,)).copy()
    weather = np.asarray(weather, dtype=float)
    out_c = np.empty((B, T, 4))
    out_g = np.empty((B, T, 3))
    out_d = np.zeros((B, T))
    for k in range(T):
        w = weather[k] if weather.ndim == 2 else weather[:, k]
        climate, growth, fw, assim, delta = advance(climate, growth, fw, assim, actions[:, k], w, start + k, params)
        out_c[:, k] = climate
        out_g[:, k] = growth
        out_d[:, k] = delta
    return {"climate": out_c, "growth": out_g, "delta_fw": out_d, "fw": fw, "assim": assim}


def _check_actions(actions: np.ndarray, bounds: ActionBounds) -> None:
    if not np.all(np.isfinite(actions)):
        raise DomainError("non-finite actions")
    if np.any(actions < bounds.low_array) or np.any(actions > bounds.high_array):
        raise DomainError("actions outside bounds; clamp before simulating")


def resolve_actions(controller: Any, start: int, horizon: int) -> np.ndarray | None:
    """Open-loop action array for a schedule-like controller, else ``None``."""
    if isinstance(controller, np.ndarray):
        if controller.shape[0] < horizon:
            raise DomainError(f"action array covers {controller.shape[0]} steps, need {horizon}")
        return controller[:horizon]
    if hasattr(controller, "actions"):
        return controller.actions(start, horizon)
    return None


def _weather_array(weather) -> np.ndarray:
    return weather.data if isinstance(weather, WeatherSeries) else np.asarray(weather, dtype=float)


def world_rollout(
    controller: Any,
    weather,
    params: WorldParams = WorldParams(),
    econ: EconConfig = EconConfig(),
    initial: State | None = None,
    start: int = 0,
    horizon: int | None = None,
    bounds: ActionBounds = DEFAULT_BOUNDS,
    metadata: Mapping[str, Any] | None = None,
) -> Trajectory:
    """Run a schedule (open loop) or a policy ``f(state) -> action`` on the reference world.

    ``weather`` is indexed by absolute hour; the rollout covers hours
    ``start .. start + horizon - 1``.
    """
    wdata = _weather_array(weather)
    if horizon is None:
        horizon = len(wdata) - start
    if start + horizon > len(wdata):
        raise DomainError(f"weather covers {len(wdata)} h, rollout needs {start + horizon}")
    if initial is None:
        initial = initial_state(wdata[start] if len(wdata) else np.array([10, 70, 0, 1, 0, 400.0]))
    wslice = wdata[start : start + horizon]
    actions = resolve_actions(controller, start, horizon)

    if actions is not None:
        actions = np.asarray(actions, dtype=float)
        _check_actions(actions, bounds)
        sim = simulate_batch(
            actions[None], wslice, params, initial.climate.to_array(), initial.growth.to_array(),
            initial.yield_.fw, initial.assim_today, start,
        )
        climate, growth, delta = sim["climate"][0], sim["growth"][0], sim["delta_fw"][0]
    else:
        climate = np.empty((horizon, 4))
        growth = np.empty((horizon, 3))
        delta = np.zeros(horizon)
        actions = np.empty((horizon, 4))
        s = initial
        for k in range(horizon):
            a = controller(s)
            a = a.to_array() if hasattr(a, "to_array") else np.asarray(a, dtype=float)
            s_next = world_step(s, a, Weather.from_array(wslice[k]), params, bounds)
            actions[k] = a
            climate[k] = s_next.climate.to_array()
            growth[k] = s_next.growth.to_array()
            delta[k] = s_next.yield_.fw - s.yield_.fw
            s = s_next

    return _assemble(actions, wslice, climate, growth, delta, initial, start, econ, {
        "source": "world",
        "params": params.to_dict(),
        "params_hash": params.digest(),
        "econ": econ.to_dict(),
        **(metadata or {}),
    })


def _assemble(actions, weather, climate, growth, delta, initial: State, start: int, econ: EconConfig, metadata) -> Trajectory:
    comps, rewards = ledger_curves(actions, weather, delta, econ)
    T = actions.shape[0]
    boundary = (start + np.arange(T) + 1) % 24 == 0
    fw = initial.yield_.fw + np.cumsum(delta)
    ledger = ledger_at(comps) if T else finalize_ledger(EconomicLedger(), econ)
    return Trajectory(
        weather=np.array(weather, dtype=float).reshape(T, 6),
        climate=climate,
        growth=growth,
        action=np.array(actions, dtype=float).reshape(T, 4),
        reward=rewards,
        daily_yield=fw[boundary],
        climate0=initial.climate.to_array(),
        growth0=initial.growth.to_array(),
        fw0=float(initial.yield_.fw),
        start=start,
        ledger=ledger,
        metadata=dict(metadata),
    )


def replay(traj: Trajectory, params: WorldParams | None = None, econ: EconConfig | None = None) -> Trajectory:
    """Re-run a logged trajectory's actions and weather open loop on the world."""
    params = params or WorldParams.from_dict(traj.metadata.get("params", {}))
    econ = econ or EconConfig(**traj.metadata.get("econ", {}))
    init = State(
        weather=Weather.from_array(traj.weather[0]) if len(traj) else initial_state(np.array([10, 70, 0, 1, 0, 400.0])).weather,
        climate=Climate.from_array(traj.climate0),
        growth=Growth.from_array(traj.growth0),
        yield_=YieldState(traj.fw0),
        hour_of_day=traj.start % 24,
        day=traj.start // 24,
        assim_today=float(traj.metadata.get("assim0", 0.0)),
    )
    padded = np.zeros((traj.start + len(traj), 6))
    padded[traj.start :] = traj.weather
    meta = {k: v for k, v in traj.metadata.items() if k not in ("source", "params", "params_hash", "econ")}
    return world_rollout(traj.action, padded, params, econ, init, traj.start, len(traj), metadata=meta)


# ------------------------------------------------------------------------ datasets

Sampler = Callable[[np.random.Generator, int, ActionBounds], np.ndarray]


def random_piecewise_actions(
    rng: np.random.Generator, horizon: int, bounds: ActionBounds = DEFAULT_BOUNDS, min_len: int = 6, max_len: int = 24
) -> np.ndarray:
    """Piecewise-constant setpoints, segments of ``min_len..max_len`` hours, uniform in the box."""
    out = np.empty((horizon, 4))
    t = 0
    while t < horizon:
        seg = int(rng.integers(min_len, max_len + 1))
        out[t : t + seg] = rng.uniform(bounds.low_array, bounds.high_array)
        t += seg
    return out


def generate_dataset(
    n_episodes: int,
    days: int,
    seed: int,
    params: WorldParams = WorldParams(),
    econ: EconConfig = EconConfig(),
    profile: str = "temperate",
    sampler: Sampler | None = None,
    bounds: ActionBounds = DEFAULT_BOUNDS,
    out_dir: str | Path | None = None,
    chunk: int = 256,
) -> Dataset:
    """Simulate ``n_episodes`` reference-world episodes under random schedules.

    Each episode draws its own weather and schedule from a child of
    ``SeedSequence(seed)``, so the dataset is reproducible and datasets built
    from different seeds share no schedules.
    """
    if n_episodes < 1:
        raise DomainError("n_episodes must be >= 1")
    sampler = sampler or random_piecewise_actions
    T = 24 * days
    children = np.random.SeedSequence(seed).spawn(n_episodes)
    weathers, schedules, wseeds = [], [], []
    for child in children:
        rng = np.random.default_rng(child)
        wseed = int(rng.integers(2**31 - 1))
        wseeds.append(wseed)
        weathers.append(generate_weather(days, wseed, profile).data)
        schedules.append(sampler(rng, T, bounds))

    episodes: list[Trajectory] = []
    for lo in range(0, n_episodes, chunk):
        hi = min(n_episodes, lo + chunk)
        acts = np.stack(schedules[lo:hi])
        _check_actions(acts, bounds)
        wx = np.stack(weathers[lo:hi])
        sim = simulate_batch(acts, wx, params)
        comps, rewards = ledger_curves(acts, wx, sim["delta_fw"], econ)
        boundary = (np.arange(T) + 1) % 24 == 0
        fw = np.cumsum(sim["delta_fw"], axis=1)
        for j in range(hi - lo):
            i = lo + j
            episodes.append(
                Trajectory(
                    weather=wx[j],
                    climate=sim["climate"][j],
                    growth=sim["growth"][j],
                    action=acts[j],
                    reward=rewards[j],
                    daily_yield=fw[j][boundary],
                    climate0=INITIAL_CLIMATE.copy(),
                    growth0=INITIAL_GROWTH.copy(),
                    ledger=ledger_at(comps, (j,)),
                    metadata={
                        "source": "world",
                        "dataset_seed": seed,
                        "episode": i,
                        "weather_seed": wseeds[i],
                        "profile": profile,
                        "params": params.to_dict(),
                        "params_hash": params.digest(),
                        "econ": econ.to_dict(),
                    },
                )
            )
    ds = Dataset(episodes, {"seed": seed, "n_episodes": n_episodes, "days": days, "profile": profile, "params_hash": params.digest()})
    if out_dir is not None:
        ds.save(out_dir)
    return ds
