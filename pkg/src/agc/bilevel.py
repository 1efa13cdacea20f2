"""Closed-loop deployment: alternate strategy search on the twin with twin recalibration.

Every hour ``t`` of the episode, in this order:

1. if ``t % K1 == 0`` the strategy is re-optimized on the current twin for the
   remaining horizon ``[t, T)``, warm-started from the incumbent;
2. if ``t % K2 == 0`` and at least one hour has been observed, the twin is
   fine-tuned on the hours observed so far (``< t``);
3. the incumbent's action for hour ``t`` is executed on the reference world.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .domain import DEFAULT_BOUNDS, ActionBounds, Climate, DomainError, EconConfig, Growth, State, Weather, YieldState
from .strategy.ega import EgaConfig, ega_optimize, evaluate_schedule
from .strategy.sac import Policy, SacConfig, TwinEnv, observe, policy_act, sac_train
from .strategy.schedule import Layout, Schedule, baseline_schedule
from .trajectory import Dataset, Trajectory
from .twin import TwinSimulator, fine_tune, transition_tuples
from .world import WorldParams, _assemble, _weather_array, initial_state, simulate_batch, world_step

OPTIMIZERS = ("ega", "sac")


@dataclass(frozen=True)
class BilevelConfig:
    K1: int = 360
    K2: int = 360
    T: int = 1440
    optimizer: str = "ega"
    budget: int = 50  # generations per re-optimization (SAC: multiples of 100 env steps)
    warm_start: bool = True
    seed: int = 0
    lr_ft: float = 0.002
    epochs_ft: int = 20
    replay_fraction: float = 0.5
    initial_strategy: str = "expert_like"
    control_interval: int = 1
    block_days: int = 5
    ega: EgaConfig = field(default_factory=EgaConfig)
    sac: SacConfig = field(default_factory=SacConfig)

    def __post_init__(self) -> None:
        if self.K1 < 1 or self.K2 < 1 or self.T < 1:
            raise DomainError("K1, K2 and T must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise DomainError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.budget < 0:
            raise DomainError("budget must be >= 0")

    @property
    def layout(self) -> Layout:
        return Layout(self.T, self.control_interval, self.block_days)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["ega"] = self.ega.to_dict()
        d["sac"] = self.sac.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BilevelConfig":
        d = dict(d)
        if "ega" in d:
            d["ega"] = EgaConfig.from_dict(d["ega"])
        if "sac" in d:
            d["sac"] = SacConfig.from_dict(d["sac"])
        return cls(**d)


@dataclass
class BilevelLog:
    events: list[dict[str, Any]] = field(default_factory=list)

    def add(self, **event: Any) -> None:
        self.events.append(event)

    def of(self, kind: str) -> list[dict[str, Any]]:
        return [e for e in self.events if e["event"] == kind]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_jsonl())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "BilevelLog":
        return cls([json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()])


@dataclass
class BilevelResult:
    trajectory: Trajectory
    sim: TwinSimulator
    dataset: Dataset
    log: BilevelLog
    strategy: Schedule | Policy


def _state_at(world_state: dict[str, Any], weather: np.ndarray, t: int) -> State:
    return State(
        Weather.from_array(weather[t]),
        Climate.from_array(world_state["climate"]),
        Growth.from_array(world_state["growth"]),
        YieldState(float(world_state["fw"])),
        t % 24,
        t // 24,
        float(world_state["assim"]),
    )


def reoptimize_strategy(
    sim: TwinSimulator,
    incumbent: Schedule,
    t_now: int,
    budget: int,
    weather,
    econ: EconConfig = EconConfig(),
    state_now: State | None = None,
    ega: EgaConfig = EgaConfig(),
    bounds: ActionBounds = DEFAULT_BOUNDS,
    warm_start: bool = True,
) -> Schedule:
    """Search the genes covering ``[t_now, T)`` on ``sim``; elapsed genes stay as executed.

    ``budget`` is the number of generations; 0 returns the incumbent. The
    result never scores below the incumbent on ``sim``.
    """
    return _reoptimize(sim, incumbent, t_now, budget, weather, econ, state_now, ega, bounds, warm_start)[0]


def _reoptimize(sim, incumbent, t_now, budget, weather, econ, state_now, ega, bounds, warm_start):
    if not 0 <= t_now < incumbent.horizon:
        raise DomainError(f"t_now {t_now} outside [0, {incumbent.horizon})")
    inc_fit = evaluate_schedule(incumbent, sim, weather, econ, state_now, t_now)
    if budget == 0:
        return incumbent.copy(), inc_fit
    best, res = ega_optimize(
        replace(ega, generations=budget), sim, weather, econ, incumbent.layout, bounds,
        incumbent=incumbent, initial=state_now, start=t_now, warm_start=warm_start,
    )
    if res.best_fitness < inc_fit:
        return incumbent.copy(), inc_fit
    return best, res.best_fitness


def run_bilevel(
    cfg: BilevelConfig,
    sim0: TwinSimulator,
    D0: Dataset,
    world: WorldParams,
    weather,
    econ: EconConfig = EconConfig(),
    bounds: ActionBounds = DEFAULT_BOUNDS,
    incumbent: Schedule | Policy | None = None,
) -> BilevelResult:
    """Run one episode of the deployment loop against the reference ``world``."""
    wdata = _weather_array(weather)
    T = cfg.T
    if len(wdata) < T:
        raise DomainError(f"weather covers {len(wdata)} h, need {T}")
    wdata = wdata[:T]
    layout = cfg.layout
    if incumbent is None and cfg.optimizer == "ega":
        incumbent = baseline_schedule(cfg.initial_strategy, layout, seed=cfg.seed, bounds=bounds)
    strategy = incumbent
    sim = sim0
    log = BilevelLog()
    init = initial_state(wdata[0])
    ws = {"climate": init.climate.to_array(), "growth": init.growth.to_array(), "fw": 0.0, "assim": 0.0}
    actions = np.empty((T, 4))
    climate = np.empty((T, 4))
    growth = np.empty((T, 3))
    delta = np.zeros(T)
    replay = list(D0) if D0 is not None else []
    replay_cache = transition_tuples(replay) if replay else None
    n_events = 0

    def observed(t: int) -> Trajectory:
        return _assemble(actions[:t], wdata[:t], climate[:t], growth[:t], delta[:t], init, 0, econ, {"source": "world"})

    t = 0
    while t < T:
        state_now = _state_at(ws, wdata, t)
        if t % cfg.K1 == 0:
            seed = cfg.seed * 1000 + n_events
            if cfg.optimizer == "ega":
                strategy, fit = _reoptimize(
                    sim, strategy, t, cfg.budget, wdata, econ, state_now, replace(cfg.ega, seed=seed), bounds,
                    cfg.warm_start,
                )
            else:
                strategy, fit = _sac_reopt(cfg, sim, strategy, t, wdata, econ, state_now, bounds, seed)
            log.add(step=t, event="reopt", fitness=float(fit), sim_version=sim.version)
            n_events += 1
        if t % cfg.K2 == 0:
            if t == 0:
                log.add(step=t, event="finetune", skipped=True, sim_version=sim.version)
            else:
                sim = fine_tune(
                    sim, [observed(t)], cfg.lr_ft, cfg.epochs_ft, replay=None, replay_fraction=cfg.replay_fraction,
                    seed=cfg.seed * 1000 + n_events, replay_tuples=replay_cache,
                )
                losses = sim.history[-1]["losses"]
                log.add(step=t, event="finetune", skipped=False, sim_version=sim.version,
                        loss={k: v["after"] for k, v in losses.items()})
            n_events += 1
        # act until the next scheduled event
        nxt = min(T, (t // cfg.K1 + 1) * cfg.K1, (t // cfg.K2 + 1) * cfg.K2)
        if isinstance(strategy, Schedule):
            seg = strategy.actions(t, nxt - t)
            out = simulate_batch(seg[None], wdata[t:nxt], world, ws["climate"], ws["growth"], ws["fw"], ws["assim"], t)
            actions[t:nxt] = seg
            climate[t:nxt], growth[t:nxt], delta[t:nxt] = out["climate"][0], out["growth"][0], out["delta_fw"][0]
            ws = {"climate": climate[nxt - 1], "growth": growth[nxt - 1], "fw": float(out["fw"][0]), "assim": float(out["assim"][0])}
        else:
            s = state_now
            for k in range(t, nxt):
                a = policy_act(strategy, observe(strategy, s), deterministic=True)
                s1 = world_step(s, a, Weather.from_array(wdata[k]), world, bounds)
                actions[k], climate[k], growth[k] = a, s1.climate.to_array(), s1.growth.to_array()
                delta[k] = s1.yield_.fw - s.yield_.fw
                s = s1
            ws = {"climate": s.climate.to_array(), "growth": s.growth.to_array(), "fw": s.yield_.fw, "assim": s.assim_today}
        for k in range(t, nxt):
            log.add(step=k, event="act", action=actions[k].tolist(), delta_fw=float(delta[k]), sim_version=sim.version)
        t = nxt

    traj = _assemble(actions, wdata, climate, growth, delta, init, 0, econ, {
        "source": "world", "params": world.to_dict(), "params_hash": world.digest(), "econ": econ.to_dict(),
        "bilevel": cfg.to_dict(),
    })
    dataset = Dataset(list(D0) + [traj] if D0 is not None else [traj])
    log.add(step=T, event="done", net_profit=traj.ledger.net_profit, sim_version=sim.version)
    return BilevelResult(traj, sim, dataset, log, strategy)


def _sac_reopt(cfg, sim, policy, t, wdata, econ, state_now, bounds, seed):
    if cfg.budget == 0 and policy is not None:
        return policy, float("nan")
    env = TwinEnv(sim, wdata, econ, cfg.T - t, t, state_now, bounds, stats_seed=seed)
    sac_cfg = replace(cfg.sac, total_steps=max(1, cfg.budget) * 100)
    res = sac_train(env, sac_cfg, seed, policy if cfg.warm_start else None)
    return res.policy, res.curve[-1][1] if res.curve else float("nan")
