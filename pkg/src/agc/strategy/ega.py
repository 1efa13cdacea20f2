"""Elitist genetic algorithm over real-valued genomes, and its schedule front end."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from ..domain import DEFAULT_BOUNDS, ActionBounds, DomainError, EconConfig, State, ledger_curves
from ..world import WorldParams, _weather_array, initial_state
from ..world import simulate_batch as world_simulate_batch
from .schedule import Layout, Schedule, genome_bounds

FitnessFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class EgaConfig:
    population: int = 64
    elite_fraction: float = 0.125
    tournament: int = 3
    crossover_rate: float = 0.9
    mutation_rate: float | None = None  # None -> 2 / (number of free genes)
    sigma_fraction: float = 0.1  # mutation step as a share of each gene's range
    sigma_decay: float = 0.98  # per-generation multiplier on sigma_fraction
    generations: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population < 2:
            raise DomainError("population must be >= 2")
        if not 0.0 < self.elite_fraction < 1.0:
            raise DomainError("elite_fraction must be in (0, 1)")
        if self.n_elite >= self.population:
            raise DomainError(f"population {self.population} too small for {self.n_elite} elites")
        if self.tournament < 1:
            raise DomainError("tournament size must be >= 1")
        for name in ("crossover_rate", "sigma_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise DomainError(f"{name} must be in [0, 1]")
        if self.mutation_rate is not None and not 0.0 <= self.mutation_rate <= 1.0:
            raise DomainError("mutation_rate must be in [0, 1]")
        if not 0.0 < self.sigma_decay <= 1.0:
            raise DomainError("sigma_decay must be in (0, 1]")
        if self.generations < 0:
            raise DomainError("generations must be >= 0")

    @property
    def n_elite(self) -> int:
        return max(1, int(round(self.population * self.elite_fraction)))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EgaConfig":
        return cls(**d)


@dataclass
class EgaResult:
    best: np.ndarray
    best_fitness: float
    history: list[dict[str, float]] = field(default_factory=list)  # generation, best, mean, std

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["generation", "best", "mean", "std"])
        for h in self.history:
            w.writerow([h["generation"], repr(h["best"]), repr(h["mean"]), repr(h["std"])])
        return buf.getvalue()


def _snap(pop: np.ndarray, levels: np.ndarray | None) -> np.ndarray:
    if levels is None:
        return pop
    idx = np.abs(pop[..., None] - levels[None]).argmin(axis=-1)
    return np.take_along_axis(np.broadcast_to(levels, pop.shape + levels.shape[-1:]), idx[..., None], -1)[..., 0]


def evolve(
    fitness: FitnessFn,
    low: np.ndarray,
    high: np.ndarray,
    cfg: EgaConfig = EgaConfig(),
    init: Sequence[np.ndarray] = (),
    free: np.ndarray | None = None,
    levels: np.ndarray | None = None,
    anchor: np.ndarray | None = None,
) -> EgaResult:
    """Maximize ``fitness`` (batched: ``(P, L) -> (P,)``) over the box ``[low, high]``.

    ``init`` genomes seed the first population; the rest is uniform in the box.
    Genes where ``free`` is False are held at ``anchor`` (default: the first
    seed).
    ``levels`` (``(L, n_levels)``) restricts every gene to a discrete set;
    mutation then redraws the gene uniformly from its levels.
    Generation 0 is the evaluated initial population; each later generation
    keeps the top ``n_elite`` unchanged and fills the rest by tournament
    selection, uniform crossover and Gaussian mutation.
    """
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    L = low.size
    if high.shape != low.shape or np.any(high < low):
        raise DomainError("invalid genome box")
    free = np.ones(L, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    if free.shape != (L,):
        raise DomainError("free mask must match genome length")
    if levels is not None:
        levels = np.broadcast_to(np.asarray(levels, dtype=float), (L, np.shape(levels)[-1]))
    rng = np.random.default_rng(cfg.seed)
    P = cfg.population
    n_free = int(free.sum())
    rate = cfg.mutation_rate if cfg.mutation_rate is not None else min(1.0, 2.0 / max(1, n_free))
    span = high - low

    seeds = [np.clip(np.asarray(g, dtype=float), low, high) for g in init][:P]
    if anchor is None and seeds:
        anchor = seeds[0]
    if not free.all() and anchor is None:
        raise DomainError("frozen genes need an anchor genome to take their values from")
    pop = low + rng.random((P, L)) * span
    pop = _snap(pop, levels)
    if anchor is not None:
        pop[:, ~free] = np.asarray(anchor, dtype=float)[~free]
    if seeds:
        pop[: len(seeds)] = seeds

    fits = np.asarray(fitness(pop), dtype=float)
    history: list[dict[str, float]] = []
    best_fit, best = -np.inf, pop[0].copy()

    def record(gen: int) -> None:
        nonlocal best_fit, best
        i = int(np.argmax(fits))
        if fits[i] > best_fit:
            best_fit, best = float(fits[i]), pop[i].copy()
        history.append({"generation": gen, "best": best_fit, "mean": float(fits.mean()), "std": float(fits.std())})

    record(0)
    n_elite = cfg.n_elite
    sigma = cfg.sigma_fraction
    for gen in range(1, cfg.generations + 1):
        order = np.argsort(-fits, kind="stable")
        children = np.empty_like(pop)
        children[:n_elite] = pop[order[:n_elite]]
        n_kids = P - n_elite
        # tournament: the contestant with the highest fitness wins
        contest = rng.integers(0, P, size=(2, n_kids, cfg.tournament))
        winners = np.take_along_axis(contest, np.argmax(fits[contest], axis=-1)[..., None], -1)[..., 0]
        pa, pb = pop[winners[0]], pop[winners[1]]
        cross = rng.random(n_kids) < cfg.crossover_rate
        take_b = (rng.random((n_kids, L)) < 0.5) & cross[:, None]
        kids = np.where(take_b, pb, pa)
        mutate = (rng.random((n_kids, L)) < rate) & free
        if levels is None:
            kids = np.clip(kids + mutate * rng.normal(0.0, 1.0, (n_kids, L)) * (sigma * span), low, high)
        else:
            # a Gaussian step would mostly snap back; draw a fresh level instead
            pick = rng.integers(0, levels.shape[1], size=(n_kids, L))
            kids = np.where(mutate, levels[np.arange(L), pick], kids)
        children[n_elite:] = kids
        pop = children
        fits = np.asarray(fitness(pop), dtype=float)
        record(gen)
        sigma *= cfg.sigma_decay
    return EgaResult(best, best_fit, history)


# ------------------------------------------------------------------ schedule front end


def rollout_profit(
    actions: np.ndarray,
    env: Any,
    weather: np.ndarray,
    econ: EconConfig,
    initial: State | None = None,
    start: int = 0,
) -> np.ndarray:
    """Final net profit of each open-loop rollout in ``actions`` ``(B, T, 4)``.

    ``env`` is a twin simulator (anything with ``simulate_batch``) or
    :class:`WorldParams` for the reference world.
    """
    actions = np.asarray(actions, dtype=float)
    B, T = actions.shape[:2]
    wdata = _weather_array(weather)
    wslice = wdata[start : start + T]
    if len(wslice) < T:
        raise DomainError(f"weather covers {len(wdata)} h, rollout needs {start + T}")
    if initial is None:
        initial = initial_state(wdata[start])
    c0, g0, fw0 = initial.climate.to_array(), initial.growth.to_array(), initial.yield_.fw
    if isinstance(env, WorldParams):
        out = world_simulate_batch(actions, wslice, env, c0, g0, fw0, initial.assim_today, start)
    elif hasattr(env, "simulate_batch"):
        out = env.simulate_batch(actions, wslice, c0, g0, fw0, start)
    else:
        raise DomainError(f"cannot evaluate on {type(env).__name__}")
    comps, _ = ledger_curves(actions, np.broadcast_to(wslice, (B, T, 6)), out["delta_fw"], econ)
    costs = sum(comps[k][:, -1] for k in ("energy_cost", "co2_cost", "water_cost", "maintenance_cost", "depreciation"))
    return comps["gains"][:, -1] - costs


def evaluate_schedule(
    schedule: Schedule,
    env: Any,
    weather,
    econ: EconConfig = EconConfig(),
    initial: State | None = None,
    start: int = 0,
) -> float:
    """Net profit of running ``schedule`` from ``start`` to its horizon on ``env``."""
    acts = schedule.actions(start, schedule.horizon - start)
    if len(acts) == 0:
        return -econ.depreciation_per_episode
    return float(rollout_profit(acts[None], env, weather, econ, initial, start)[0])


def schedule_fitness(
    layout: Layout, env: Any, weather, econ: EconConfig, initial: State | None = None, start: int = 0, chunk: int = 128
) -> FitnessFn:
    """Batched fitness over genomes for the remaining horizon ``[start, layout.horizon)``."""
    hours = layout.slot_of(np.arange(start, layout.horizon))

    def fitness(pop: np.ndarray) -> np.ndarray:
        vals = pop.reshape(len(pop), layout.n_slots, 4)
        out = np.empty(len(pop))
        for lo in range(0, len(pop), chunk):
            out[lo : lo + chunk] = rollout_profit(vals[lo : lo + chunk][:, hours], env, weather, econ, initial, start)
        return out

    return fitness


def ega_optimize(
    cfg: EgaConfig,
    sim: Any,
    weather,
    econ: EconConfig = EconConfig(),
    layout: Layout | None = None,
    bounds: ActionBounds = DEFAULT_BOUNDS,
    incumbent: Schedule | None = None,
    seeds: Sequence[Schedule] = (),
    initial: State | None = None,
    start: int = 0,
    freeze_elapsed: bool = True,
    warm_start: bool = True,
) -> tuple[Schedule, EgaResult]:
    """Search setpoint schedules on ``sim`` and return the best one with its history.

    The incumbent (if any, and only when ``warm_start``) and the extra
    ``seeds`` join the first population.
    With ``start > 0`` only the remaining horizon is scored and, when
    ``freeze_elapsed``, every slot already used before ``start`` keeps the
    incumbent's value.
    """
    if layout is None:
        layout = incumbent.layout if incumbent is not None else Layout(len(_weather_array(weather)))
    if start >= layout.horizon:
        raise DomainError(f"start {start} is past the horizon {layout.horizon}")
    warm = [incumbent] if incumbent is not None and warm_start else []
    init = [s.genome() for s in warm + list(seeds)]
    if any(g.size != layout.genome_length for g in init):
        raise DomainError("seed schedules must share the search layout")
    free = None
    if start > 0 and freeze_elapsed:
        if incumbent is None:
            raise DomainError("freezing elapsed genes requires an incumbent schedule")
        free = np.repeat(~layout.elapsed_slots(start), 4)
    low, high = genome_bounds(layout, bounds)
    anchor = incumbent.genome() if incumbent is not None else None
    res = evolve(schedule_fitness(layout, sim, weather, econ, initial, start), low, high, cfg, init, free, anchor=anchor)
    return Schedule.from_genome(res.best, layout), res


def save_history(res: EgaResult, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(res.history_csv())
    return path
