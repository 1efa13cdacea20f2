"""Learned three-stage greenhouse simulator.

Three independent networks, composed at rollout time:

* climate: (weather, action, previous climate) -> climate, hourly
* growth:  (climate, previous growth) -> growth, hourly
* yield:   (hour-23 growth, previous fresh weight) -> daily harvest increment

The climate and growth networks predict the change from the previous value.
The yield network's output is floored at zero so cumulative yield can never
fall. Networks are fitted one step at a time on reference transitions and can
later be fine-tuned on freshly observed trajectories.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import nn
from .domain import (
    CLIMATE_HIGH,
    CLIMATE_LOW,
    DEFAULT_BOUNDS,
    ActionBounds,
    Climate,
    DomainError,
    EconConfig,
    Growth,
    State,
    Weather,
    YieldState,
    ledger_at,
    ledger_curves,
)
from .metrics import r2_score
from .trajectory import Dataset, Trajectory
from .world import INITIAL_CLIMATE, INITIAL_GROWTH, _assemble, _check_actions, _weather_array, initial_state, resolve_actions

CLIMATE_IN, GROWTH_IN, YIELD_IN = 14, 7, 4
R2_VARIABLES = ("AirT", "AirRH", "AirCO2", "PAR", "LAI", "PlantLoad", "NetGrowth", "FW")
BUNDLE_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 0.01
    epochs: int = 12
    batch: int = 256
    momentum: float = 0.9
    lr_decay: float = 0.8
    yield_epochs: int = 60
    val_fraction: float = 0.1
    lai_max: float = 4.0  # growth clamp

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ArchConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(int(h) for h in d["hidden"])
        return cls(**d)


@dataclass
class TwinSimulator:
    climate_net: nn.Net
    growth_net: nn.Net
    yield_net: nn.Net
    version: int = 0
    history: list[dict[str, Any]] = field(default_factory=list)
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self) -> None:
        for name, net, n_in, n_out in (
            ("climate", self.climate_net, CLIMATE_IN, 4),
            ("growth", self.growth_net, GROWTH_IN, 3),
            ("yield", self.yield_net, YIELD_IN, 1),
        ):
            if net.n_in != n_in or net.n_out != n_out:
                raise DomainError(f"{name} net must map {n_in} -> {n_out}, got {net.n_in} -> {net.n_out}")

    def copy(self) -> "TwinSimulator":
        return TwinSimulator(
            self.climate_net.copy(), self.growth_net.copy(), self.yield_net.copy(),
            self.version, [dict(h) for h in self.history], self.arch,
        )

    # -- batched one-step maps -------------------------------------------------

    def climate_step(self, w: np.ndarray, a: np.ndarray, c: np.ndarray) -> np.ndarray:
        x = np.concatenate([w, a, c], axis=-1)
        return np.clip(c + nn.forward(self.climate_net, x), CLIMATE_LOW, CLIMATE_HIGH)

    def growth_step(self, c: np.ndarray, g: np.ndarray) -> np.ndarray:
        g1 = g + nn.forward(self.growth_net, np.concatenate([c, g], axis=-1))
        g1 = np.maximum(g1, 0.0)
        g1[..., 0] = np.minimum(g1[..., 0], self.arch.lai_max)
        return g1

    def yield_increment(self, g_last: np.ndarray, fw_prev: np.ndarray) -> np.ndarray:
        x = np.concatenate([g_last, np.asarray(fw_prev)[..., None]], axis=-1)
        return np.maximum(0.0, nn.forward(self.yield_net, x)[..., 0])

    def step(self, climate, growth, fw, action, w, t: int):
        """One hour for hour index ``t``; returns ``(climate', growth', fw', delta_fw)``."""
        c1 = self.climate_step(w, action, climate)
        g1 = self.growth_step(c1, growth)
        if (t + 1) % 24 == 0:
            delta = self.yield_increment(g1, fw)
        else:
            delta = np.zeros(np.shape(fw))
        return c1, g1, fw + delta, delta

    def simulate_batch(self, actions, weather, climate0=None, growth0=None, fw0=0.0, start: int = 0) -> dict[str, np.ndarray]:
        """Open-loop rollout of ``(B, T, 4)`` actions; mirrors :func:`agc.world.simulate_batch`."""
        actions = np.asarray(actions, dtype=float)
        B, T = actions.shape[:2]
        c = np.broadcast_to(INITIAL_CLIMATE if climate0 is None else np.asarray(climate0, float), (B, 4)).copy()
        g = np.broadcast_to(INITIAL_GROWTH if growth0 is None else np.asarray(growth0, float), (B, 3)).copy()
        fw = np.broadcast_to(np.asarray(fw0, float), (B,)).copy()
        weather = np.asarray(weather, dtype=float)
        out_c = np.empty((B, T, 4))
        out_g = np.empty((B, T, 3))
        out_d = np.zeros((B, T))
        for k in range(T):
            w = np.broadcast_to(weather[k] if weather.ndim == 2 else weather[:, k], (B, 6))
            c, g, fw, delta = self.step(c, g, fw, actions[:, k], w, start + k)
            out_c[:, k] = c
            out_g[:, k] = g
            out_d[:, k] = delta
        return {"climate": out_c, "growth": out_g, "delta_fw": out_d, "fw": fw}


# ---------------------------------------------------------------- single-sample API


def predict_climate(sim: TwinSimulator, w_prev: Weather, a_prev, c_prev: Climate) -> Climate:
    a = a_prev.to_array() if hasattr(a_prev, "to_array") else np.asarray(a_prev, dtype=float)
    return Climate.from_array(sim.climate_step(w_prev.to_array(), a, c_prev.to_array()))


def predict_growth(sim: TwinSimulator, c: Climate, g_prev: Growth) -> Growth:
    return Growth.from_array(sim.growth_step(c.to_array(), g_prev.to_array()))


def predict_yield_day(sim: TwinSimulator, g_last: Growth, y_prev: YieldState) -> YieldState:
    inc = float(sim.yield_increment(g_last.to_array(), np.float64(y_prev.fw)))
    return YieldState(y_prev.fw + inc)


def sim_rollout(
    sim: TwinSimulator,
    controller: Any,
    weather,
    initial: State | None = None,
    econ: EconConfig = EconConfig(),
    start: int = 0,
    horizon: int | None = None,
    bounds: ActionBounds = DEFAULT_BOUNDS,
) -> Trajectory:
    """Roll the twin forward under a schedule or a policy ``f(state) -> action``.

    The ledger and rewards use exactly the same accounting as the reference
    world, so trajectories from both are directly comparable.
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
    c0, g0, fw0 = initial.climate.to_array(), initial.growth.to_array(), initial.yield_.fw
    if actions is not None:
        actions = np.asarray(actions, dtype=float)
        _check_actions(actions, bounds)
        out = sim.simulate_batch(actions[None], wslice, c0, g0, fw0, start)
        climate, growth, delta = out["climate"][0], out["growth"][0], out["delta_fw"][0]
    else:
        climate = np.empty((horizon, 4))
        growth = np.empty((horizon, 3))
        delta = np.zeros(horizon)
        actions = np.empty((horizon, 4))
        c, g, fw = c0, g0, np.float64(fw0)
        s = initial
        for k in range(horizon):
            a = controller(s)
            a = a.to_array() if hasattr(a, "to_array") else np.asarray(a, dtype=float)
            _check_actions(a, bounds)
            c, g, fw, d = sim.step(c, g, fw, a, wslice[k], start + k)
            actions[k], climate[k], growth[k], delta[k] = a, c, g, d
            t1 = start + k + 1
            s = State(Weather.from_array(wslice[k]), Climate.from_array(c), Growth.from_array(g),
                      YieldState(float(fw)), t1 % 24, t1 // 24)
    return _assemble(actions, wslice, climate, growth, delta, initial, start, econ,
                     {"source": "twin", "sim_version": sim.version, "econ": econ.to_dict()})


# ---------------------------------------------------------------------- training


def transition_tuples(episodes: Iterable[Trajectory]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Teacher-forced training pairs for the three networks.

    Targets for climate and growth are changes from the previous value; the
    yield target is the harvest increment booked at each day boundary.
    """
    xc, yc, xg, yg, xy, yy = [], [], [], [], [], []
    for ep in episodes:
        if len(ep) == 0:
            continue
        c_prev = np.vstack([ep.climate0[None], ep.climate[:-1]])
        g_prev = np.vstack([ep.growth0[None], ep.growth[:-1]])
        xc.append(np.hstack([ep.weather, ep.action, c_prev]))
        yc.append(ep.climate - c_prev)
        xg.append(np.hstack([ep.climate, g_prev]))
        yg.append(ep.growth - g_prev)
        steps = ep.boundary_steps()
        if len(steps):
            fw_prev = np.concatenate([[ep.fw0], ep.daily_yield[:-1]])
            xy.append(np.hstack([ep.growth[steps], fw_prev[:, None]]))
            yy.append((ep.daily_yield - fw_prev)[:, None])

    def cat(parts, width):
        return np.vstack(parts) if parts else np.empty((0, width))

    return {
        "climate": (cat(xc, CLIMATE_IN), cat(yc, 4)),
        "growth": (cat(xg, GROWTH_IN), cat(yg, 3)),
        "yield": (cat(xy, YIELD_IN), cat(yy, 1)),
    }


def _split(n: int, frac: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_val = int(round(n * frac)) if n >= 10 else 0
    return order[n_val:], order[:n_val]


def train_simulator(dataset: Dataset | Sequence[Trajectory], arch: ArchConfig = ArchConfig(), seed: int = 0) -> TwinSimulator:
    """Fit the three networks independently on one-step transitions."""
    episodes = list(dataset)
    if not episodes:
        raise DomainError("empty dataset")
    short = [i for i, ep in enumerate(episodes) if len(ep) < 2]
    if short:
        raise DomainError(f"episodes {short[:5]} have fewer than 2 timesteps")
    data = transition_tuples(episodes)
    if len(data["yield"][0]) == 0:
        raise DomainError("dataset has no complete day; cannot fit the yield network")
    rng = np.random.default_rng(seed)
    nets, reports = {}, {}
    for k, (name, n_in, n_out) in enumerate((("climate", CLIMATE_IN, 4), ("growth", GROWTH_IN, 3), ("yield", YIELD_IN, 1))):
        x, y = data[name]
        tr, va = _split(len(x), arch.val_fraction, rng)
        net = nn.net_init([n_in, *arch.hidden, n_out], seed=seed * 7 + k)
        epochs = arch.yield_epochs if name == "yield" else arch.epochs
        rep = nn.train_mse(
            net, x[tr], y[tr], lr=arch.lr, epochs=epochs, batch=arch.batch, seed=seed * 7 + k,
            momentum=arch.momentum, lr_decay=arch.lr_decay if name != "yield" else arch.lr_decay ** (arch.epochs / epochs),
            val_inputs=x[va], val_targets=y[va],
        )
        nets[name] = net
        reports[name] = {"train_loss": rep.train_loss, "val_loss": rep.val_loss}
    ds_hash = dataset.digest() if isinstance(dataset, Dataset) else Dataset(episodes).digest()
    return TwinSimulator(
        nets["climate"], nets["growth"], nets["yield"], version=1,
        history=[{"event": "train", "dataset": ds_hash, "seed": seed, "losses": reports}], arch=arch,
    )


def fine_tune(
    sim: TwinSimulator,
    new_trajectories: Sequence[Trajectory],
    lr_ft: float = 0.002,
    epochs_ft: int = 20,
    replay: Sequence[Trajectory] | None = None,
    replay_fraction: float = 0.5,
    seed: int = 0,
    batch: int = 64,
    replay_tuples: Mapping[str, tuple[np.ndarray, np.ndarray]] | None = None,
) -> TwinSimulator:
    """Continue training from the current weights on newly observed data.

    A ``replay_fraction`` share of each network's training set is drawn from
    ``replay`` (old data, or its precomputed ``replay_tuples``) to limit
    forgetting. Normalization statistics stay
    frozen. For every network the weights with the lowest loss on the new data
    over all epochs (the starting weights included) are kept, so fine-tuning
    never makes the fit to the new data worse. Returns a new simulator with
    the version bumped.
    """
    new_trajectories = [tr for tr in new_trajectories if len(tr)]
    if not new_trajectories:
        raise DomainError("fine_tune needs at least one non-empty trajectory")
    if not 0.0 <= replay_fraction < 1.0:
        raise DomainError("replay_fraction must be in [0, 1)")
    out = sim.copy()
    rng = np.random.default_rng(seed)
    new = transition_tuples(new_trajectories)
    old = replay_tuples if replay_tuples is not None else (transition_tuples(replay) if replay else None)
    losses = {}
    for k, name in enumerate(("climate", "growth", "yield")):
        x_new, y_new = new[name]
        if len(x_new) == 0:
            continue
        net = getattr(out, f"{name}_net")
        x, y = x_new, y_new
        if old is not None and replay_fraction > 0 and len(old[name][0]):
            n_old = int(round(len(x_new) * replay_fraction / (1.0 - replay_fraction)))
            pick = rng.integers(0, len(old[name][0]), size=n_old)
            x = np.vstack([x_new, old[name][0][pick]])
            y = np.vstack([y_new, old[name][1][pick]])
        before = nn.mse(net, x_new, y_new)
        best = [before, net.copy()]

        def keep_best(epoch: int, loss: float, net=net, best=best, x_new=x_new, y_new=y_new) -> None:
            cur = nn.mse(net, x_new, y_new)
            if cur < best[0]:
                best[0], best[1] = cur, net.copy()

        if epochs_ft > 0:
            nn.train_mse(net, x, y, lr=lr_ft, epochs=epochs_ft, batch=batch, seed=seed * 11 + k,
                         momentum=sim.arch.momentum, fit_normalization=False, on_epoch=keep_best)
        setattr(out, f"{name}_net", best[1])
        losses[name] = {"before": before, "after": best[0]}
    digest = Dataset(list(new_trajectories)).digest()
    out.version = sim.version + 1
    out.history.append({"event": "fine_tune", "dataset": digest, "seed": seed, "losses": losses})
    return out


# -------------------------------------------------------------------- evaluation


@dataclass
class R2Report:
    clamped: dict[str, float]
    raw: dict[str, float]
    flagged: list[str]

    @property
    def mean(self) -> float:
        vals = [v for k, v in self.clamped.items() if k not in self.flagged]
        return float(np.mean(vals)) if vals else float("nan")

    def rows(self) -> list[tuple[str, float, float]]:
        return [(k, self.clamped[k], self.raw[k]) for k in R2_VARIABLES]


def one_step_predictions(sim: TwinSimulator, episodes: Sequence[Trajectory]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Teacher-forced one-step predictions and truths per variable."""
    data = transition_tuples(episodes)
    xc, yc = data["climate"]
    c_prev = xc[:, 10:14]
    c_true = c_prev + yc
    c_pred = sim.climate_step(xc[:, :6], xc[:, 6:10], c_prev)
    xg, yg = data["growth"]
    g_prev = xg[:, 4:7]
    g_true = g_prev + yg
    g_pred = sim.growth_step(xg[:, :4], g_prev)
    xy, yy = data["yield"]
    fw_prev = xy[:, 3]
    fw_true = fw_prev + yy[:, 0]
    fw_pred = fw_prev + sim.yield_increment(xy[:, :3], fw_prev)
    out = {}
    for i, name in enumerate(R2_VARIABLES[:4]):
        out[name] = (c_true[:, i], c_pred[:, i])
    for i, name in enumerate(R2_VARIABLES[4:7]):
        out[name] = (g_true[:, i], g_pred[:, i])
    out["FW"] = (fw_true, fw_pred)
    return out


def evaluate_r2(sim: TwinSimulator, test: Dataset | Sequence[Trajectory]) -> R2Report:
    episodes = list(test)
    if not episodes:
        raise DomainError("empty test dataset")
    clamped, raw, flagged = {}, {}, []
    for name, (truth, pred) in one_step_predictions(sim, episodes).items():
        r = r2_score(truth, pred)
        raw[name] = r
        if np.isnan(r):
            flagged.append(name)
            clamped[name] = float("nan")
        else:
            clamped[name] = float(min(1.0, max(0.0, r)))
    return R2Report(clamped, raw, flagged)


# --------------------------------------------------------------------------- I/O


def save_simulator(sim: TwinSimulator, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("climate", "growth", "yield"):
        nn.save_net(getattr(sim, f"{name}_net"), directory / f"{name}.json")
    manifest = {"version": BUNDLE_VERSION, "sim_version": sim.version, "history": sim.history, "arch": sim.arch.to_dict()}
    (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return directory


def load_simulator(directory: str | Path) -> TwinSimulator:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise nn.NetFormatError(f"{directory}/manifest.json: invalid JSON ({exc.msg})") from exc
    if manifest.get("version") != BUNDLE_VERSION:
        raise nn.NetFormatError(f"unsupported simulator bundle version {manifest.get('version')!r}")
    nets = {name: nn.load_net(directory / f"{name}.json") for name in ("climate", "growth", "yield")}
    return TwinSimulator(nets["climate"], nets["growth"], nets["yield"], manifest["sim_version"],
                         manifest.get("history", []), ArchConfig.from_dict(manifest.get("arch", {})))
