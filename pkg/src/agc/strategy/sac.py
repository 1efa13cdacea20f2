"""Soft actor-critic over a state-conditioned setpoint policy.

The actor outputs a Gaussian over an unbounded pre-action ``u``; actions are
``low + (tanh(u) + 1) / 2 * span`` so every emitted action lies in the box.
Two critics with Polyak-averaged targets and automatic entropy tuning
toward ``-dim(A)`` follow the usual recipe.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol

import numpy as np
import torch
from torch import nn as tnn

from ..domain import DEFAULT_BOUNDS, ActionBounds, DomainError, EconConfig, State, cost_components
from ..world import _weather_array, initial_state

POLICY_FORMAT = "agc-policy"
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


class SacDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class SacConfig:
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 3e-4
    gamma: float = 0.99
    polyak: float = 0.995
    batch: int = 128
    buffer: int = 100_000
    total_steps: int = 5_000
    start_steps: int = 500
    update_every: int = 1
    reward_scale: float = 100.0
    init_alpha: float = 0.2
    eval_every: int = 1_000

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.polyak < 1.0:
            raise DomainError("gamma must be in [0, 1] and polyak in [0, 1)")
        if min(self.batch, self.buffer, self.update_every, self.eval_every) < 1 or self.total_steps < 0:
            raise DomainError("batch, buffer, update_every and eval_every must be positive")
        if self.init_alpha <= 0:
            raise DomainError("init_alpha must be > 0")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SacConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


class Env(Protocol):
    obs_dim: int
    act_low: np.ndarray
    act_high: np.ndarray

    def reset(self) -> np.ndarray: ...

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool]: ...


# --------------------------------------------------------------------------- envs


class BanditEnv:
    """One-step task with reward ``-sum((a - a_star)^2)``."""

    def __init__(self, a_star, low, high) -> None:
        self.a_star = np.atleast_1d(np.asarray(a_star, dtype=float))
        self.act_low = np.atleast_1d(np.asarray(low, dtype=float))
        self.act_high = np.atleast_1d(np.asarray(high, dtype=float))
        self.obs_dim = 1

    def reset(self) -> np.ndarray:
        return np.zeros(1)

    def step(self, action):
        return np.zeros(1), -float(np.sum((np.asarray(action) - self.a_star) ** 2)), True


def _time_features(t: int, start: int, horizon: int) -> np.ndarray:
    ang = 2 * math.pi * (t % 24) / 24
    return np.array([math.sin(ang), math.cos(ang), (t - start) / max(1, horizon)])


class TwinEnv:
    """The twin simulator as an hourly MDP with net-profit increments as rewards.

    Observations are the 14 state values plus hour-of-day sine/cosine and the
    elapsed fraction of the episode, standardized with statistics taken from
    one seeded random-action episode.
    """

    def __init__(
        self,
        sim: Any,
        weather,
        econ: EconConfig = EconConfig(),
        horizon: int = 14 * 24,
        start: int = 0,
        initial: State | None = None,
        bounds: ActionBounds = DEFAULT_BOUNDS,
        stats_seed: int = 0,
    ) -> None:
        self.sim, self.econ, self.horizon, self.start = sim, econ, horizon, start
        self.weather = _weather_array(weather)
        if start + horizon > len(self.weather):
            raise DomainError(f"weather covers {len(self.weather)} h, env needs {start + horizon}")
        self.initial = initial or initial_state(self.weather[start])
        self.act_low, self.act_high = bounds.low_array, bounds.high_array
        self.obs_dim = 17
        self.obs_mean = np.zeros(self.obs_dim)
        self.obs_std = np.ones(self.obs_dim)
        rng = np.random.default_rng(stats_seed)
        obs = [self.reset()]
        done = False
        while not done:
            o, _, done = self.step(rng.uniform(self.act_low, self.act_high))
            obs.append(o)
        obs = np.array(obs)
        self.obs_mean = obs.mean(axis=0)
        self.obs_std = np.where(obs.std(axis=0) > 1e-8, obs.std(axis=0), 1.0)

    def _obs(self) -> np.ndarray:
        x = np.concatenate([self.weather[self.t], self.c, self.g, [self.fw], _time_features(self.t, self.start, self.horizon)])
        return (x - self.obs_mean) / self.obs_std

    def reset(self) -> np.ndarray:
        self.t = self.start
        self.c = self.initial.climate.to_array()
        self.g = self.initial.growth.to_array()
        self.fw = float(self.initial.yield_.fw)
        return self._obs()

    def step(self, action):
        a = np.clip(np.asarray(action, dtype=float), self.act_low, self.act_high)
        w = self.weather[self.t]
        c, g, fw, delta = self.sim.step(self.c, self.g, np.float64(self.fw), a, w, self.t)
        cost = cost_components(a, w, 1.0, self.econ)
        r = float(delta) * self.econ.fruit_price - float(
            cost["energy_cost"] + cost["co2_cost"] + cost["water_cost"] + cost["maintenance_cost"]
        )
        self.c, self.g, self.fw = c, g, float(fw)
        self.t += 1
        done = self.t >= self.start + self.horizon
        if done:
            r -= self.econ.depreciation_per_episode
        obs = self._obs() if not done else np.zeros(self.obs_dim)
        return obs, r, done


def run_episode(env: Env, act) -> float:
    obs, total, done = env.reset(), 0.0, False
    while not done:
        obs, r, done = env.step(act(obs))
        total += r
    return total


# ------------------------------------------------------------------------ networks


def _mlp(n_in: int, hidden, n_out: int) -> tnn.Sequential:
    layers: list[tnn.Module] = []
    for h in hidden:
        layers += [tnn.Linear(n_in, h), tnn.ReLU()]
        n_in = h
    layers.append(tnn.Linear(n_in, n_out))
    return tnn.Sequential(*layers)


@dataclass
class Policy:
    actor: tnn.Sequential  # obs -> (mean, log_std) of the pre-squash Gaussian
    critic1: tnn.Sequential
    critic2: tnn.Sequential
    target1: tnn.Sequential
    target2: tnn.Sequential
    log_alpha: torch.Tensor
    low: np.ndarray
    high: np.ndarray
    obs_mean: np.ndarray
    obs_std: np.ndarray
    config: SacConfig = field(default_factory=SacConfig)
    buffer_capacity: int = 100_000
    time_origin: int = 0  # episode start and length behind the time features
    time_span: int = 14 * 24

    @property
    def alpha(self) -> float:
        return float(self.log_alpha.detach().exp())

    @property
    def act_dim(self) -> int:
        return len(self.low)

    def squash(self, u: np.ndarray) -> np.ndarray:
        a = self.low + (np.tanh(u) + 1.0) * 0.5 * (self.high - self.low)
        return np.clip(a, self.low, self.high)

    def dist(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        with torch.no_grad():
            out = self.actor(torch.as_tensor(np.atleast_2d(obs), dtype=torch.float32))
        mean, log_std = out[:, : self.act_dim], out[:, self.act_dim :].clamp(LOG_STD_MIN, LOG_STD_MAX)
        return mean.numpy().astype(float), log_std.numpy().astype(float)


def new_policy(obs_dim: int, low, high, cfg: SacConfig = SacConfig(), seed: int = 0, obs_mean=None, obs_std=None) -> Policy:
    torch.manual_seed(seed)
    low, high = np.asarray(low, float), np.asarray(high, float)
    n_act = len(low)
    actor = _mlp(obs_dim, cfg.hidden, 2 * n_act)
    c1, c2 = _mlp(obs_dim + n_act, cfg.hidden, 1), _mlp(obs_dim + n_act, cfg.hidden, 1)
    t1, t2 = _mlp(obs_dim + n_act, cfg.hidden, 1), _mlp(obs_dim + n_act, cfg.hidden, 1)
    t1.load_state_dict(c1.state_dict())
    t2.load_state_dict(c2.state_dict())
    return Policy(
        actor, c1, c2, t1, t2, torch.tensor(math.log(cfg.init_alpha), requires_grad=True), low, high,
        np.zeros(obs_dim) if obs_mean is None else np.asarray(obs_mean, float),
        np.ones(obs_dim) if obs_std is None else np.asarray(obs_std, float),
        cfg, cfg.buffer,
    )


def policy_act(policy: Policy, obs, deterministic: bool = True, rng: np.random.Generator | None = None) -> np.ndarray:
    """Action for one observation vector, always inside the policy's box.

    Deterministic calls squash the mean; otherwise the pre-action is drawn
    from the Gaussian with noise from ``rng``.
    """
    mean, log_std = policy.dist(np.asarray(obs, dtype=float))
    if deterministic:
        u = mean[0]
    else:
        rng = rng if rng is not None else np.random.default_rng()
        u = mean[0] + np.exp(log_std[0]) * rng.standard_normal(policy.act_dim)
    return policy.squash(u)


# ------------------------------------------------------------------------ training


def _log_prob(mean, log_std, u):
    """Log density of ``tanh(u)`` under the squashed Gaussian (up to the affine map)."""
    normal = torch.distributions.Normal(mean, log_std.exp())
    corr = 2.0 * (math.log(2.0) - u - tnn.functional.softplus(-2.0 * u))
    return (normal.log_prob(u) - corr).sum(-1)


@dataclass
class SacResult:
    policy: Policy
    curve: list[tuple[int, float]]  # (env steps, deterministic evaluation return)
    losses: list[dict[str, float]]


def sac_train(env: Env, cfg: SacConfig = SacConfig(), seed: int = 0, policy: Policy | None = None) -> SacResult:
    """Standard SAC loop; raises :class:`SacDiverged` on non-finite losses."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    pol = policy or new_policy(env.obs_dim, env.act_low, env.act_high, cfg, seed)
    if hasattr(env, "obs_mean"):
        if policy is not None:
            # a warm-started actor expects the statistics it was trained with
            env.obs_mean, env.obs_std = policy.obs_mean.copy(), policy.obs_std.copy()
        else:
            pol.obs_mean, pol.obs_std = np.asarray(env.obs_mean), np.asarray(env.obs_std)
    if hasattr(env, "start") and hasattr(env, "horizon"):
        pol.time_origin, pol.time_span = int(env.start), int(env.horizon)
    n_act = pol.act_dim
    target_entropy = -float(n_act)
    opt_actor = torch.optim.Adam(pol.actor.parameters(), lr=cfg.lr)
    opt_critic = torch.optim.Adam(list(pol.critic1.parameters()) + list(pol.critic2.parameters()), lr=cfg.lr)
    opt_alpha = torch.optim.Adam([pol.log_alpha], lr=cfg.lr)

    cap = cfg.buffer
    buf_o = np.zeros((cap, env.obs_dim), np.float32)
    buf_a = np.zeros((cap, n_act), np.float32)  # tanh-space actions in [-1, 1]
    buf_r = np.zeros(cap, np.float32)
    buf_o2 = np.zeros((cap, env.obs_dim), np.float32)
    buf_d = np.zeros(cap, np.float32)
    size = ptr = 0

    def act_for_eval(o):
        return policy_act(pol, o, deterministic=True)

    curve: list[tuple[int, float]] = []
    losses: list[dict[str, float]] = []
    obs = env.reset()
    for step in range(1, cfg.total_steps + 1):
        if step <= cfg.start_steps:
            y = rng.uniform(-1.0, 1.0, n_act)
        else:
            mean, log_std = pol.dist(obs)
            y = np.tanh(mean[0] + np.exp(log_std[0]) * rng.standard_normal(n_act))
        a = np.clip(pol.low + (y + 1.0) * 0.5 * (pol.high - pol.low), pol.low, pol.high)
        obs2, r, done = env.step(a)
        buf_o[ptr], buf_a[ptr], buf_r[ptr], buf_o2[ptr], buf_d[ptr] = obs, y, r * cfg.reward_scale, obs2, float(done)
        ptr, size = (ptr + 1) % cap, min(size + 1, cap)
        obs = env.reset() if done else obs2

        if step > cfg.start_steps and step % cfg.update_every == 0 and size >= cfg.batch:
            for _ in range(cfg.update_every):
                idx = rng.integers(0, size, cfg.batch)
                o, ab = torch.from_numpy(buf_o[idx]), torch.from_numpy(buf_a[idx])
                rr, o2, d = torch.from_numpy(buf_r[idx]), torch.from_numpy(buf_o2[idx]), torch.from_numpy(buf_d[idx])
                alpha = pol.log_alpha.exp().detach()
                with torch.no_grad():
                    out2 = pol.actor(o2)
                    m2, ls2 = out2[:, :n_act], out2[:, n_act:].clamp(LOG_STD_MIN, LOG_STD_MAX)
                    u2 = m2 + ls2.exp() * torch.randn_like(m2)
                    lp2 = _log_prob(m2, ls2, u2)
                    a2 = torch.tanh(u2)
                    q_t = torch.min(pol.target1(torch.cat([o2, a2], 1)), pol.target2(torch.cat([o2, a2], 1)))[:, 0]
                    target = rr + cfg.gamma * (1.0 - d) * (q_t - alpha * lp2)
                q1 = pol.critic1(torch.cat([o, ab], 1))[:, 0]
                q2 = pol.critic2(torch.cat([o, ab], 1))[:, 0]
                loss_q = ((q1 - target) ** 2).mean() + ((q2 - target) ** 2).mean()
                opt_critic.zero_grad()
                loss_q.backward()
                opt_critic.step()

                out = pol.actor(o)
                m, ls = out[:, :n_act], out[:, n_act:].clamp(LOG_STD_MIN, LOG_STD_MAX)
                u = m + ls.exp() * torch.randn_like(m)
                lp = _log_prob(m, ls, u)
                ya = torch.tanh(u)
                q_pi = torch.min(pol.critic1(torch.cat([o, ya], 1)), pol.critic2(torch.cat([o, ya], 1)))[:, 0]
                loss_pi = (alpha * lp - q_pi).mean()
                opt_actor.zero_grad()
                loss_pi.backward()
                opt_actor.step()

                loss_alpha = -(pol.log_alpha * (lp.detach() + target_entropy)).mean()
                opt_alpha.zero_grad()
                loss_alpha.backward()
                opt_alpha.step()

                vals = {"critic": float(loss_q.detach()), "actor": float(loss_pi.detach()), "alpha": float(pol.log_alpha.detach().exp()),
                        "target_max": float(target.abs().max())}
                if not all(math.isfinite(v) for v in vals.values()):
                    raise SacDiverged(f"non-finite SAC quantities at step {step}: {vals}")
                with torch.no_grad():
                    for net, tgt in ((pol.critic1, pol.target1), (pol.critic2, pol.target2)):
                        for p, pt in zip(net.parameters(), tgt.parameters()):
                            pt.mul_(cfg.polyak).add_((1.0 - cfg.polyak) * p)
            if step % cfg.eval_every == 0 or step == cfg.total_steps:
                losses.append({"step": step, **vals})
        if step % cfg.eval_every == 0 or step == cfg.total_steps:
            curve.append((step, run_episode(env, act_for_eval)))
            obs = env.reset()
    return SacResult(pol, curve, losses)


def observe(policy: Policy, state: State) -> np.ndarray:
    """Standardized observation of ``state`` as the policy saw it during training."""
    x = np.concatenate([state.to_vector(), _time_features(state.t, policy.time_origin, policy.time_span)])
    return (x - policy.obs_mean) / policy.obs_std


# --------------------------------------------------------------------------- I/O


def _sd_to_json(module: tnn.Module) -> dict[str, list]:
    return {k: v.detach().cpu().numpy().tolist() for k, v in module.state_dict().items()}


def _sd_from_json(module: tnn.Module, doc: Mapping[str, list]) -> None:
    module.load_state_dict({k: torch.tensor(v, dtype=torch.float32) for k, v in doc.items()})


def policy_to_json(policy: Policy) -> dict[str, Any]:
    return {
        "format": POLICY_FORMAT,
        "version": 1,
        "config": policy.config.to_dict(),
        "low": policy.low.tolist(),
        "high": policy.high.tolist(),
        "obs_mean": policy.obs_mean.tolist(),
        "obs_std": policy.obs_std.tolist(),
        "log_alpha": float(policy.log_alpha.detach()),
        "time_origin": policy.time_origin,
        "time_span": policy.time_span,
        **{name: _sd_to_json(getattr(policy, name)) for name in ("actor", "critic1", "critic2", "target1", "target2")},
    }


def policy_from_json(doc: Mapping[str, Any]) -> Policy:
    if doc.get("format") != POLICY_FORMAT or doc.get("version") != 1:
        raise DomainError("not a version-1 policy document")
    cfg = SacConfig.from_dict(doc["config"])
    pol = new_policy(len(doc["obs_mean"]), doc["low"], doc["high"], cfg, 0, doc["obs_mean"], doc["obs_std"])
    for name in ("actor", "critic1", "critic2", "target1", "target2"):
        _sd_from_json(getattr(pol, name), doc[name])
    pol.log_alpha = torch.tensor(doc["log_alpha"], requires_grad=True)
    pol.time_origin, pol.time_span = int(doc["time_origin"]), int(doc["time_span"])
    return pol


def save_policy(policy: Policy, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(policy_to_json(policy), sort_keys=True))
    return path


def load_policy(path: str | Path) -> Policy:
    try:
        return policy_from_json(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError) as exc:
        raise DomainError(f"{path}: malformed policy ({exc})") from exc
