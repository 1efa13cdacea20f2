import numpy as np
import pytest
import torch

from agc.domain import DEFAULT_BOUNDS, DomainError
from agc.strategy.sac import (
    BanditEnv,
    SacConfig,
    SacDiverged,
    TwinEnv,
    load_policy,
    new_policy,
    observe,
    policy_act,
    run_episode,
    sac_train,
    save_policy,
)
from agc.twin import sim_rollout

LOW, HIGH = DEFAULT_BOUNDS.low_array, DEFAULT_BOUNDS.high_array


@pytest.fixture
def policy():
    return new_policy(5, LOW, HIGH, SacConfig(hidden=(16, 16)), seed=3)


def _saturate(pol, mean_bias, log_std_bias):
    last = pol.actor[-1]
    with torch.no_grad():
        last.weight.zero_()
        last.bias[: pol.act_dim] = mean_bias
        last.bias[pol.act_dim :] = log_std_bias


def test_config_validation():
    with pytest.raises(DomainError):
        SacConfig(polyak=1.0)
    with pytest.raises(DomainError):
        SacConfig(batch=0)


def test_sampled_actions_inside_box(policy):
    obs = np.random.default_rng(0).normal(size=5)
    mean, log_std = policy.dist(obs)
    u = mean[0] + np.exp(log_std[0]) * np.random.default_rng(1).standard_normal((100_000, 4)) * 50
    a = policy.squash(u)
    assert np.all(a >= LOW) and np.all(a <= HIGH)
    rng = np.random.default_rng(2)
    for _ in range(500):
        assert DEFAULT_BOUNDS.contains(policy_act(policy, obs, deterministic=False, rng=rng))


def test_deterministic_action_repeatable(policy):
    obs = np.ones(5)
    assert policy_act(policy, obs).tobytes() == policy_act(policy, obs).tobytes()


def test_saturated_mean_hits_upper_bound(policy):
    _saturate(policy, 1e6, 0.0)
    assert np.array_equal(policy_act(policy, np.zeros(5)), HIGH)
    _saturate(policy, -1e6, 0.0)
    assert np.array_equal(policy_act(policy, np.zeros(5)), LOW)


def test_log_std_clamped(policy):
    _saturate(policy, 0.0, 100.0)
    assert np.all(policy.dist(np.zeros(5))[1] == 2.0)
    _saturate(policy, 0.0, -100.0)
    assert np.all(policy.dist(np.zeros(5))[1] == -5.0)


def test_stochastic_draws_reproducible(policy):
    obs = np.zeros(5)
    a = [policy_act(policy, obs, False, np.random.default_rng(9)) for _ in range(2)]
    assert a[0].tobytes() == a[1].tobytes()


def test_bandit_converges():
    env = BanditEnv(6.3, 0.0, 10.0)
    res = sac_train(env, SacConfig(total_steps=2000, start_steps=200, batch=64, reward_scale=1.0, eval_every=500), seed=0)
    a = policy_act(res.policy, np.zeros(1))
    assert abs(a[0] - 6.3) / 10.0 <= 0.05
    assert res.policy.alpha >= 0


def test_non_finite_reward_aborts():
    class Broken(BanditEnv):
        def step(self, action):
            return np.zeros(1), float("nan"), True

    with pytest.raises(SacDiverged):
        sac_train(Broken(0.0, -1.0, 1.0), SacConfig(total_steps=200, start_steps=50, batch=16), seed=0)


def test_twin_env_return_equals_rollout_profit(small_sim, weather20):
    env = TwinEnv(small_sim, weather20, horizon=48)
    acts = np.random.default_rng(4).uniform(LOW, HIGH, size=(48, 4))
    it = iter(acts)
    ret = run_episode(env, lambda o: next(it))
    tr = sim_rollout(small_sim, acts, weather20, horizon=48)
    assert ret == pytest.approx(tr.ledger.net_profit, abs=1e-9)


def test_twin_env_observation_standardized(small_sim, weather20):
    env = TwinEnv(small_sim, weather20, horizon=72, stats_seed=1)
    assert env.reset().shape == (17,)
    assert np.all(env.obs_std > 0)


def test_policy_round_trip_bitwise(tmp_path, small_sim, weather20):
    env = TwinEnv(small_sim, weather20, horizon=24)
    res = sac_train(env, SacConfig(hidden=(16, 16), total_steps=120, start_steps=40, batch=32, eval_every=60), seed=1)
    back = load_policy(save_policy(res.policy, tmp_path / "p.json"))
    obs = np.random.default_rng(0).normal(size=(10, 17))
    for o in obs:
        assert policy_act(back, o).tobytes() == policy_act(res.policy, o).tobytes()
    assert back.alpha == res.policy.alpha
    s = env.initial
    assert observe(back, s).tobytes() == observe(res.policy, s).tobytes()


def test_sac_training_deterministic(small_sim, weather20):
    env = TwinEnv(small_sim, weather20, horizon=24)
    cfg = SacConfig(hidden=(16, 16), total_steps=100, start_steps=30, batch=16, eval_every=50)
    a, b = sac_train(env, cfg, seed=2), sac_train(env, cfg, seed=2)
    assert a.curve == b.curve


def test_malformed_policy_file(tmp_path):
    (tmp_path / "p.json").write_text('{"format": "agc-policy", "version": 1}')
    with pytest.raises(DomainError):
        load_policy(tmp_path / "p.json")
