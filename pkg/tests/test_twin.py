import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agc import nn
from agc.domain import Action, Climate, DomainError, EconomicLedger, Growth, Weather, YieldState
from agc.metrics import cumulative_abs_error, r2_score
from agc.trajectory import Trajectory
from agc.twin import (
    R2_VARIABLES,
    TwinSimulator,
    evaluate_r2,
    fine_tune,
    load_simulator,
    one_step_predictions,
    predict_climate,
    predict_growth,
    predict_yield_day,
    save_simulator,
    sim_rollout,
    train_simulator,
    transition_tuples,
)
from agc.world import WorldParams, generate_dataset, generate_weather

from conftest import SMALL_ARCH


def _random_sim(seed, scale=1.0):
    nets = [nn.net_init(s, seed=seed + i) for i, s in enumerate(([14, 8, 4], [7, 8, 3], [4, 8, 1]))]
    for net in nets:
        for W in net.weights:
            W *= scale
    return TwinSimulator(*nets)


@pytest.fixture(scope="module")
def heldout():
    return generate_dataset(6, 20, seed=77)


def test_arity_enforced():
    with pytest.raises(DomainError):
        TwinSimulator(nn.net_init([13, 4], 0), nn.net_init([7, 3], 0), nn.net_init([4, 1], 0))
    with pytest.raises(DomainError):
        TwinSimulator(nn.net_init([14, 4], 0), nn.net_init([7, 3], 0), nn.net_init([4, 2], 0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 500), st.floats(0.1, 200.0))
def test_climate_prediction_clamped_for_any_parameters(seed, scale):
    sim = _random_sim(seed, scale)
    sim.climate_net.out_std = np.full(4, 500.0)
    c = predict_climate(sim, Weather(5, 80, 300, 2, -5, 410), Action(25, 900, 1, 2), Climate(20, 90, 800, 300))
    assert 0 <= c.air_rh <= 100 and c.air_co2 >= 0 and c.par >= 0 and -10 <= c.air_t <= 60


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 500), st.floats(0.1, 200.0))
def test_growth_prediction_non_negative_for_any_parameters(seed, scale):
    sim = _random_sim(seed, scale)
    sim.growth_net.out_std = np.full(3, 50.0)
    g = predict_growth(sim, Climate(20, 70, 600, 200), Growth(0.1, 0.0, 0.0))
    assert min(g.lai, g.plant_load, g.net_growth) >= 0


def test_single_step_determinism(small_sim):
    args = (Weather(10, 70, 200, 1, 0, 400), Action(20, 800, 0.5, 1), Climate(18, 70, 500, 100))
    assert predict_climate(small_sim, *args) == predict_climate(small_sim, *args)
    g = predict_growth(small_sim, args[2], Growth(1.0, 0.5, 0.1))
    assert g == predict_growth(small_sim, args[2], Growth(1.0, 0.5, 0.1))


def _set_yield_constant(sim, value):
    sim = sim.copy()
    for W in sim.yield_net.weights:
        W[:] = 0.0
    for b in sim.yield_net.biases:
        b[:] = 0.0
    sim.yield_net.out_mean = np.array([value])
    sim.yield_net.out_std = np.array([1.0])
    return sim


def test_negative_yield_output_clamped(small_sim):
    sim = _set_yield_constant(small_sim, -0.3)
    assert predict_yield_day(sim, Growth(2, 1, 0.1), YieldState(1.25)).fw == 1.25


def test_yield_increment_added(small_sim):
    sim = _set_yield_constant(small_sim, 0.1)
    assert predict_yield_day(sim, Growth(2, 1, 0.1), YieldState(0.0)).fw == pytest.approx(0.1, abs=1e-15)


def test_trained_climate_beats_untrained(small_sim, heldout):
    x, y = transition_tuples(heldout)["climate"]
    fresh = nn.net_init([14, 32, 32, 4], seed=99)
    fresh.in_mean, fresh.in_std = small_sim.climate_net.in_mean, small_sim.climate_net.in_std
    fresh.out_mean, fresh.out_std = small_sim.climate_net.out_mean, small_sim.climate_net.out_std
    assert nn.mse(small_sim.climate_net, x, y) < nn.mse(fresh, x, y)


def test_trained_growth_beats_persistence(small_sim, heldout):
    preds = one_step_predictions(small_sim, heldout)
    x, _ = transition_tuples(heldout)["growth"]
    g_prev = x[:, 4:7]
    for i, name in enumerate(("LAI", "PlantLoad", "NetGrowth")):
        truth, pred = preds[name]
        assert np.mean((pred - truth) ** 2) < np.mean((g_prev[:, i] - truth) ** 2)


def test_rollout_shapes_and_monotone_yield(small_sim, weather20):
    acts = np.random.default_rng(2).uniform([13, 400, 0, 0], [32, 1200, 1, 2], size=(480, 4))
    tr = sim_rollout(small_sim, acts, weather20)
    assert tr.climate.shape == (480, 4) and tr.growth.shape == (480, 3) and tr.action.shape == (480, 4)
    assert tr.daily_yield.shape == (20,)
    assert np.all(np.diff(np.concatenate([[0.0], tr.daily_yield])) >= 0)
    assert abs(tr.reward.sum() - tr.ledger.net_profit) <= 1e-9


def test_rollout_zero_horizon(small_sim, weather20):
    tr = sim_rollout(small_sim, np.empty((0, 4)), weather20, horizon=0)
    assert len(tr) == 0


def test_rollout_deterministic(small_sim, weather20):
    acts = np.tile([20.0, 800.0, 0.5, 1.0], (240, 1))
    assert sim_rollout(small_sim, acts, weather20, horizon=240).dumps() == sim_rollout(small_sim, acts, weather20, horizon=240).dumps()


def test_policy_rollout_matches_schedule_rollout(small_sim, weather20):
    acts = np.random.default_rng(3).uniform([13, 400, 0, 0], [32, 1200, 1, 2], size=(72, 4))
    it = iter(range(72))
    closed = sim_rollout(small_sim, lambda s: acts[next(it)], weather20, horizon=72)
    open_ = sim_rollout(small_sim, acts, weather20, horizon=72)
    np.testing.assert_allclose(closed.reward, open_.reward, rtol=0, atol=1e-12)


def test_version_after_training(small_sim):
    assert small_sim.version == 1


def test_training_rejects_bad_datasets(small_dataset):
    with pytest.raises(DomainError):
        train_simulator([], SMALL_ARCH)
    with pytest.raises(DomainError):
        train_simulator([small_dataset[0].prefix(1)], SMALL_ARCH)


def test_constant_trajectories_memorized():
    T = 72
    w = np.tile([10.0, 70, 0, 1, 0, 400], (T, 1))
    c = np.tile([18.0, 70, 400, 0], (T, 1))
    g = np.tile([0.5, 0.0, 0.0], (T, 1))
    a = np.tile([13.0, 400, 0, 0], (T, 1))
    ep = Trajectory(w, c, g, a, np.zeros(T), np.zeros(3), c[0].copy(), g[0].copy(), ledger=EconomicLedger())
    sim = train_simulator([ep] * 10, SMALL_ARCH, seed=0)
    for name, rep in sim.history[-1]["losses"].items():
        assert rep["val_loss"] < 1e-8, name


def test_fine_tune_zero_epochs_keeps_predictions(small_sim, heldout):
    ft = fine_tune(small_sim, list(heldout)[:2], epochs_ft=0)
    assert ft.version == small_sim.version + 1
    x, _ = transition_tuples(heldout)["climate"]
    assert nn.forward(ft.climate_net, x).tobytes() == nn.forward(small_sim.climate_net, x).tobytes()


def test_fine_tune_never_worsens_new_data_fit(small_sim, small_dataset):
    shifted = generate_dataset(3, 20, seed=5, params=WorldParams().shifted(p_max=0.7, k_heat=0.6))
    ft = fine_tune(small_sim, shifted, replay=small_dataset, seed=1)
    data = transition_tuples(shifted)
    for name in ("climate", "growth", "yield"):
        x, y = data[name]
        assert nn.mse(getattr(ft, f"{name}_net"), x, y) <= nn.mse(getattr(small_sim, f"{name}_net"), x, y)
    assert small_sim.version == 1 and ft.version == 2


def test_fine_tune_shrinks_profit_error_on_shifted_world(small_sim, small_dataset):
    shifted_world = WorldParams().shifted(p_max=0.7, T_opt=0.85, k_heat=0.6)
    new = generate_dataset(6, 20, seed=31, params=shifted_world)
    ft = fine_tune(small_sim, list(new)[:5], replay=small_dataset, seed=0)
    probe = new[5]

    def err(sim):
        tr = sim_rollout(sim, probe.action, probe.weather)
        return cumulative_abs_error(tr.net_profit_curve, probe.net_profit_curve)[-1]

    assert err(ft) < err(small_sim)


def test_fine_tune_rejects_empty(small_sim):
    with pytest.raises(DomainError):
        fine_tune(small_sim, [])


def test_r2_table_covers_eight_variables(small_sim, heldout):
    rep = evaluate_r2(small_sim, heldout)
    assert set(rep.clamped) == set(R2_VARIABLES)
    assert all(0.0 <= v <= 1.0 for v in rep.clamped.values())


def test_r2_matches_direct_formula(small_sim, heldout):
    rep = evaluate_r2(small_sim, heldout)
    for name, (truth, pred) in one_step_predictions(small_sim, heldout).items():
        direct = 1.0 - np.sum((truth - pred) ** 2) / np.sum((truth - truth.mean()) ** 2)
        assert abs(rep.raw[name] - direct) <= 1e-12


def test_zero_variance_variable_flagged():
    T = 48
    w = np.tile([10.0, 70, 0, 1, 0, 400], (T, 1))
    c = np.tile([18.0, 70, 400, 0], (T, 1))
    g = np.tile([0.5, 0.0, 0.0], (T, 1))
    a = np.tile([13.0, 400, 0, 0], (T, 1))
    ep = Trajectory(w, c, g, a, np.zeros(T), np.zeros(2), c[0].copy(), g[0].copy(), ledger=EconomicLedger())
    rep = evaluate_r2(_random_sim(0), [ep])
    assert set(rep.flagged) == set(R2_VARIABLES)
    assert np.isnan(rep.mean)


def test_save_load_bitwise(small_sim, tmp_path, heldout):
    back = load_simulator(save_simulator(small_sim, tmp_path / "sim"))
    assert back.version == small_sim.version
    x, _ = transition_tuples(heldout)["climate"]
    for name in ("climate", "growth"):
        xi = transition_tuples(heldout)[name][0]
        assert nn.forward(getattr(back, f"{name}_net"), xi).tobytes() == nn.forward(getattr(small_sim, f"{name}_net"), xi).tobytes()
    w = generate_weather(3, 1)
    acts = np.tile([20.0, 800.0, 0.5, 1.0], (72, 1))
    assert sim_rollout(back, acts, w).dumps() == sim_rollout(small_sim, acts, w).dumps()


def test_r2_score_examples():
    assert r2_score([1, 2, 3], [1, 2, 4]) == pytest.approx(0.5, abs=1e-15)
    y = np.array([1.0, 4.0, 2.0, 8.0])
    assert r2_score(y, y) == 1.0
    assert r2_score(y, np.full(4, y.mean())) == 0.0
