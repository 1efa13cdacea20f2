import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agc.domain import (
    DEFAULT_BOUNDS,
    STATE_DIM,
    Action,
    ActionBounds,
    Climate,
    DomainError,
    EconConfig,
    EconomicLedger,
    Growth,
    State,
    Weather,
    YieldState,
    clamp_action,
    clip_actions,
    cost_components,
    finalize_ledger,
    ledger_curves,
    load_domain_config,
    reward,
    step_cost,
    step_gain,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_clamp_clips_temperature_only():
    a = clamp_action((50, 800, 0.5, 1))
    assert a == Action(32.0, 800.0, 0.5, 1.0)


def test_clamp_valid_action_is_fixed_point():
    a = Action(20.0, 700.0, 0.3, 1.5)
    assert clamp_action(a) == a


def test_clamp_lower_corner():
    assert clamp_action((13, 400, 0, 0)) == Action(13.0, 400.0, 0.0, 0.0)


def test_clamp_accepts_mapping():
    a = clamp_action({"temp_sp": 5, "co2_sp": 2000, "light": 0.2, "irrigation": -1})
    assert a == Action(13.0, 1200.0, 0.2, 0.0)


@pytest.mark.parametrize("bad", [(float("nan"), 400, 0, 0), (20, float("inf"), 0, 0)])
def test_clamp_rejects_non_finite(bad):
    with pytest.raises(DomainError):
        clamp_action(bad)


def test_clamp_rejects_wrong_arity():
    with pytest.raises(DomainError):
        clamp_action((20, 400, 0))


@given(st.tuples(finite, finite, finite, finite))
def test_clamp_idempotent_and_inside_box(raw):
    a = clamp_action(raw)
    assert DEFAULT_BOUNDS.contains(a.to_array())
    assert clamp_action(a) == a


def test_clip_actions_rejects_nan():
    with pytest.raises(DomainError):
        clip_actions(np.array([[np.nan, 400, 0, 0]]))


def test_type_invariants():
    with pytest.raises(DomainError):
        Weather(10, 120, 0, 1, 0, 400)
    with pytest.raises(DomainError):
        Weather(10, 50, -1, 1, 0, 400)
    with pytest.raises(DomainError):
        Weather(10, 50, 0, 1, 0, 0)
    with pytest.raises(DomainError):
        Climate(70, 50, 400, 0)
    with pytest.raises(DomainError):
        Growth(-0.1, 0, 0)
    with pytest.raises(DomainError):
        YieldState(-1.0)
    with pytest.raises(DomainError):
        ActionBounds(low=(0, 0, 0, 0), high=(-1, 1, 1, 1))


def test_state_vector_has_fourteen_entries():
    s = State(Weather(10, 70, 0, 1, 0, 400), Climate(18, 70, 400, 0), Growth(0.5, 0, 0), YieldState(0.0))
    assert STATE_DIM == 14
    assert s.to_vector().shape == (14,)


def test_zero_actuation_costs_only_maintenance():
    cfg = EconConfig()
    a = Action(13.0, 400.0, 0.0, 0.0)
    w = Weather(20.0, 70.0, 0.0, 1.0, 5.0, 410.0)
    assert step_cost(a, w, 1.0, cfg) == pytest.approx(cfg.maintenance_per_day / 24.0, abs=1e-15)


def test_lighting_cost_one_hour_full_lamps():
    cfg = EconConfig(lamp_power=100.0, elec_price=0.08)
    c = cost_components(np.array([13.0, 400.0, 1.0, 0.0]), np.array([20.0, 70, 0, 1, 5, 410]), 1.0, cfg)
    assert float(c["lighting"]) == pytest.approx(0.008, abs=1e-15)


def test_heating_cost_formula():
    cfg = EconConfig(heat_coeff=0.001)
    c = cost_components(np.array([25.0, 400.0, 0.0, 0.0]), np.array([10.0, 70, 0, 1, 5, 410]), 2.0, cfg)
    assert float(c["heating"]) == pytest.approx(0.001 * 15 * 2)


def test_maintenance_default_from_season_scale():
    assert EconConfig().maintenance_per_day == pytest.approx(0.0154, abs=1e-4)


def test_step_cost_rejects_non_positive_dt():
    with pytest.raises(DomainError):
        step_cost(Action(20, 400, 0, 0), Weather(10, 70, 0, 1, 0, 400), 0.0, EconConfig())


@pytest.mark.parametrize("dfw,price,expected", [(0.0, 0.49, 0.0), (2.0, 0.49, 0.98), (1.0, 0.45, 0.45)])
def test_step_gain(dfw, price, expected):
    assert step_gain(dfw, EconConfig(fruit_price=price)) == pytest.approx(expected, abs=1e-15)


def test_step_gain_rejects_negative():
    with pytest.raises(DomainError):
        step_gain(-0.1, EconConfig())


def test_reward_identical_ledgers_is_zero():
    led = EconomicLedger(energy_cost=1.0, gains=3.0)
    assert reward(led, led) == 0.0


def test_reward_gain_minus_cost():
    prev = EconomicLedger(energy_cost=1.0, gains=3.0)
    nxt = prev.add({"energy_cost": 0.10}, gain=0.98)
    assert reward(prev, nxt) == pytest.approx(0.88, abs=1e-12)


def test_finalize_zero_ledger():
    cfg = EconConfig(depreciation_per_episode=1.5)
    led = finalize_ledger(EconomicLedger(), cfg)
    assert led.total_cost == 1.5
    assert led.net_profit == -1.5


def test_depreciation_default_per_m2():
    assert EconConfig().depreciation_per_episode == pytest.approx(2.566, abs=1e-3)


def test_finalize_twice_rejected():
    led = finalize_ledger(EconomicLedger(), EconConfig())
    with pytest.raises(DomainError):
        finalize_ledger(led, EconConfig())


def test_negative_ledger_component_rejected():
    with pytest.raises(DomainError):
        EconomicLedger(water_cost=-1.0)


def test_econ_config_rejects_non_positive():
    with pytest.raises(DomainError):
        EconConfig(fruit_price=0.0)


def test_scaled_ledger_uses_area():
    led = EconomicLedger(energy_cost=1.0, gains=2.0)
    out = led.scaled(667.0)
    assert out["net_profit"] == pytest.approx(667.0)
    assert out["total_cost"] == pytest.approx(667.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 200))
def test_ledger_curves_telescoping_and_identity(seed, T):
    r = np.random.default_rng(seed)
    cfg = EconConfig()
    acts = r.uniform(DEFAULT_BOUNDS.low_array, DEFAULT_BOUNDS.high_array, size=(T, 4))
    weather = np.column_stack([r.uniform(-5, 30, T), r.uniform(20, 100, T), r.uniform(0, 800, T),
                               r.uniform(0, 8, T), r.uniform(-20, 10, T), r.uniform(380, 430, T)])
    dfw = np.where(r.random(T) < 0.1, r.uniform(0, 0.2, T), 0.0)
    comps, rewards = ledger_curves(acts, weather, dfw, cfg)
    net = comps["gains"][-1] - sum(comps[k][-1] for k in ("energy_cost", "co2_cost", "water_cost",
                                                           "maintenance_cost", "depreciation"))
    assert abs(rewards.sum() - net) <= 1e-9
    for k in ("energy_cost", "co2_cost", "water_cost", "maintenance_cost", "depreciation", "gains"):
        assert np.all(np.diff(comps[k]) >= 0)


def test_load_domain_config(tmp_path):
    p = tmp_path / "dom.json"
    p.write_text(json.dumps({"econ": {"fruit_price": 0.45}, "bounds": {"low": [10, 300, 0, 0], "high": [30, 1000, 1, 1]}}))
    econ, bounds = load_domain_config(p)
    assert econ.fruit_price == 0.45
    assert bounds.high == (30.0, 1000.0, 1.0, 1.0)


def test_load_domain_config_unknown_key(tmp_path):
    p = tmp_path / "dom.json"
    p.write_text(json.dumps({"econ": {"fruit_cost": 1}}))
    with pytest.raises(DomainError):
        load_domain_config(p)
