import csv
import math

import numpy as np
import pytest

from idstore import midprice, presets
from idstore.errors import GridMismatch, InfeasibleSpec, StockViolation, TooFewPaths
from idstore.liqmodel import LiquiditySessionParams
from idstore.regression import RegressionConfig
from idstore.valuation import (BatterySpec, ImpactSpec, OpenLoopPolicy, deterministic_value, evaluate_policy,
                               load_policy, optimize_deterministic, optimize_stochastic, optimize_two_index,
                               policy_cashflows, save_policy, write_report)
from oracles import bang_bang_value, constant_paths, grid_value, tree_paths, tree_value

ONE_H = BatterySpec(capacity=1.0, rate=1.0)
TWO_H = BatterySpec(capacity=2.0, rate=1.0)
FLAT = LiquiditySessionParams.constant(0.0, 0.5, 0.0, 0.5)
SMALL = RegressionConfig(n_paths=4000, meshes=2, min_per_cell=20)


def test_two_period_microcase():
    res = optimize_deterministic([10.0, 20.0], ONE_H, ImpactSpec())
    assert res.value == pytest.approx(0.92 * 20 - 10 / 0.92, abs=1e-12)
    assert res.value == pytest.approx(7.5304, abs=1e-4)
    np.testing.assert_allclose(res.controls, [1.0, -1.0])


def test_two_period_microcase_with_spread():
    res = optimize_deterministic([10.0, 20.0], ONE_H, ImpactSpec(liq=FLAT))
    assert res.value == pytest.approx(0.92 * 19.5 - 10.5 / 0.92, abs=1e-12)
    assert res.value == pytest.approx(6.5270, abs=1e-4)


def test_constant_prices_are_worthless():
    res = optimize_deterministic([42.0] * 24, TWO_H, ImpactSpec())
    assert res.value == 0.0
    assert not res.controls.any()


def test_returned_controls_achieve_the_value():
    spot = np.random.default_rng(0).uniform(20, 80, 24)
    liq = presets.liquidity("de", 2021)
    for impact in (ImpactSpec(), ImpactSpec(n_batteries=20, liq=liq)):
        res = optimize_deterministic(spot, TWO_H, impact)
        stock = np.cumsum(res.controls)
        assert stock.min() >= -1e-12 and stock.max() <= 2 + 1e-12
        assert deterministic_value(res.controls, spot, TWO_H, impact) == pytest.approx(res.value, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_bang_bang_enumeration(seed):
    rng = np.random.default_rng(seed)
    M = int(rng.integers(3, 9))
    spot = rng.uniform(10, 90, M)
    for battery in (ONE_H, TWO_H, BatterySpec(capacity=3.0, rate=1.0)):
        assert optimize_deterministic(spot, battery, ImpactSpec()).value == pytest.approx(
            bang_bang_value(spot, battery, ImpactSpec()), abs=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_full_grid_enumeration_with_depth(seed):
    rng = np.random.default_rng(seed)
    spot = rng.uniform(30, 70, 4)
    impact = ImpactSpec(n_batteries=10, liq=presets.liquidity("fr", 2021))
    assert optimize_deterministic(spot, TWO_H, impact).value == pytest.approx(
        grid_value(spot, TWO_H, impact), abs=1e-9)


def test_depth_interior_optimum():
    # steep impact makes partial trades optimal, so the grid matters
    liq = LiquiditySessionParams.constant(3.0, 0.1, 3.0, 0.1)
    impact = ImpactSpec(liq=liq)
    res = optimize_deterministic([10.0, 14.0], ONE_H, impact)
    assert 0 < res.controls[0] < 1
    assert res.value == pytest.approx(grid_value([10.0, 14.0], ONE_H, impact), abs=1e-12)


def test_rate_must_fit_the_grid():
    with pytest.raises(InfeasibleSpec):
        BatterySpec(capacity=2.0, rate=1.05)
    with pytest.raises(InfeasibleSpec):
        BatterySpec(capacity=0.5, rate=1.0)
    with pytest.raises(InfeasibleSpec):
        BatterySpec(efficiency=1.2)
    with pytest.raises(InfeasibleSpec):
        ImpactSpec(n_batteries=0)


def test_scenario_tree_matches_enumeration():
    battery = BatterySpec(capacity=2.0, rate=1.0, step=0.5)
    cfg = RegressionConfig(discrete=True)
    for impact in (ImpactSpec(), ImpactSpec(n_batteries=5, liq=presets.liquidity("de", 2021))):
        pol = optimize_stochastic(tree_paths(), battery, impact, cfg)
        assert pol.value == pytest.approx(tree_value(battery, impact), abs=1e-6)
        # duplicated scenarios do not change anything
        assert optimize_stochastic(tree_paths(7), battery, impact, cfg).value == pytest.approx(pol.value, abs=1e-9)


def test_degenerate_paths_collapse_to_deterministic():
    spot = np.random.default_rng(3).uniform(20, 80, 24)
    cfg = RegressionConfig(meshes=4, min_per_cell=1)
    for impact in (ImpactSpec(), ImpactSpec(n_batteries=10, liq=presets.liquidity("de", 2022))):
        det = optimize_deterministic(spot, TWO_H, impact)
        sto = optimize_stochastic(constant_paths(spot, 300), TWO_H, impact, cfg)
        assert sto.value == pytest.approx(det.value, abs=1e-6)


def test_open_loop_policy_reproduces_deterministic_value():
    spot = np.random.default_rng(4).uniform(20, 80, 24)
    impact = ImpactSpec(n_batteries=3, liq=presets.liquidity("fr", 2022))
    det = optimize_deterministic(spot, TWO_H, impact)
    pol = OpenLoopPolicy(det.controls, impact.delta, det.value)
    assert evaluate_policy(pol, constant_paths(spot, 5), TWO_H, impact) == pytest.approx(det.value, abs=1e-9)


def test_zero_policy_is_worth_nothing():
    paths = midprice.simulate(presets.midprice("de", 2021), 50.0, np.arange(-9.0, 24.0), 50, seed=1)
    pol = OpenLoopPolicy(np.zeros(24))
    assert np.all(policy_cashflows(pol, paths, TWO_H, ImpactSpec(liq=presets.liquidity("de", 2021))) == 0.0)


def test_stock_violation():
    pol = OpenLoopPolicy(np.array([-1.0] + [0.0] * 23))
    with pytest.raises(StockViolation):
        evaluate_policy(pol, constant_paths(np.full(24, 50.0)), TWO_H, ImpactSpec())


def test_grid_must_contain_decision_times():
    paths = constant_paths(np.full(24, 50.0), 10, grid=np.arange(-9.0, 24.0, 2.0) + 0.5)
    with pytest.raises(GridMismatch):
        optimize_stochastic(paths, TWO_H, ImpactSpec(), RegressionConfig(min_per_cell=1))


def test_too_few_paths():
    paths = constant_paths(np.full(24, 50.0), 100)
    with pytest.raises(TooFewPaths):
        optimize_stochastic(paths, TWO_H, ImpactSpec(), RegressionConfig())


@pytest.fixture(scope="module")
def sim_paths():
    params = presets.midprice("de", 2021)
    grid = np.arange(-9.0, 24.0)
    return (midprice.simulate(params, 50.0, grid, 4000, seed=11),
            midprice.simulate(params, 50.0, grid, 4000, seed=12))


def test_in_sample_forward_run_matches_backward_value(sim_paths):
    train, _ = sim_paths
    impact = ImpactSpec(liq=presets.liquidity("de", 2021))
    pol = optimize_stochastic(train, TWO_H, impact, SMALL)
    assert evaluate_policy(pol, train, TWO_H, impact) == pytest.approx(pol.value, abs=1e-9)


def test_information_has_value(sim_paths):
    train, fresh = sim_paths
    impact = ImpactSpec()
    pol = optimize_stochastic(train, TWO_H, impact, SMALL)
    det = optimize_deterministic(np.full(24, 50.0), TWO_H, impact)
    oos = evaluate_policy(pol, fresh, TWO_H, impact)
    assert det.value == 0.0
    assert oos > det.value
    # in-sample optimism: the regression policy does not look better on fresh paths
    assert oos <= pol.value + 3 * pol.meta["stderr"]


def test_value_decreases_with_park_size(sim_paths):
    train, _ = sim_paths
    liq = presets.liquidity("de", 2021)
    values = [optimize_stochastic(train, TWO_H, ImpactSpec(n_batteries=n, liq=liq), SMALL).value for n in (1, 10, 20)]
    assert values[0] >= values[1] >= values[2]
    assert values[0] > values[2]


def test_policy_json_round_trip(tmp_path, sim_paths):
    train, fresh = sim_paths
    impact = ImpactSpec(liq=presets.liquidity("de", 2021))
    pol = optimize_stochastic(train, TWO_H, impact, SMALL)
    save_policy(pol, tmp_path / "policy.json")
    back = load_policy(tmp_path / "policy.json")
    assert back.value == pol.value
    np.testing.assert_array_equal(policy_cashflows(back, fresh, TWO_H, impact),
                                  policy_cashflows(pol, fresh, TWO_H, impact))
    det = OpenLoopPolicy(np.array([1.0, -1.0]), 2.0, 3.0)
    save_policy(det, tmp_path / "det.json")
    np.testing.assert_array_equal(load_policy(tmp_path / "det.json").controls, det.controls)


def test_two_index_without_early_trades_is_one_index(sim_paths):
    train, _ = sim_paths
    for impact in (ImpactSpec(), ImpactSpec(n_batteries=10, liq=presets.liquidity("de", 2021))):
        one = optimize_stochastic(train, TWO_H, impact, SMALL)
        two = optimize_two_index(train, TWO_H, impact, SMALL, max_early=0.0)
        assert two.value == pytest.approx(one.value, abs=1e-9)


def test_two_index_on_frozen_prices_has_no_extra_value():
    # prices never move, so the early leg earns nothing and ties go to no early trade
    spot = np.random.default_rng(6).uniform(20, 80, 24)
    battery = BatterySpec(capacity=2.0, rate=1.0, step=0.5)
    cfg = RegressionConfig(min_per_cell=1)
    impact = ImpactSpec()
    two = optimize_two_index(constant_paths(spot, 300), battery, impact, cfg)
    assert two.value == pytest.approx(optimize_deterministic(spot, battery, impact).value, abs=1e-6)


def test_two_index_splits_large_orders():
    # a steep linear impact rewards spreading a trade over two instants
    spot = np.array([10.0, 30.0, 30.0, 30.0])
    battery = BatterySpec(capacity=1.0, rate=1.0, step=0.5)
    liq = LiquiditySessionParams.constant(2.0, 0.01, 2.0, 0.01)
    impact = ImpactSpec(liq=liq)
    cfg = RegressionConfig(meshes=2, min_per_cell=1)
    paths = constant_paths(spot, 100)
    one = optimize_stochastic(paths, battery, impact, cfg).value
    two = optimize_two_index(paths, battery, impact, cfg).value
    assert two > one + 1e-6


def test_report_csv(tmp_path):
    write_report(tmp_path / "values.csv", [("det_no_depth", 1, 7.5304347), ("sto_depth", 20, 1.5)])
    rows = list(csv.reader(open(tmp_path / "values.csv")))
    assert rows[0] == ["model", "n_batteries", "value"]
    assert rows[1] == ["det_no_depth", "1", "7.530435"]
    assert math.isclose(float(rows[2][2]), 1.5)
