import math
import warnings

import numpy as np
import pytest

from idstore import midprice as mp
from idstore import presets
from idstore.errors import EmptyJumpLaw, EmptySample, InconsistentKappa, NoJumpsObserved, SameMaturity


@pytest.fixture(scope="module")
def de21():
    return presets.midprice("de", 2021)


def test_jump_law_stats():
    assert mp.jump_law_stats([0.5]) == mp.JumpLawStats(0.5, 0.25)
    s = mp.jump_law_stats([0.1, 0.3])
    assert s.m1 == pytest.approx(0.2) and s.m2 == pytest.approx(0.05)
    with pytest.raises(EmptySample):
        mp.jump_law_stats([])


@pytest.mark.parametrize("m1,m2", [(0.09, 0.04), (0.32, 1.28), (0.5, 0.25), (0.83, 6.75)])
def test_power_jump_law_matches_moments(m1, m2):
    y = mp.power_jump_law(m1, m2)
    assert np.all(y > 0)
    assert np.mean(y) == pytest.approx(m1, rel=1e-12)
    assert np.mean(y * y) == pytest.approx(m2, rel=1e-9)


def test_params_validation_and_io(tmp_path, de21):
    with pytest.raises(EmptyJumpLaw):
        mp.MidPriceParams(0.25, 1, 1, [])
    with pytest.raises(ValueError):
        mp.MidPriceParams(0.0, 1, 1, [0.1])
    with pytest.raises(ValueError):
        mp.MidPriceParams(0.2, 1, 1, [0.1], maturities=(0, 2, 1))
    de21.save(tmp_path / "p.json")
    back = mp.MidPriceParams.load(tmp_path / "p.json")
    assert back == de21 and np.array_equal(back.jump_sizes, de21.jump_sizes)


def test_closed_forms(de21):
    assert mp.change_intensity(de21, 9, 8.0) == pytest.approx(329.8)
    assert mp.change_intensity(de21, 9, 8.0) / mp.change_intensity(de21, 9, 7.0) == pytest.approx(math.exp(0.25))
    s2, s_inf = mp.theoretical_vol(de21, 9, 8.0)
    assert s2 == pytest.approx(13.192)
    assert s_inf == pytest.approx(7.264158588577206, abs=1e-9)
    assert mp.theoretical_corr(de21, 3, 4) == pytest.approx(0.2968, abs=1e-4)
    assert mp.theoretical_corr(de21, 3, 5) == pytest.approx(0.2618, abs=1e-3)
    with pytest.raises(SameMaturity):
        mp.theoretical_corr(de21, 2, 2)
    zero = mp.MidPriceParams(0.25, 0.0, 0.0, [0.1])
    assert mp.change_intensity(zero, 3, 1.0) == 0
    assert mp.theoretical_corr(zero, 1, 2) == 0
    assert mp.theoretical_vol(mp.MidPriceParams(0.25, 0.0, 3.0, [0.0]), 3, 1.0) == (0.0, 0.0)
    assert mp.theoretical_corr(mp.MidPriceParams(0.25, 5.0, 0.0, [0.1]), 1, 5) == 0


def test_integrated_variance(de21):
    full = mp.integrated_variance(de21, 9)
    s2, _ = mp.theoretical_vol(de21, 9, 8.0)
    assert full == pytest.approx(s2 / 0.25 * (1 - math.exp(-0.25 * 17)))
    assert mp.integrated_variance(de21, 9, 8.0, 10.0) == 0.0


def test_no_jumps_is_constant():
    p = mp.MidPriceParams(0.3, 0.0, 0.0, [0.5])
    ps = mp.simulate(p, np.arange(24.0), np.arange(-9, 24), 50, seed=1)
    assert np.all(ps.values == np.arange(24.0)[None, None, :])


def test_common_shock_moves_together():
    p = mp.MidPriceParams(0.2, 0.0, 20.0, mp.power_jump_law(0.3, 0.2), maturities=(0.0, 1.0, 2.0))
    ev = mp.simulate_events(p, 30, seed=2)
    assert all(ev.common[q].all() for q in range(3))
    # maturity 3 only sees the last common index, whose jumps hit every live maturity identically
    for q in (0, 1):
        key = set(zip(ev.path[q].tolist(), ev.time[q].tolist(), ev.size[q].tolist()))
        live = ev.time[2] <= ev.maturities[q]
        for row in zip(ev.path[2][live].tolist(), ev.time[2][live].tolist(), ev.size[2][live].tolist()):
            assert row in key


def test_freezing_and_determinism(de21):
    grid = np.arange(-9, 24.0)
    a = mp.simulate(de21, 40.0, grid, 200, seed=7)
    b = mp.simulate(de21, 40.0, grid, 200, seed=7)
    assert np.array_equal(a.values, b.values)
    for m in (1, 5, 12):
        after = a.grid >= a.maturities[m - 1]
        frozen = a.values[:, after, m - 1]
        assert np.all(frozen == frozen[:, :1])
    c = mp.simulate(de21, 40.0, grid, 200, seed=8)
    assert not np.array_equal(a.values, c.values)


def test_subset_matches_full_in_law(de21):
    grid = np.array([-9.0, 0.0, 3.0])
    sub = mp.simulate(de21, 0.0, grid, 4000, seed=11, maturities=[1, 4])
    assert sub.indices == (1, 4)
    d = np.diff(sub.values, axis=1)[:, 0, :]
    rho = np.corrcoef(d.T)[0, 1]
    assert rho == pytest.approx(mp.theoretical_corr(de21, 1, 4), abs=0.05)


def test_diffusion_backend_variance(de21):
    grid = np.array([-9.0, 8.0])
    ps = mp.simulate(de21, 0.0, grid, 20000, seed=3, maturities=[9], backend="diffusion")
    var = ps.values[:, 1, 0].var()
    assert var == pytest.approx(mp.integrated_variance(de21, 9), rel=0.05)


def test_grid_validation(de21):
    with pytest.raises(ValueError):
        mp.simulate(de21, 0.0, [-10.0, 0.0], 10)
    with pytest.raises(ValueError):
        mp.simulate(de21, 0.0, [0.0, 30.0], 10)
    with pytest.raises(ValueError):
        mp.simulate(de21, 0.0, [0.0, 1.0], 10, backend="gbm")


def test_paths_csv_roundtrip(tmp_path, de21):
    ps = mp.simulate(de21, 30.0, [-9.0, 0.0, 1.0], 3, seed=1, maturities=[1, 2])
    ps.to_csv(tmp_path / "paths.csv")
    back = mp.PricePathSet.from_csv(tmp_path / "paths.csv")
    assert np.array_equal(back.values, ps.values) and back.indices == (1, 2)
    assert ps.prices(2, 1.0).shape == (3,)


def test_event_counts_follow_intensity(de21):
    ev = mp.simulate_events(de21, 400, seed=9, maturities=[9], tau_window=(0.0, 2.0))
    tau = ev.maturities[0] - ev.time[0]
    assert tau.min() >= 0 and tau.max() <= 2.0
    expected = 2 * (de21.mu + de21.mu_c) / de21.kappa * (1 - math.exp(-2 * de21.kappa))
    per_path = ev.counts(0)
    assert per_path.mean() == pytest.approx(expected, abs=3 * per_path.std() / 20)


def test_series_and_estimate_basic(de21):
    ev = mp.simulate_events(de21, 20, seed=12)
    sess = [ev.series(i, 50.0) for i in range(20)]
    s = sess[0][8]
    assert s.times[0] == -9.0 and s.maturity == 8.0
    assert np.all(np.diff(s.times) >= 0) and s.times[-1] <= 8.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InconsistentKappa)
        rep = mp.estimate_with_report(sess)
    assert rep.params.kappa == pytest.approx(0.25, rel=0.1)
    assert rep.total_intensity == pytest.approx(2 * 164.9, rel=0.1)
    assert rep.params.maturities == tuple(float(h) for h in range(24))


def test_estimate_constant_series():
    s = mp.MidPriceSeries(3.0, [-9.0, -5.0, 1.0], [10.0, 10.0, 10.0])
    with pytest.raises(NoJumpsObserved):
        mp.estimate([[s]])


def test_inconsistent_kappa_warns():
    rng = np.random.default_rng(0)
    sessions = []
    for _ in range(30):
        common = rng.normal(size=40)
        sess = []
        for T in range(4):
            t = np.linspace(-9, T, 40)
            x = np.cumsum(common + 0.1 * rng.normal(size=40))
            sess.append(mp.MidPriceSeries(float(T), t, x))
        sessions.append(sess)
    with pytest.warns(InconsistentKappa):
        mp.estimate(sessions)


def test_france_vs_germany_magnitudes():
    de = presets.midprice("de", 2021)
    fr = presets.midprice("fr", 2021)
    est = {}
    for name, p in (("de", de), ("fr", fr)):
        ev = mp.simulate_events(p, 15, seed=21)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", InconsistentKappa)
            est[name] = mp.estimate_with_report([ev.series(i, 50.0) for i in range(15)])
    assert est["de"].total_intensity > 2 * est["fr"].total_intensity
    assert est["fr"].m2 > 5 * est["de"].m2
