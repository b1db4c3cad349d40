import datetime as dt

import numpy as np
import pytest

from idstore import liqmodel as lm
from idstore import lob, presets, synth
from idstore import midprice as mp
from idstore.errors import InfeasibleLadder


@pytest.fixture(scope="module")
def spec():
    return synth.SynthSpec(presets.midprice("de", 2021), presets.liquidity("de", 2021), n_levels=12, seed=4)


def test_spec_example_ladder():
    liq = lm.LiquiditySessionParams.constant(0.1, 0.2, 0.1, 0.2)
    snap = synth.make_snapshot(10.0, 1.0, liq[9], granularity=1.0, n_levels=2)
    assert np.allclose(snap.asks, [(10.25, 1.0), (10.475, 2.0)], atol=1e-12)
    assert np.allclose(snap.bids, [(9.75, -1.0), (9.525, -2.0)], atol=1e-12)


def test_infeasible_ladder():
    with pytest.raises(InfeasibleLadder):
        synth.ladder_offsets(0.0, 0.3, 1.0, 3)
    liq = lm.LiquiditySessionParams.constant(0.0, 0.2, 0.1, 0.4)
    with pytest.raises(InfeasibleLadder):
        synth.make_snapshot(10.0, 1.0, liq[9])


def test_zero_intensity_session_is_constant():
    p = mp.MidPriceParams(0.3, 0.0, 0.0, [0.2])
    sp = synth.SynthSpec(p, presets.liquidity("fr", 2021), f0=42.0)
    for s in synth.gen_midprice_session(sp, 0):
        assert s.times.size == 1 and s.prices[0] == 42.0


def test_seed_reproducibility(spec):
    a = synth.gen_midprice_session(spec, 3, maturities=[5, 9])
    b = synth.gen_midprice_session(spec, 3, maturities=[5, 9])
    c = synth.gen_midprice_session(spec, 4, maturities=[5, 9])
    assert all(np.array_equal(x.times, y.times) and np.array_equal(x.prices, y.prices) for x, y in zip(a, b))
    assert not np.array_equal(a[0].times, c[0].times)


def test_session_counts_follow_intensity(spec):
    # hourly change counts of maturity 9 over the last 4 hours, pooled over sessions
    n = 60
    counts = np.zeros((n, 4))
    for d in range(n):
        s = synth.gen_midprice_session(spec, d, maturities=[9])[0]
        tau = s.maturity - s.times[1:]
        counts[d] = np.histogram(tau, bins=[0, 1, 2, 3, 4])[0]
    p = spec.midprice
    k = p.kappa
    expected = 2 * (p.mu + p.mu_c) / k * (np.exp(-k * np.arange(4)) - np.exp(-k * np.arange(1, 5)))
    se = counts.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(counts.mean(axis=0) - expected) <= 3 * se)


def test_noiseless_books_are_exact(spec):
    s = synth.gen_midprice_session(spec, 0, maturities=[9])[0]
    books = synth.gen_orderbook_session(spec, s, 9)
    ml = spec.liquidity[9]
    assert len(books) == s.times.size
    for b, mid in zip(books[::25], s.prices[::25]):
        assert b.mid == pytest.approx(mid, abs=1e-9)
        f = lm.fit_snapshot(b, K=1e6)
        for got, want in ((f.A_plus, ml.slope(1, b.t)), (f.A_minus, ml.slope(-1, b.t)),
                          (f.B_plus, ml.jump(1, b.t)), (f.B_minus, ml.jump(-1, b.t))):
            assert abs(got - float(want)) < 1e-9


def test_noisy_books_stay_valid(spec):
    noisy = synth.SynthSpec(spec.midprice, spec.liquidity, n_levels=12, noise=0.05, seed=1)
    s = synth.gen_midprice_session(noisy, 0, maturities=[3])[0]
    books = synth.gen_orderbook_session(noisy, s, 3, tau_window=(0.0, 2.0))
    assert books and all(b.t <= 2.0 for b in books)
    assert all(b.asks[0][0] > b.bids[0][0] for b in books)


def test_pooled_recovery_noiseless():
    sp = synth.SynthSpec(presets.midprice("fr", 2021), presets.liquidity("fr", 2021), n_levels=10, seed=2)
    sessions = []
    for d in range(2):
        s = synth.gen_midprice_session(sp, d, maturities=[9])[0]
        sessions.append(synth.gen_orderbook_session(sp, s, 9, d))
    ml = lm.fit_pooled(sessions, K=1e6, session_hours=17)
    truth = sp.liquidity[9]
    for side in ("plus", "minus"):
        got, want = getattr(ml, side), getattr(truth, side)
        assert (got.alpha_A, got.beta_A, got.alpha_B, got.beta_B) == pytest.approx(
            (want.alpha_A, want.beta_A, want.alpha_B, want.beta_B), abs=1e-9)


def test_events_roundtrip(tmp_path, spec):
    paths = synth.write_session(tmp_path, dt.date(2021, 2, 3), spec, 0, maturities=[4])
    assert paths[0].name == "2021-02-03_m04.csv"
    events = lob.read_events(paths[0])
    snaps = list(lob.replay(events, 4))
    s = synth.gen_midprice_session(spec, 0, maturities=[4])[0]
    books = synth.gen_orderbook_session(spec, s, 4)
    last = snaps[-1]
    assert last.t == pytest.approx(books[-1].t, abs=1e-6)
    assert last.mid == pytest.approx(books[-1].mid, abs=0.011)
    assert len(last.asks) == len(books[-1].asks)
