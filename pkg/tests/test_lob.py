import math

import numpy as np
import pytest

from idstore import lob
from idstore.errors import (CrossedBookAfterAdd, EmptySide, InsufficientDepth, InvalidEvent,
                            UnknownOrderId, ZeroVolume)
from idstore.lob import OrderBook, OrderBookSnapshot, OrderEvent


def ev(ts, side, price, vol, action, oid, restriction=None):
    return OrderEvent(ts, 9, side, price, vol, action, oid, restriction)


def test_add_and_execute_ladder():
    book = OrderBook()
    lob.apply_event(book, ev(0, "ask", 10.0, 2, "add", "a1"))
    lob.apply_event(book, ev(1, "ask", 11.0, 3, "add", "a2"))
    assert book.snapshot(1.0).asks == ((10.0, 2.0), (11.0, 3.0))
    lob.apply_event(book, ev(2, "ask", 10.0, 1, "execute", "a1"))
    assert book.snapshot(1.0).asks == ((10.0, 1.0), (11.0, 3.0))
    lob.apply_event(book, ev(3, "ask", 10.0, 1, "execute", "a1"))
    assert book.snapshot(1.0).asks == ((11.0, 3.0),)


def test_cancel_unknown():
    with pytest.raises(UnknownOrderId):
        OrderBook().apply(ev(0, "bid", 9.0, 0, "cancel", "nope"))


def test_invalid_events():
    with pytest.raises(InvalidEvent):
        ev(0, "buy", 9.0, 1, "add", "x")
    with pytest.raises(InvalidEvent):
        ev(0, "bid", 9.005, 1, "add", "x")
    with pytest.raises(InvalidEvent):
        ev(0, "bid", 9.0, 0, "add", "x")


def test_price_time_priority_and_matching():
    book = OrderBook()
    book.apply(ev(0, "ask", 10.0, 1, "add", "first"))
    book.apply(ev(1, "ask", 10.0, 2, "add", "second"))
    book.apply(ev(2, "bid", 10.0, 1.5, "add", "taker"))
    assert "first" not in book and "second" in book
    assert book.snapshot(1.0).asks == ((10.0, 1.5),)
    assert "taker" not in book


def test_crossing_add_rejected_without_matching():
    book = OrderBook(matching=False)
    book.apply(ev(0, "ask", 10.0, 1, "add", "a"))
    with pytest.raises(CrossedBookAfterAdd):
        book.apply(ev(1, "bid", 10.5, 1, "add", "b"))


def test_restrictions(caplog):
    book = OrderBook()
    book.apply(ev(0, "ask", 10.0, 1, "add", "a"))
    book.apply(ev(1, "bid", 10.0, 2, "add", "fok", "FOK"))
    assert "a" in book  # killed, nothing traded
    book.apply(ev(2, "bid", 10.0, 2, "add", "ioc", "IOC"))
    assert "a" not in book and "ioc" not in book
    book.apply(ev(3, "bid", 9.0, 1, "add", "hib", "HIB"))
    assert book.rejected == 1 and "hib" not in book
    assert "HIB" in caplog.text


def test_mid_price(b0):
    assert lob.mid_price(b0) == 9.5
    sym = OrderBookSnapshot(0.5, ((101, 1),), ((99, -1),))
    assert lob.mid_price(sym) == 100
    with pytest.raises(EmptySide):
        lob.mid_price(OrderBookSnapshot(0.5, ((101, 1),), ()))


def test_empirical_curve(b0):
    assert lob.empirical_curve(b0, 1) == pytest.approx(0.5)
    assert lob.empirical_curve(b0, 5) == pytest.approx(1.1)
    assert lob.empirical_curve(b0, -3) == pytest.approx(-0.8333333333)
    with pytest.raises(ZeroVolume):
        lob.empirical_curve(b0, 0)
    with pytest.raises(InsufficientDepth):
        lob.empirical_curve(b0, 6)


def test_stepwise_curve(b0):
    assert lob.stepwise_curve(b0, 1) == pytest.approx(0.5)
    assert lob.stepwise_curve(b0, 2.5) == pytest.approx(1.1)
    for x in np.linspace(0.01, 5, 200):
        assert lob.stepwise_curve(b0, x) >= lob.empirical_curve(b0, x) - 1e-12
        assert lob.stepwise_curve(b0, -x) <= lob.empirical_curve(b0, -x) + 1e-12
    for v in (2, 5):
        assert lob.stepwise_curve(b0, v) == pytest.approx(lob.empirical_curve(b0, v))


def test_curve_monotone_concave(b0):
    xs = np.linspace(0.01, 5, 300)
    p = np.array([lob.empirical_curve(b0, x) for x in xs])
    assert np.all(np.diff(p) >= -1e-12)
    cost = xs * (b0.mid + p)
    marginal = np.diff(cost) / np.diff(xs)
    assert np.all(np.diff(marginal) >= -1e-6)


def test_execute_market_order(b0):
    f = lob.execute_market_order(b0, 4)
    assert f.cash == pytest.approx(-42) and f.vwap == pytest.approx(10.5)
    f = lob.execute_market_order(b0, -2)
    assert f.cash == pytest.approx(18) and f.vwap == pytest.approx(9.0)
    f = lob.execute_market_order(b0, 6)
    assert (f.filled, f.residual) == (pytest.approx(5), pytest.approx(1))
    assert f.cash == pytest.approx(-53)


def test_cash_matches_curve(b0):
    for x in (0.3, 1.7, 4.9, -0.5, -4.2):
        f = lob.execute_market_order(b0, x)
        assert abs(-f.cash - x * (b0.mid + lob.empirical_curve(b0, x))) < 1e-9


def test_depth_cap_at_view_time():
    book = OrderBook()
    for i in range(5):
        book.apply(ev(i, "ask", 10.0 + i, 1, "add", f"a{i}"))
    snap = book.snapshot(1.0, depth_cap=2)
    assert len(snap.asks) == 2
    assert len(book.snapshot(1.0).asks) == 5


def test_replay_and_dump_roundtrip(tmp_path):
    events = [ev(0, "ask", 10.0, 2, "add", "a1"), ev(0, "bid", 9.0, 2, "add", "b1"),
              ev(60_000, "ask", 11.0, 3, "add", "a2"), ev(120_000, "bid", 9.0, 0, "cancel", "b1")]
    path = tmp_path / "events.csv"
    lob.write_events(path, events)
    back = lob.read_events(path)
    assert back == events
    snaps = list(lob.replay(back, 9))
    assert len(snaps) == 4
    assert snaps[0].t == pytest.approx(17.0)
    assert snaps[2].t == pytest.approx(17.0 - 1 / 60)
    dump = tmp_path / "snaps.jsonl"
    lob.dump_snapshots(dump, snaps)
    again = lob.load_snapshots(dump)
    assert [(s.asks, s.bids) for s in again] == [(s.asks, s.bids) for s in snaps]
    rebuilt = OrderBook.from_snapshot(again[2]).snapshot(again[2].t)
    assert (rebuilt.asks, rebuilt.bids) == (snaps[2].asks, snaps[2].bids)


def test_sample_on_grid():
    a = OrderBookSnapshot(3.0, ((10, 1),), ((9, -1),))
    b = OrderBookSnapshot(2.0, ((11, 1),), ((9, -1),))
    out = lob.sample_on_grid([a, b], [3.5, 2.5, 1.0])
    assert out[0] is None and out[1] is a and out[2] is b


def test_session_hours():
    assert lob.session_hours(9) == 17
    assert lob.delivery_hour(1) == 0
    assert math.isclose(lob.session_hours(24), 32)
