"""Limit order book reconstruction, liquidity curves and market-order execution.

Prices and volumes are kept as integer ticks (0.01 EUR/MWh) and integer kWh
inside :class:`OrderBook`; snapshots expose plain floats.  Bid volumes in a
snapshot are negative, matching the signed-volume convention used by the
liquidity curves (``x > 0`` buys from the asks, ``x < 0`` sells to the bids).
"""
from __future__ import annotations

import bisect
import csv
import json
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    CrossedBookAfterAdd,
    EmptySide,
    InsufficientDepth,
    InvalidEvent,
    UnknownOrderId,
    ZeroVolume,
)

log = logging.getLogger(__name__)

TICK = 0.01
KWH = 0.001
MS_PER_HOUR = 3_600_000
SESSION_OPEN = -9.0  # 15:00 on the day before delivery, hours relative to 00:00
EVENT_HEADER = ("ts_ms", "maturity", "side", "price", "volume", "action", "order_id")

_RESTRICTIONS = {None, "", "IOC", "FOK", "AON"}
_REJECTED = {"HIB", "BLOCK"}


def to_ticks(price: float) -> int:
    return int(round(price / TICK))


def to_kwh(volume: float) -> int:
    return int(round(volume / KWH))


def delivery_hour(maturity: int) -> float:
    """Delivery start T_m in hours after midnight for maturity index 1..24."""
    return float(maturity - 1)


def session_hours(maturity: int) -> float:
    """Trading session length T_m + 9 for the product of maturity index ``maturity``."""
    return delivery_hour(maturity) - SESSION_OPEN


@dataclass(frozen=True)
class OrderEvent:
    ts_ms: int
    maturity_index: int
    side: str
    price: float
    volume: float
    action: str
    order_id: str
    restriction: str | None = None

    def __post_init__(self):
        if self.side not in ("bid", "ask"):
            raise InvalidEvent(f"side must be 'bid' or 'ask', got {self.side!r}")
        if self.action not in ("add", "cancel", "execute"):
            raise InvalidEvent(f"unknown action {self.action!r}")
        if self.action != "cancel" and self.volume <= 0:
            raise InvalidEvent(f"order {self.order_id}: volume must be positive")
        if self.action == "add" and abs(self.price / TICK - round(self.price / TICK)) > 1e-6:
            raise InvalidEvent(f"order {self.order_id}: price {self.price} is off the 0.01 tick")


@dataclass(frozen=True)
class OrderBookSnapshot:
    """Immutable bid/ask ladders of one product at one instant.

    ``t`` is the time to maturity in hours.  ``asks`` holds ``(price, volume)``
    with increasing prices and positive volumes, ``bids`` holds decreasing
    prices and negative volumes.
    """

    t: float
    asks: tuple[tuple[float, float], ...]
    bids: tuple[tuple[float, float], ...]
    depth_cap: int | None = None

    def __post_init__(self):
        asks = tuple((float(p), float(v)) for p, v in self.asks)
        bids = tuple((float(p), -abs(float(v))) for p, v in self.bids)
        if self.depth_cap is not None:
            asks, bids = asks[: self.depth_cap], bids[: self.depth_cap]
        object.__setattr__(self, "asks", asks)
        object.__setattr__(self, "bids", bids)
        if self.t < 0:
            raise ValueError("time to maturity must be non-negative")
        if any(v <= 0 for _, v in asks) or any(v >= 0 for _, v in bids):
            raise ValueError("ladder volumes must be non-zero")
        if any(a[0] >= b[0] for a, b in zip(asks, asks[1:])):
            raise ValueError("ask prices must be strictly increasing")
        if any(a[0] <= b[0] for a, b in zip(bids, bids[1:])):
            raise ValueError("bid prices must be strictly decreasing")
        if asks and bids and asks[0][0] <= bids[0][0]:
            raise ValueError("crossed snapshot: best ask must exceed best bid")

    def capped(self, depth: int) -> "OrderBookSnapshot":
        return OrderBookSnapshot(self.t, self.asks, self.bids, depth)

    @property
    def mid(self) -> float:
        return mid_price(self)

    def ladder(self, sign: int) -> tuple[np.ndarray, np.ndarray]:
        """Prices and absolute level volumes of the side hit by a trade of sign ``sign``."""
        levels = self.asks if sign > 0 else self.bids
        if not levels:
            return np.empty(0), np.empty(0)
        arr = np.asarray(levels, dtype=float)
        return arr[:, 0], np.abs(arr[:, 1])

    def to_json(self) -> dict:
        return {
            "t_hours_to_maturity": self.t,
            "asks": [list(level) for level in self.asks],
            "bids": [list(level) for level in self.bids],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "OrderBookSnapshot":
        return cls(obj["t_hours_to_maturity"], tuple(map(tuple, obj["asks"])), tuple(map(tuple, obj["bids"])))


class OrderBook:
    """Mutable single-product book with price-time priority.

    Marketable adds are matched against the opposite side when ``matching`` is
    true and rejected with :class:`CrossedBookAfterAdd` otherwise.  IOC, FOK
    and AON restrictions are applied when an order would match; hibernated and
    block orders are dropped and counted in ``rejected``.
    """

    def __init__(self, matching: bool = True):
        self.matching = matching
        self._levels: dict[str, dict[int, deque]] = {"bid": {}, "ask": {}}
        self._prices: dict[str, list[int]] = {"bid": [], "ask": []}  # ascending ticks
        self._orders: dict[str, tuple[str, int]] = {}
        self.rejected = 0
        self.version = 0  # bumped on every change of resting liquidity
        self.trades: list[tuple[int, float, float]] = []  # (ts_ms, price, volume)

    # -- queries ---------------------------------------------------------
    def best(self, side: str) -> int | None:
        prices = self._prices[side]
        if not prices:
            return None
        return prices[-1] if side == "bid" else prices[0]

    def __len__(self) -> int:
        return len(self._orders)

    def __contains__(self, order_id: str) -> bool:
        return order_id in self._orders

    def snapshot(self, t: float, depth_cap: int | None = None) -> OrderBookSnapshot:
        asks = [(tick / 100, sum(q for _, q in self._levels["ask"][tick]) / 1000) for tick in self._prices["ask"]]
        bids = [(tick / 100, -sum(q for _, q in self._levels["bid"][tick]) / 1000) for tick in reversed(self._prices["bid"])]
        return OrderBookSnapshot(max(t, 0.0), tuple(asks), tuple(bids), depth_cap)

    # -- mutation --------------------------------------------------------
    def apply(self, event: OrderEvent) -> "OrderBook":
        if event.action == "add":
            self._add(event)
        elif event.action == "cancel":
            self._remove(event.order_id)
        else:
            self._execute(event.order_id, to_kwh(event.volume))
        return self

    def _add(self, ev: OrderEvent) -> None:
        if ev.restriction in _REJECTED:
            self.rejected += 1
            log.warning("dropping %s order %s", ev.restriction, ev.order_id)
            return
        if ev.restriction not in _RESTRICTIONS:
            raise InvalidEvent(f"unknown restriction {ev.restriction!r}")
        if ev.order_id in self._orders:
            raise InvalidEvent(f"duplicate order id {ev.order_id}")
        tick, qty = to_ticks(ev.price), to_kwh(ev.volume)
        other = "ask" if ev.side == "bid" else "bid"
        best = self.best(other)
        crosses = best is not None and (tick >= best if ev.side == "bid" else tick <= best)
        if crosses and not self.matching:
            raise CrossedBookAfterAdd(f"order {ev.order_id} at {ev.price} crosses the book")
        if crosses or ev.restriction:
            qty = self._match(ev, tick, qty, other)
        if qty > 0 and not ev.restriction:
            self._rest(ev.side, tick, ev.order_id, qty)

    def _fillable(self, side: str, limit: int, taker_side: str) -> int:
        total = 0
        for tick in self._prices[side]:
            if (taker_side == "bid" and tick > limit) or (taker_side == "ask" and tick < limit):
                continue
            total += sum(q for _, q in self._levels[side][tick])
        return total

    def _match(self, ev: OrderEvent, limit: int, qty: int, other: str) -> int:
        if ev.restriction in ("FOK", "AON") and self._fillable(other, limit, ev.side) < qty:
            return 0
        while qty > 0:
            best = self.best(other)
            if best is None or (best > limit if ev.side == "bid" else best < limit):
                break
            queue = self._levels[other][best]
            oid, resting = queue[0]
            fill = min(qty, resting)
            self.trades.append((ev.ts_ms, best / 100, fill / 1000))
            qty -= fill
            if fill == resting:
                self._remove(oid)
            else:
                queue[0] = (oid, resting - fill)
                self.version += 1
        return qty

    def _rest(self, side: str, tick: int, order_id: str, qty: int) -> None:
        levels = self._levels[side]
        if tick not in levels:
            levels[tick] = deque()
            bisect.insort(self._prices[side], tick)
        levels[tick].append((order_id, qty))
        self._orders[order_id] = (side, tick)
        self.version += 1

    def _remove(self, order_id: str) -> None:
        try:
            side, tick = self._orders.pop(order_id)
        except KeyError:
            raise UnknownOrderId(order_id) from None
        self.version += 1
        queue = self._levels[side][tick]
        for k, (oid, _) in enumerate(queue):
            if oid == order_id:
                del queue[k]
                break
        if not queue:
            del self._levels[side][tick]
            self._prices[side].remove(tick)

    def _execute(self, order_id: str, qty: int) -> None:
        if order_id not in self._orders:
            raise UnknownOrderId(order_id)
        side, tick = self._orders[order_id]
        queue = self._levels[side][tick]
        for k, (oid, resting) in enumerate(queue):
            if oid == order_id:
                if qty > resting:
                    raise InvalidEvent(f"execute {qty} kWh exceeds resting {resting} kWh of {order_id}")
                if qty == resting:
                    self._remove(order_id)
                else:
                    queue[k] = (oid, resting - qty)
                    self.version += 1
                return

    @classmethod
    def from_snapshot(cls, snapshot: OrderBookSnapshot) -> "OrderBook":
        """Rebuild a book holding one order per snapshot level."""
        book = cls()
        for k, (p, v) in enumerate(snapshot.asks):
            book.apply(OrderEvent(0, 1, "ask", p, v, "add", f"a{k}"))
        for k, (p, v) in enumerate(snapshot.bids):
            book.apply(OrderEvent(0, 1, "bid", p, -v, "add", f"b{k}"))
        return book


def apply_event(book: OrderBook, event: OrderEvent) -> OrderBook:
    return book.apply(event)


def replay(events: Iterable[OrderEvent], maturity: int, depth_cap: int | None = None,
           matching: bool = True) -> Iterator[OrderBookSnapshot]:
    """Yield a snapshot after every book-changing event of one session.

    Events sharing a millisecond are applied in input order.
    """
    book = OrderBook(matching)
    horizon = session_hours(maturity)
    for ev in events:
        before = book.version
        book.apply(ev)
        if book.version == before:
            continue
        yield book.snapshot(horizon - ev.ts_ms / MS_PER_HOUR, depth_cap)


def sample_on_grid(snapshots: Sequence[OrderBookSnapshot], taus: Iterable[float]) -> list[OrderBookSnapshot | None]:
    """Last snapshot at or before each time to maturity in ``taus`` (None before the first)."""
    ts = np.array([-s.t for s in snapshots])
    out = []
    for tau in taus:
        k = np.searchsorted(ts, -tau + 1e-12, side="right") - 1
        out.append(snapshots[k] if k >= 0 else None)
    return out


# -- liquidity curves ----------------------------------------------------------
def mid_price(snapshot: OrderBookSnapshot) -> float:
    if not snapshot.asks or not snapshot.bids:
        raise EmptySide(f"snapshot at t={snapshot.t} has an empty side")
    return 0.5 * (snapshot.asks[0][0] + snapshot.bids[0][0])


def _walk(snapshot: OrderBookSnapshot, x: float):
    if x == 0:
        raise ZeroVolume("volume must be non-zero")
    mid = mid_price(snapshot)
    prices, vols = snapshot.ladder(1 if x > 0 else -1)
    cum = np.cumsum(vols)
    size = abs(x)
    if size > cum[-1] * (1 + 1e-12):
        raise InsufficientDepth(f"|x|={size} exceeds side depth {cum[-1]}")
    j = min(int(np.searchsorted(cum, size * (1 - 1e-12))), len(cum) - 1)
    return mid, prices, vols, cum, size, j


def empirical_curve(snapshot: OrderBookSnapshot, x: float) -> float:
    """Volume-weighted execution price of ``x`` MWh minus the mid."""
    mid, prices, vols, cum, size, j = _walk(snapshot, x)
    filled = float(prices[:j] @ vols[:j])
    filled += (size - (cum[j - 1] if j else 0.0)) * prices[j]
    return filled / size - mid


def stepwise_curve(snapshot: OrderBookSnapshot, x: float) -> float:
    """Full-level VWAP up to the level containing ``x``, minus the mid."""
    mid, prices, vols, cum, size, j = _walk(snapshot, x)
    return float(prices[: j + 1] @ vols[: j + 1]) / cum[j] - mid


def step_values(snapshot: OrderBookSnapshot, sign: int) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative volumes and stepwise-curve values of every level on one side (absolute values)."""
    mid = mid_price(snapshot)
    prices, vols = snapshot.ladder(sign)
    cum = np.cumsum(vols)
    vwap = np.cumsum(prices * vols) / cum
    return cum, sign * (vwap - mid)


@dataclass(frozen=True)
class Fill:
    cash: float
    vwap: float
    filled: float
    residual: float


def execute_market_order(snapshot: OrderBookSnapshot, x: float) -> Fill:
    """Walk the ladder for a market order of signed size ``x``.

    Buys pay (negative cash), sells receive.  Whatever the book cannot absorb is
    reported in ``residual`` rather than dropped.
    """
    if x == 0:
        return Fill(0.0, float("nan"), 0.0, 0.0)
    sign = 1 if x > 0 else -1
    prices, vols = snapshot.ladder(sign)
    remaining, notional, filled = abs(x), 0.0, 0.0
    for p, v in zip(prices, vols):
        take = min(v, remaining)
        notional += p * take
        filled += take
        remaining -= take
        if remaining <= 1e-12:
            remaining = 0.0
            break
    vwap = notional / filled if filled else float("nan")
    return Fill(-sign * notional, vwap, sign * filled, sign * remaining)


# -- file formats --------------------------------------------------------------
def read_events(path: str | Path) -> list[OrderEvent]:
    events = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(EVENT_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise InvalidEvent(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            events.append(OrderEvent(
                int(row["ts_ms"]), int(row["maturity"]), row["side"], float(row["price"]),
                float(row["volume"]), row["action"], row["order_id"], row.get("restriction") or None,
            ))
    return events


def write_events(path: str | Path, events: Iterable[OrderEvent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVENT_HEADER)
        for ev in events:
            w.writerow([ev.ts_ms, ev.maturity_index, ev.side, f"{ev.price:.2f}", f"{ev.volume:.3f}", ev.action, ev.order_id])


def dump_snapshots(path: str | Path, snapshots: Iterable[OrderBookSnapshot]) -> None:
    with open(path, "w") as fh:
        for snap in snapshots:
            fh.write(json.dumps(snap.to_json()) + "\n")


def load_snapshots(path: str | Path) -> list[OrderBookSnapshot]:
    with open(path) as fh:
        return [OrderBookSnapshot.from_json(json.loads(line)) for line in fh if line.strip()]
