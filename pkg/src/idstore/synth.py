"""Synthetic sessions: mid-price paths from the jump model and order books shaped by the liquidity model.

Ladder level ``i`` (1-based) holds ``v1 + (i - 1) g`` MWh with ``v1 = g`` by
default, so cumulative volumes are ``g, 3g, 6g, ...``.  When the two
half-spreads differ, one side gets a deeper first level so that the quoted mid
equals the model mid.  Level prices are chosen so that the stepwise curve evaluated at each step midpoint equals ``A|x| + B`` exactly; they follow
from differences of the cumulative cost ``V (mid + L(V_mid))``.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import lob
from .errors import InfeasibleLadder
from .liqmodel import LiquiditySessionParams, MaturityLiquidity
from .lob import OrderBookSnapshot, OrderEvent
from .midprice import MidPriceParams, MidPriceSeries, simulate_events


@dataclass(frozen=True)
class SynthSpec:
    midprice: MidPriceParams
    liquidity: LiquiditySessionParams
    granularity: float = 1.0
    n_levels: int = 20
    noise: float = 0.0
    seed: int = 0
    f0: float | Sequence[float] = 50.0

    def initial(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.f0, dtype=float), (self.midprice.M,)).copy()


def ladder_offsets(A: float, B: float, granularity: float, n_levels: int,
                   first_volume: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Absolute price offsets from the mid and level volumes for one side."""
    first = granularity if first_volume is None else first_volume
    vol = first + granularity * np.arange(n_levels, dtype=float)
    cum = np.cumsum(vol)
    u = cum - 0.5 * vol
    cost = cum * (A * u + B)
    off = np.diff(np.concatenate([[0.0], cost])) / vol
    if not (B > 0 or A > 0) or np.any(np.diff(off) <= 0) or off[0] <= 0:
        raise InfeasibleLadder(f"A={A}, B={B} do not give a strictly monotone ladder")
    return off, vol


def first_volumes(ml: MaturityLiquidity, tau: float, granularity: float) -> dict[int, float]:
    """First-level volumes that put both best quotes at the same distance from the mid.

    The stepwise curve at the first level equals half the quoted spread on both
    sides, so the side with the smaller first offset gets a deeper first level.
    """
    A = {s: float(ml.slope(s, tau)) for s in (1, -1)}
    B = {s: float(ml.jump(s, tau)) for s in (1, -1)}
    first = {s: A[s] * granularity / 2 + B[s] for s in (1, -1)}
    vols = {1: granularity, -1: granularity}
    lo = min(first, key=first.get)
    gap = first[-lo] - first[lo]
    if gap > 1e-15:
        if A[lo] <= 0:
            raise InfeasibleLadder("cannot balance the best quotes with a zero slope")
        vols[lo] = 2.0 * (first[-lo] - B[lo]) / A[lo]
    return vols


def make_snapshot(mid: float, tau: float, ml: MaturityLiquidity, granularity: float = 1.0, n_levels: int = 20,
                  noise: float = 0.0, rng: np.random.Generator | None = None) -> OrderBookSnapshot:
    v1 = first_volumes(ml, tau, granularity)
    sides = {}
    for sign in (1, -1):
        off, vol = ladder_offsets(float(ml.slope(sign, tau)), float(ml.jump(sign, tau)), granularity, n_levels, v1[sign])
        if noise:
            off = np.sort(off * (1.0 + noise * rng.standard_normal(off.size)))
            off = np.maximum(off, 1e-6)
        sides[sign] = (mid + sign * off, vol * sign)
    return OrderBookSnapshot(tau, tuple(zip(*sides[1])), tuple(zip(*sides[-1])))


def _rng(spec: SynthSpec, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, *keys]))


def gen_midprice_session(spec: SynthSpec, session: int = 0, maturities: Sequence[int] | None = None
                         ) -> list[MidPriceSeries]:
    """One event-time mid-price path per maturity for session number ``session``."""
    seed = int(np.random.SeedSequence([spec.seed, session, 1]).generate_state(1)[0])
    ev = simulate_events(spec.midprice, 1, seed=seed, maturities=maturities)
    f0 = spec.initial()[np.asarray(ev.indices) - 1]
    return ev.series(0, f0)


def gen_orderbook_session(spec: SynthSpec, series: MidPriceSeries, m: int, session: int = 0,
                          tau_window: tuple[float, float] | None = None) -> list[OrderBookSnapshot]:
    """A book at every mid-price change (and at the open), in time order."""
    ml = spec.liquidity[m]
    rng = _rng(spec, session, 2, m)
    out = []
    for t, mid in zip(series.times, series.prices):
        tau = max(series.maturity - t, 0.0)
        if tau_window and not (tau_window[0] <= tau <= tau_window[1]):
            continue
        out.append(make_snapshot(mid, tau, ml, spec.granularity, spec.n_levels, spec.noise, rng))
    return out


def snapshots_to_events(snapshots: Sequence[OrderBookSnapshot], maturity: int) -> list[OrderEvent]:
    """Order events that rebuild each snapshot in turn (cancel everything, then add every level)."""
    events: list[OrderEvent] = []
    live: list[tuple[str, float]] = []
    hours = lob.session_hours(maturity)
    n = 0
    for snap in snapshots:
        ts = int(round((hours - snap.t) * lob.MS_PER_HOUR))
        for oid, side in live:
            events.append(OrderEvent(ts, maturity, side, 0.0, 0.0, "cancel", oid))
        live = []
        for side, levels in (("ask", snap.asks), ("bid", snap.bids)):
            merged: dict[float, float] = {}
            for p, v in levels:
                key = round(p, 2)
                merged[key] = merged.get(key, 0.0) + abs(v)
            for p, v in merged.items():
                oid = f"{maturity}-{n}"
                n += 1
                events.append(OrderEvent(ts, maturity, side, p, round(v, 3), "add", oid))
                live.append((oid, side))
    return events


def session_filename(day: dt.date, m: int) -> str:
    return f"{day.isoformat()}_m{m:02d}.csv"


def write_session(directory: str | Path, day: dt.date, spec: SynthSpec, session: int = 0,
                  maturities: Sequence[int] | None = None) -> list[Path]:
    """Write one order-event CSV per maturity for ``day``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    series = gen_midprice_session(spec, session, maturities)
    mats = list(maturities) if maturities is not None else list(range(1, spec.midprice.M + 1))
    paths = []
    for m, s in zip(mats, series):
        books = gen_orderbook_session(spec, s, m, session)
        path = directory / session_filename(day, m)
        lob.write_events(path, snapshots_to_events(books, m))
        paths.append(path)
    return paths
