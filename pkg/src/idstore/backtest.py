"""Day-by-day replay of storage strategies against order books with weekly recalibration.

Four strategies are compared: deterministic or stochastic optimisation, each
with or without the liquidity model.  Models in force on a day were fitted on
the ``window_days`` sessions before the most recent Monday.  Every strategy
starts the day empty and trades product ``i`` at ``T_i - delta`` by walking the
book; the grid-side volume ``N C w(C)`` is executed and the battery only moves
by what was actually filled.
"""
from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import re
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import lob
from .errors import EmptySide, InsufficientHistory, InsufficientWindows, NoJumpsObserved
from .liqmodel import LiquiditySessionParams, fit_session, fit_stream
from .midprice import MidPriceParams, MidPriceSeries, estimate, simulate
from .regression import RegressionConfig
from .synth import SynthSpec, gen_midprice_session, make_snapshot
from .valuation import BatterySpec, ImpactSpec, Policy, optimize_deterministic, optimize_stochastic

log = logging.getLogger(__name__)

STRATEGIES = ("det_depth", "det_no_depth", "sto_depth", "sto_no_depth")
N_PRODUCTS = 24


# -- data sources --------------------------------------------------------------------
class DayData:
    """Mid-price series and book access for the 24 products of one delivery day."""

    def __init__(self, day: dt.date, series: dict[int, MidPriceSeries]):
        self.day = day
        self.series = series
        self._prices: dict[float, np.ndarray] = {}

    def book(self, m: int, tau: float) -> lob.OrderBookSnapshot | None:
        raise NotImplementedError

    def prices(self, t: float) -> np.ndarray:
        """Mid of every product at clock time ``t`` (NaN when the product has no data)."""
        if t not in self._prices:
            out = np.full(N_PRODUCTS, np.nan)
            for m, s in self.series.items():
                out[m - 1] = s.sample(np.array([t]))[0]
            self._prices[t] = out
        return self._prices[t].copy()

    def opening(self) -> np.ndarray:
        out = np.full(N_PRODUCTS, np.nan)
        for m, s in self.series.items():
            out[m - 1] = s.prices[0]
        return out

    def calibration_books(self, m: int, taus: np.ndarray) -> list[lob.OrderBookSnapshot]:
        return [b for b in (self.book(m, t) for t in taus) if b is not None]


class _ReplayedDay(DayData):
    def __init__(self, day, snapshots: dict[int, list[lob.OrderBookSnapshot]]):
        series = {}
        for m, snaps in snapshots.items():
            times, mids = [], []
            for s in snaps:
                try:
                    mid = s.mid
                except EmptySide:
                    continue
                if not mids or mid != mids[-1]:
                    times.append(lob.delivery_hour(m) - s.t)
                    mids.append(mid)
            if mids:
                series[m] = MidPriceSeries(lob.delivery_hour(m), np.array(times), np.array(mids))
        super().__init__(day, series)
        self.snapshots = snapshots

    def book(self, m, tau):
        snaps = self.snapshots.get(m)
        if not snaps:
            return None
        snap = lob.sample_on_grid(snaps, [tau])[0]
        if snap is None or not snap.asks or not snap.bids:
            return None
        return snap


_FILE = re.compile(r"(\d{4}-\d{2}-\d{2})_m(\d{2})\.csv$")


class FileSource:
    """Order-event CSVs named ``YYYY-MM-DD_mMM.csv`` in one directory."""

    def __init__(self, directory: str | Path, depth_cap: int | None = None):
        self.directory = Path(directory)
        self.depth_cap = depth_cap
        self.files: dict[dt.date, dict[int, Path]] = defaultdict(dict)
        for p in sorted(self.directory.glob("*.csv")):
            mt = _FILE.search(p.name)
            if mt:
                self.files[dt.date.fromisoformat(mt.group(1))][int(mt.group(2))] = p
        self._cache: dict[dt.date, DayData] = {}

    def days(self) -> list[dt.date]:
        return sorted(self.files)

    def load(self, day: dt.date) -> DayData:
        if day not in self._cache:
            snaps = {m: list(lob.replay(lob.read_events(p), m, self.depth_cap))
                     for m, p in sorted(self.files.get(day, {}).items())}
            self._cache[day] = _ReplayedDay(day, snaps)
        return self._cache[day]


class _SynthDay(DayData):
    def __init__(self, day, series, spec: SynthSpec, key: int):
        super().__init__(day, series)
        self.spec = spec
        self.key = key
        self._books: dict[tuple[int, int], lob.OrderBookSnapshot] = {}

    def book(self, m, tau):
        s = self.series.get(m)
        if s is None or tau < 0:
            return None
        sec = int(round(tau * 3600))
        if (m, sec) not in self._books:
            mid = float(s.sample(np.array([s.maturity - tau]))[0])
            rng = np.random.default_rng(np.random.SeedSequence([self.spec.seed, self.key, 3, m, sec]))
            self._books[m, sec] = make_snapshot(mid, tau, self.spec.liquidity[m], self.spec.granularity,
                                                self.spec.n_levels, self.spec.noise, rng)
        return self._books[m, sec]


class SynthSource:
    """Synthetic sessions generated on demand; books exist at any instant."""

    def __init__(self, spec: SynthSpec, days: Sequence[dt.date]):
        self.spec = spec
        self._days = sorted(days)
        self._cache: dict[dt.date, DayData] = {}

    def days(self) -> list[dt.date]:
        return list(self._days)

    def load(self, day: dt.date) -> DayData:
        if day not in self._cache:
            key = day.toordinal()
            series = gen_midprice_session(self.spec, key)
            self._cache[day] = _SynthDay(day, {i + 1: s for i, s in enumerate(series)}, self.spec, key)
        return self._cache[day]


# -- schedule ----------------------------------------------------------------------------
@dataclass
class CalibrationSchedule:
    window_days: int
    windows: dict[dt.date, list[dt.date]]       # Monday -> sessions used
    in_force: dict[dt.date, dt.date]            # backtest day -> Monday


def last_monday(day: dt.date) -> dt.date:
    return day - dt.timedelta(days=day.weekday())


def schedule(days: Iterable[dt.date], available: Iterable[dt.date], window_days: int = 28) -> CalibrationSchedule:
    """Attach every backtest day to the Monday fit in force, fitted on ``[Monday - window, Monday)``."""
    available = sorted(set(available))
    if not available:
        raise InsufficientHistory("no sessions available")
    first = available[0]
    windows, in_force = {}, {}
    for day in sorted(days):
        monday = last_monday(day)
        start = monday - dt.timedelta(days=window_days)
        if start < first:
            raise InsufficientHistory(f"{day}: window starting {start} precedes the first session {first}")
        if monday not in windows:
            used = [d for d in available if start <= d < monday]
            if not used:
                raise InsufficientHistory(f"{day}: no session in [{start}, {monday})")
            if len(used) < window_days:
                warnings.warn(f"calibration window before {monday} has {len(used)} of {window_days} sessions")
            windows[monday] = used
        in_force[day] = monday
    return CalibrationSchedule(window_days, windows, in_force)


def first_valid_day(available: Iterable[dt.date], window_days: int = 28) -> dt.date:
    first = min(available)
    day = first + dt.timedelta(days=window_days)
    return day + dt.timedelta(days=(7 - day.weekday()) % 7)


# -- configuration and calibration -------------------------------------------------------
@dataclass(frozen=True)
class BacktestConfig:
    battery: BatterySpec = BatterySpec()
    delta: float = 2.0
    K: float = 20.0                      # volume window for the liquidity regression, MWh
    window_days: int = 28
    n_paths: int = 20_000
    regression: RegressionConfig = RegressionConfig(meshes=4, min_per_cell=50)
    backend: str = "jump"
    seed: int = 0
    sample_minutes: float = 60.0         # spacing of the books used for liquidity calibration
    tau_window: tuple[float, float] = (1.0, 12.0)
    strategies: tuple[str, ...] = STRATEGIES


@dataclass
class Models:
    liquidity: LiquiditySessionParams
    midprice: MidPriceParams


class Calibrator:
    """Fits and caches the models of each Monday."""

    def __init__(self, source, cfg: BacktestConfig):
        self.source = source
        self.cfg = cfg
        self._fits: dict[tuple[dt.date, int], list] = {}
        self._models: dict[dt.date, Models] = {}

    def _day_fits(self, day: dt.date, m: int) -> list:
        key = (day, m)
        if key not in self._fits:
            lo, hi = self.cfg.tau_window
            taus = np.arange(hi, lo - 1e-9, -self.cfg.sample_minutes / 60.0)
            books = self.source.load(day).calibration_books(m, taus)
            self._fits[key] = fit_stream(books, self.cfg.K)
        return self._fits[key]

    def models(self, monday: dt.date, window: Sequence[dt.date]) -> Models:
        if monday not in self._models:
            by_m = {}
            for m in range(1, N_PRODUCTS + 1):
                fits = [f for d in window for f in self._day_fits(d, m)]
                try:
                    by_m[m] = fit_session(fits, lob.session_hours(m))
                except InsufficientWindows:
                    log.warning("no liquidity fit for product %d before %s", m, monday)
            sessions = [list(self.source.load(d).series.values()) for d in window]
            try:
                mid = estimate(sessions, law_points=200)
            except NoJumpsObserved as exc:
                raise InsufficientHistory(f"mid-price model before {monday}: {exc}") from None
            self._models[monday] = Models(LiquiditySessionParams(by_m), mid)
        return self._models[monday]


# -- daily replay -----------------------------------------------------------------------------
@dataclass
class DayOutcome:
    eur_per_battery: float
    residual: float = 0.0        # unfilled grid volume, MWh (park)
    missing: int = 0             # hours skipped for lack of a book


class PolicyCache:
    """Stochastic policies, trained once per (Monday, opening curve, park size)."""

    def __init__(self, cfg: BacktestConfig):
        self.cfg = cfg
        self._store: dict[tuple, Policy] = {}
        self._paths: dict[tuple, object] = {}

    def paths(self, monday: dt.date, models: Models, f0: np.ndarray):
        key = (monday, tuple(np.round(f0, 2)))
        if key not in self._paths:
            cfg = self.cfg
            seed = int(np.random.SeedSequence([cfg.seed, monday.toordinal(), 7]).generate_state(1)[0])
            grid = np.arange(math.floor(models.midprice.t0), max(models.midprice.maturities) + 1.0)
            self._paths.clear()
            self._paths[key] = simulate(models.midprice, f0, grid, cfg.n_paths, seed=seed, backend=cfg.backend)
        return self._paths[key]

    def get(self, monday: dt.date, models: Models, f0: np.ndarray, impact: ImpactSpec) -> Policy:
        depth = impact.liq is not None
        key = (monday, tuple(np.round(f0, 2)), impact.n_batteries if depth else 0, depth, impact.delta)
        if key not in self._store:
            paths = self.paths(monday, models, f0)
            self._store[key] = optimize_stochastic(paths, self.cfg.battery, impact, self.cfg.regression)
        return self._store[key]


def _feasible_range(stock: float, battery: BatterySpec) -> tuple[int, int]:
    lo = max(-battery.r, math.ceil(-stock / battery.step - 1e-9))
    hi = min(battery.r, math.floor((battery.capacity - stock) / battery.step + 1e-9))
    return lo, hi


def execute_plan(data: DayData, decide, battery: BatterySpec, n_batteries: int, delta: float) -> DayOutcome:
    """Trade the 24 products with ``decide(i, stock_units, prices) -> units`` on the books of ``data``."""
    stock, cash, residual, missing = 0.0, 0.0, 0.0, 0
    for i in range(1, N_PRODUCTS + 1):
        t = lob.delivery_hour(i) - delta
        u = int(decide(i, int(round(stock / battery.step)), data.prices(t)))
        lo, hi = _feasible_range(stock, battery)
        u = min(max(u, lo), hi)
        if u == 0:
            continue
        snap = data.book(i, delta)
        if snap is None:
            missing += 1
            log.info("%s: no book for product %d at tau=%s, trade skipped", data.day, i, delta)
            continue
        c = u * battery.step
        w = 1.0 / battery.efficiency if c > 0 else battery.efficiency
        fill = lob.execute_market_order(snap, n_batteries * c * w)
        cash += fill.cash
        residual += abs(fill.residual)
        stock += fill.filled / (n_batteries * w)
    return DayOutcome(cash / n_batteries, residual, missing)


@dataclass
class DayContext:
    monday: dt.date
    models: Models


def run_day(data: DayData, ctx: DayContext, cfg: BacktestConfig, n_batteries: int,
            policies: PolicyCache, strategies: Sequence[str] | None = None) -> dict[str, DayOutcome]:
    """Realised euros per battery of each strategy on one day."""
    battery, delta = cfg.battery, cfg.delta
    strategies = cfg.strategies if strategies is None else strategies
    t1 = lob.delivery_hour(1) - delta
    spot = data.prices(t1)
    f0 = data.opening()
    spot = np.where(np.isnan(spot), np.nanmean(spot), spot)
    f0 = np.where(np.isnan(f0), np.nanmean(f0), f0)
    out = {}
    for name in strategies:
        depth = name.endswith("_depth") and not name.endswith("no_depth")
        impact = ImpactSpec(n_batteries, ctx.models.liquidity if depth else None, delta)
        if name == "zero":
            decide = lambda i, s, p: 0
        elif name.startswith("det"):
            plan = optimize_deterministic(spot, battery, impact).controls
            decide = lambda i, s, p, plan=plan: int(round(plan[i - 1] / battery.step))
        else:
            pol = policies.get(ctx.monday, ctx.models, f0, impact)

            def decide(i, s, p, pol=pol, impact=impact):
                p = np.where(np.isnan(p), f0, p)
                return int(pol.decide(i, np.array([s]), p[None, :], battery, impact)[0])
        out[name] = execute_plan(data, decide, battery, n_batteries, delta)
    return out


# -- range ------------------------------------------------------------------------------------
@dataclass
class BacktestResult:
    rows: list[tuple[dt.date, str, int, float]] = field(default_factory=list)
    residuals: dict[tuple[str, int], float] = field(default_factory=lambda: defaultdict(float))
    missing: dict[tuple[str, int], int] = field(default_factory=lambda: defaultdict(int))

    def total(self, strategy: str, n_batteries: int) -> float:
        return float(sum(v for _, s, n, v in self.rows if s == strategy and n == n_batteries))

    def park_gain(self, strategy: str, n_batteries: int) -> float:
        return n_batteries * self.total(strategy, n_batteries)

    def strategies(self) -> list[str]:
        return sorted({s for _, s, _, _ in self.rows})

    def park_sizes(self) -> list[int]:
        return sorted({n for _, _, n, _ in self.rows})

    def write(self, directory: str | Path) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        bt, pg = directory / "backtest.csv", directory / "park_gain.csv"
        with open(bt, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("day", "strategy", "n_batteries", "eur_per_battery"))
            for day, s, n, v in self.rows:
                w.writerow((day.isoformat(), s, n, f"{v:.6f}"))
        with open(pg, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("strategy", "n_batteries", "total_eur"))
            for s in self.strategies():
                for n in self.park_sizes():
                    w.writerow((s, n, f"{self.park_gain(s, n):.6f}"))
        return bt, pg


def run_range(source, days: Sequence[dt.date], cfg: BacktestConfig, n_batteries: Sequence[int] = (1,),
              calibrator: Calibrator | None = None, policies: PolicyCache | None = None) -> BacktestResult:
    """Backtest every day in ``days`` (which must have data) under the Monday schedule."""
    sched = schedule(days, source.days(), cfg.window_days)
    calibrator = calibrator or Calibrator(source, cfg)
    policies = policies or PolicyCache(cfg)
    result = BacktestResult()
    for day in sorted(days):
        monday = sched.in_force[day]
        ctx = DayContext(monday, calibrator.models(monday, sched.windows[monday]))
        data = source.load(day)
        for n in n_batteries:
            for name, o in run_day(data, ctx, cfg, n, policies).items():
                result.rows.append((day, name, n, o.eur_per_battery))
                result.residuals[(name, n)] += o.residual
                result.missing[(name, n)] += o.missing
    return result


def calendar(start: dt.date, end: dt.date) -> list[dt.date]:
    """Every day from ``start`` to ``end`` inclusive."""
    return [start + dt.timedelta(days=k) for k in range((end - start).days + 1)]
