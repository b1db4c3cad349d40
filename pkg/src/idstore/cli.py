"""Command-line entry point: ``idstore calibrate|simulate|value|backtest|synth``.

Every command reads one JSON config; the common flags override its keys.
Exit codes: 0 success, 2 ingestion failure, 3 fit failure, 4 optimisation
failure, 5 infeasible backtest schedule.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backtest as bt
from . import lob, midprice, presets, synth
from .errors import IdstoreError, InsufficientHistory
from .liqmodel import LiquiditySessionParams
from .midprice import MidPriceParams
from .regression import RegressionConfig
from .valuation import (BatterySpec, ImpactSpec, optimize_deterministic, optimize_stochastic, optimize_two_index,
                        write_report, write_two_index_report)

log = logging.getLogger("idstore")

EXIT_INGEST, EXIT_FIT, EXIT_DP, EXIT_SCHEDULE = 2, 3, 4, 5


class CommandFailed(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    market: str = "fr"
    year: int = 2021
    delta: float = 2.0
    n_hours: int = 2
    batteries: list[int] = field(default_factory=lambda: [1])
    efficiency: float = 0.92
    step: float = 0.1
    paths: int = 20_000
    meshes: int = 4
    min_per_cell: int = 50
    backend: str = "jump"
    seed: int = 0
    start: str | None = None
    end: str | None = None
    input_dir: str = "sessions"
    output_dir: str = "out"
    liquidity_file: str | None = None
    midprice_file: str | None = None
    f0: float | list[float] | str = "shape"
    spot: list[float] | None = None
    two_index: bool = False
    window_days: int = 28
    sample_minutes: float = 60.0
    tau_window: list[float] = field(default_factory=lambda: [1.0, 12.0])
    source: str = "files"
    granularity: float = 1.0
    n_levels: int | None = None
    noise: float = 0.0

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    # -- derived objects --------------------------------------------------------
    @property
    def profile(self) -> presets.MarketProfile:
        return presets.MARKETS[self.market]

    def battery(self) -> BatterySpec:
        return BatterySpec(capacity=float(self.n_hours), rate=1.0, efficiency=self.efficiency, step=self.step)

    def regression(self) -> RegressionConfig:
        return RegressionConfig(self.paths, self.meshes, 4, self.min_per_cell)

    def liquidity(self) -> LiquiditySessionParams:
        if self.liquidity_file:
            return LiquiditySessionParams.load(self.liquidity_file)
        return presets.liquidity(self.market, self.year)

    def midprice(self) -> MidPriceParams:
        if self.midprice_file:
            return MidPriceParams.load(self.midprice_file)
        return presets.midprice(self.market, self.year)

    def initial_curve(self, M: int = 24) -> np.ndarray:
        if isinstance(self.f0, str):
            if self.f0 != "shape":
                raise ValueError(f"f0 must be a number, a list or 'shape', not {self.f0!r}")
            return np.array(presets.DAILY_SHAPE[:M])
        return np.broadcast_to(np.asarray(self.f0, dtype=float), (M,)).copy()

    def days(self) -> list[dt.date]:
        if not self.start:
            raise ValueError("config needs a start date")
        start = dt.date.fromisoformat(self.start)
        end = dt.date.fromisoformat(self.end) if self.end else start
        return bt.calendar(start, end)

    def synth_spec(self) -> synth.SynthSpec:
        return synth.SynthSpec(self.midprice(), self.liquidity(), self.granularity,
                               self.n_levels or self.profile.depth_cap, self.noise, self.seed, self.initial_curve())

    def backtest_config(self) -> bt.BacktestConfig:
        return bt.BacktestConfig(self.battery(), self.delta, self.profile.K, self.window_days, self.paths,
                                 self.regression(), self.backend, self.seed, self.sample_minutes,
                                 tuple(self.tau_window))


def _out(cfg: RunConfig) -> Path:
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _hourly_grid(params: MidPriceParams) -> np.ndarray:
    return np.arange(np.floor(params.t0), max(params.maturities) + 1.0)


# -- commands ----------------------------------------------------------------------
def cmd_synth(cfg: RunConfig) -> list[Path]:
    spec = cfg.synth_spec()
    written = []
    for day in cfg.days():
        written += synth.write_session(cfg.output_dir, day, spec, session=day.toordinal())
    return written


def cmd_calibrate(cfg: RunConfig) -> dict[str, Path]:
    source = bt.FileSource(cfg.input_dir, cfg.profile.depth_cap)
    days = source.days()
    if cfg.start:
        wanted = set(cfg.days())
        days = [d for d in days if d in wanted]
    if not days:
        raise CommandFailed(EXIT_INGEST, f"no sessions found in {cfg.input_dir}")
    for d in days:
        try:
            source.load(d)
        except (IdstoreError, ValueError, KeyError) as exc:
            raise CommandFailed(EXIT_INGEST, f"session {d}: {exc}") from None
    calib = bt.Calibrator(source, cfg.backtest_config())
    try:
        models = calib.models(days[-1] + dt.timedelta(days=1), days)
    except (IdstoreError, ValueError) as exc:
        raise CommandFailed(EXIT_FIT, f"fit on {days[0]}..{days[-1]} failed: {exc}") from None
    if not models.liquidity.maturities:
        raise CommandFailed(EXIT_FIT, f"no liquidity fit on {days[0]}..{days[-1]}")
    out = _out(cfg)
    paths = {"liquidity": out / "liquidity.json", "midprice": out / "midprice.json",
             "liquidity_table": out / "liquidity_table.csv", "midprice_table": out / "midprice_table.csv"}
    models.liquidity.save(paths["liquidity"])
    models.midprice.save(paths["midprice"])
    models.liquidity.write_table(paths["liquidity_table"])
    p = models.midprice
    st = p.stats
    sigma_inf = midprice.theoretical_vol(p, 1, p.t0)[1]
    rho1 = midprice.theoretical_corr(p, 1, 2) if p.M > 1 else float("nan")
    with open(paths["midprice_table"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("kappa", "mu", "mu_c", "m1", "m2", "sigma_inf", "rho_1"))
        w.writerow([f"{v:.4f}" for v in (p.kappa, p.mu, p.mu_c, st.m1, st.m2, sigma_inf, rho1)])
    return paths


def cmd_simulate(cfg: RunConfig) -> Path:
    params = cfg.midprice()
    paths = midprice.simulate(params, cfg.initial_curve(params.M), _hourly_grid(params), cfg.paths, seed=cfg.seed,
                              backend=cfg.backend)
    target = _out(cfg) / "paths.csv"
    paths.to_csv(target)
    return target


def cmd_value(cfg: RunConfig) -> dict[str, Path]:
    battery = cfg.battery()
    params = cfg.midprice()
    liq = cfg.liquidity()
    spot = np.asarray(cfg.spot, dtype=float) if cfg.spot else cfg.initial_curve(params.M)
    M = len(spot)
    f0 = np.concatenate([spot, cfg.initial_curve(params.M)[M:]]) if M < params.M else spot[:params.M]
    rows, two_rows = [], []
    try:
        paths = midprice.simulate(params, f0, _hourly_grid(params), cfg.paths, seed=cfg.seed, backend=cfg.backend)
        reg = cfg.regression()
        for n in cfg.batteries:
            depth = ImpactSpec(n, liq, cfg.delta)
            plain = ImpactSpec(n, None, cfg.delta)
            rows.append(("det_depth", n, optimize_deterministic(spot, battery, depth).value))
            rows.append(("det_no_depth", n, optimize_deterministic(spot, battery, plain).value))
            one = optimize_stochastic(paths, battery, depth, reg, n_products=M)
            rows.append(("sto_depth", n, one.value))
            rows.append(("sto_no_depth", n, optimize_stochastic(paths, battery, plain, reg, n_products=M).value))
            if cfg.two_index:
                two = optimize_two_index(paths, battery, depth, reg, n_products=M)
                two_rows.append((n, one.value, two.value))
    except IdstoreError as exc:
        raise CommandFailed(EXIT_DP, f"optimisation failed: {exc}") from None
    out = _out(cfg)
    written = {"values": out / "valuation.csv"}
    write_report(written["values"], rows)
    if cfg.two_index:
        written["two_index"] = out / "two_index.csv"
        write_two_index_report(written["two_index"], two_rows)
    return written


def cmd_backtest(cfg: RunConfig) -> tuple[Path, Path]:
    days = cfg.days()
    bcfg = cfg.backtest_config()
    if cfg.source == "synth":
        first = days[0] - dt.timedelta(days=cfg.window_days + 7)
        source = bt.SynthSource(cfg.synth_spec(), bt.calendar(first, days[-1]))
    else:
        source = bt.FileSource(cfg.input_dir, cfg.profile.depth_cap)
        missing = [d for d in days if d not in set(source.days())]
        if missing:
            raise CommandFailed(EXIT_SCHEDULE, f"no sessions for backtest days {missing[0]}..")
    try:
        bt.schedule(days, source.days(), cfg.window_days)
    except InsufficientHistory as exc:
        raise CommandFailed(EXIT_SCHEDULE, str(exc)) from None
    try:
        result = bt.run_range(source, days, bcfg, cfg.batteries)
    except InsufficientHistory as exc:
        raise CommandFailed(EXIT_SCHEDULE, str(exc)) from None
    except IdstoreError as exc:
        raise CommandFailed(EXIT_DP, f"backtest failed: {exc}") from None
    return result.write(cfg.output_dir)


COMMANDS = {"calibrate": cmd_calibrate, "simulate": cmd_simulate, "value": cmd_value, "backtest": cmd_backtest,
            "synth": cmd_synth}


# -- argument handling -------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idstore", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="JSON run configuration")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--market", choices=sorted(presets.MARKETS))
    parser.add_argument("--delta", type=float, choices=(1.0, 2.0))
    parser.add_argument("--batteries", help="comma-separated park sizes, e.g. 1,10,20")
    parser.add_argument("--n-hours", type=int, choices=(2, 3), dest="n_hours")
    parser.add_argument("--two-index", action="store_true", default=None, dest="two_index")
    parser.add_argument("--input", dest="input_dir")
    parser.add_argument("--output", dest="output_dir")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    data = json.loads(args.config.read_text()) if args.config else {}
    for key in ("seed", "market", "delta", "n_hours", "two_index", "input_dir", "output_dir"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    if args.batteries:
        data["batteries"] = [int(x) for x in args.batteries.split(",") if x.strip()]
    return RunConfig.from_dict(data)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
    except (OSError, ValueError, TypeError) as exc:
        print(f"idstore: bad configuration: {exc}", file=sys.stderr)
        return EXIT_INGEST
    try:
        result = COMMANDS[args.command](cfg)
    except CommandFailed as exc:
        print(f"idstore {args.command}: {exc}", file=sys.stderr)
        return exc.code
    if isinstance(result, dict):
        result = list(result.values())
    for p in result if isinstance(result, (list, tuple)) else [result]:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
