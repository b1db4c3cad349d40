"""Battery valuation on the hourly products: deterministic and regression-based dynamic programming.

Stock and controls live on an integer grid of ``step`` MWh.  For product ``i``
the control ``C_i`` (positive = injection) is traded at ``T_i - delta`` at the
unit price ``f_i + L_i(delta, N C_i)`` and costs ``C_i w(C_i)`` times that,
where ``w = 1/rho`` for purchases and ``rho`` for sales.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GridMismatch, InfeasibleSpec, StockViolation
from .liqmodel import LiquiditySessionParams
from .midprice import PricePathSet
from .regression import RegressionConfig, make_regressor, regressor_from_dict

N_REGRESSORS = 4


@dataclass(frozen=True)
class BatterySpec:
    capacity: float = 2.0       # MWh
    rate: float = 1.0           # MWh per hour
    efficiency: float = 0.92
    initial: float = 0.0
    step: float = 0.1

    def __post_init__(self):
        if not 0 < self.efficiency <= 1:
            raise InfeasibleSpec("efficiency must lie in (0, 1]")
        if not self.capacity >= self.rate > 0:
            raise InfeasibleSpec("need capacity >= rate > 0")
        for name in ("capacity", "rate", "initial"):
            units = getattr(self, name) / self.step
            if abs(units - round(units)) > 1e-9:
                raise InfeasibleSpec(f"{name}={getattr(self, name)} is not a multiple of the {self.step} MWh grid")
        if not 0 <= self.initial <= self.capacity:
            raise InfeasibleSpec("initial stock outside [0, capacity]")

    @property
    def K(self) -> int:
        return int(round(self.capacity / self.step))

    @property
    def r(self) -> int:
        return int(round(self.rate / self.step))

    @property
    def s0(self) -> int:
        return int(round(self.initial / self.step))

    def controls(self, limit: int | None = None) -> np.ndarray:
        """Control units ordered by increasing magnitude (ties then prefer smaller trades)."""
        r = self.r if limit is None else limit
        u = np.arange(-r, r + 1)
        return u[np.lexsort((u, np.abs(u)))]

    def weight(self, c):
        c = np.asarray(c, dtype=float)
        return np.where(c >= 0, 1.0 / self.efficiency, self.efficiency)


@dataclass(frozen=True)
class ImpactSpec:
    n_batteries: int = 1
    liq: LiquiditySessionParams | None = None
    delta: float = 2.0
    grid_side: bool = False     # impact volume N C w(C) instead of N C

    def __post_init__(self):
        if self.n_batteries < 1:
            raise InfeasibleSpec("need at least one battery")

    def premium(self, m: int, tau: float, volume) -> np.ndarray:
        """Liquidity premium per MWh when each battery trades ``volume`` MWh of product ``m``."""
        volume = np.asarray(volume, dtype=float)
        if self.liq is None:
            return np.zeros(volume.shape)
        ml = self.liq[m]
        ml.check(tau)
        return ml.cost(tau, self.n_batteries * volume)

    def unit_cost(self, battery: BatterySpec, m: int, tau: float, units: np.ndarray) -> np.ndarray:
        """Premium for each control in ``units`` (storage-side, or grid-side if ``grid_side``)."""
        c = units * battery.step
        return self.premium(m, tau, c * battery.weight(c) if self.grid_side else c)


def _cash_table(battery: BatterySpec, impact: ImpactSpec, m: int, tau: float, units: np.ndarray):
    """Return (a, b) with cash(f) = a * f + b for every control."""
    c = units * battery.step
    cw = c * battery.weight(c)
    return -cw, -cw * impact.unit_cost(battery, m, tau, units)


# -- deterministic ---------------------------------------------------------------
@dataclass
class DeterministicResult:
    controls: np.ndarray        # MWh per product
    value: float


def optimize_deterministic(spot: Sequence[float], battery: BatterySpec, impact: ImpactSpec,
                           maturities: Sequence[int] | None = None) -> DeterministicResult:
    """Exact backward dynamic programming with prices fixed at ``spot``."""
    spot = np.asarray(spot, dtype=float)
    M = len(spot)
    mats = list(range(1, M + 1)) if maturities is None else list(maturities)
    K, units = battery.K, battery.controls()
    V = np.zeros((1, K + 1))
    best = np.zeros((M, K + 1), dtype=np.int64)
    for i in range(M - 1, -1, -1):
        a, b = _cash_table(battery, impact, mats[i], impact.delta, units)
        V, j = _maximize((a * spot[i] + b)[None, :], V, units, K)
        best[i] = units[j[0]]
    V = V[0]
    s = battery.s0
    ctl = np.zeros(M)
    for i in range(M):
        ctl[i] = best[i, s] * battery.step
        s += best[i, s]
    return DeterministicResult(ctl, float(V[battery.s0]))


def _maximize(cash: np.ndarray, cont: np.ndarray, units: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Best ``cash[:, j] + cont[:, S + u_j]`` over admissible controls for every stock level ``S``.

    ``units`` must be ordered by magnitude; a strict comparison then resolves
    ties in favour of the smaller trade.  Returns (value, control index).
    """
    n = cont.shape[0]
    best = np.full((n, K + 1), -np.inf)
    arg = np.zeros((n, K + 1), dtype=np.int64)
    for j, u in enumerate(units):
        lo, hi = max(0, -u), min(K, K - u)
        if lo > hi:
            continue
        cand = cash[:, j:j + 1] + cont[:, lo + u:hi + u + 1]
        view, aview = best[:, lo:hi + 1], arg[:, lo:hi + 1]
        better = cand > view
        np.copyto(view, cand, where=better)
        np.copyto(aview, j, where=better)
    return best, arg


def deterministic_value(controls: Sequence[float], spot: Sequence[float], battery: BatterySpec,
                        impact: ImpactSpec, maturities: Sequence[int] | None = None) -> float:
    """Objective of a fixed control vector at fixed prices (no feasibility check)."""
    controls = np.asarray(controls, dtype=float)
    mats = list(range(1, len(spot) + 1)) if maturities is None else list(maturities)
    total = 0.0
    for i, (c, f) in enumerate(zip(controls, spot)):
        u = np.array([int(round(c / battery.step))])
        a, b = _cash_table(battery, impact, mats[i], impact.delta, u)
        total += float(a[0] * f + b[0])
    return total


# -- policies ---------------------------------------------------------------------
class Policy:
    """Non-anticipative control rule for the one-index problem."""

    delta: float
    value: float

    def decide(self, i: int, stock_units: np.ndarray, prices: np.ndarray, battery: BatterySpec,
               impact: ImpactSpec) -> np.ndarray:
        """Control units for product ``i`` (1-based) given stock and prices of all products at T_i - delta."""
        raise NotImplementedError


@dataclass
class OpenLoopPolicy(Policy):
    controls: np.ndarray
    delta: float = 2.0
    value: float = math.nan

    def decide(self, i, stock_units, prices, battery, impact):
        u = int(round(self.controls[i - 1] / battery.step))
        return np.full(len(stock_units), u, dtype=np.int64)

    def to_dict(self) -> dict:
        return {"kind": "open_loop", "delta": self.delta, "value": self.value, "controls": list(map(float, self.controls))}


@dataclass
class RegressionPolicy(Policy):
    models: dict[int, object]               # product i -> continuation regressor (None for the last)
    maturities: tuple[int, ...]
    delta: float = 2.0
    value: float = math.nan
    meta: dict = field(default_factory=dict)

    def continuation(self, i: int, prices: np.ndarray, K: int) -> np.ndarray:
        model = self.models.get(i)
        if model is None:
            return np.zeros((len(prices), K + 1))
        return model.predict(_regressors(prices, self.maturities, i))

    def decide(self, i, stock_units, prices, battery, impact):
        prices = np.atleast_2d(prices)
        K, units = battery.K, battery.controls()
        cont = self.continuation(i, prices, K)
        a, b = _cash_table(battery, impact, i, self.delta, units)
        f = prices[:, self.maturities.index(i)]
        nxt = np.asarray(stock_units)[:, None] + units[None, :]
        ok = (nxt >= 0) & (nxt <= K)
        obj = np.where(ok, a * f[:, None] + b + np.take_along_axis(cont, np.clip(nxt, 0, K), axis=1), -np.inf)
        return units[np.argmax(obj, axis=1)]        # first maximum: smallest trade among ties

    def to_dict(self) -> dict:
        return {"kind": "regression", "delta": self.delta, "value": self.value, "maturities": list(self.maturities),
                "meta": self.meta,
                "hours": {str(i): (m.to_dict() if m is not None else None) for i, m in self.models.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionPolicy":
        models = {int(i): (regressor_from_dict(m) if m is not None else None) for i, m in d["hours"].items()}
        return cls(models, tuple(d["maturities"]), d["delta"], d["value"], d.get("meta", {}))


def save_policy(policy: Policy, path: str | Path) -> None:
    Path(path).write_text(json.dumps(policy.to_dict()))


def load_policy(path: str | Path) -> Policy:
    d = json.loads(Path(path).read_text())
    if d["kind"] == "open_loop":
        return OpenLoopPolicy(np.asarray(d["controls"]), d["delta"], d["value"])
    return RegressionPolicy.from_dict(d)


# -- path access -------------------------------------------------------------------
def _regressors(prices: np.ndarray, maturities: Sequence[int], i: int) -> np.ndarray:
    """Prices of the next (at most four) products after ``i``."""
    cols = [maturities.index(j) for j in range(i + 1, min(i + N_REGRESSORS, max(maturities)) + 1)]
    return prices[:, cols]


def decision_prices(paths: PricePathSet, times: Sequence[float]) -> np.ndarray:
    """Prices of every stored product at each time, shape (n_paths, len(times), n_products)."""
    try:
        idx = [paths.time_index(t) for t in times]
    except KeyError as exc:
        raise GridMismatch(str(exc)) from None
    return paths.values[:, idx, :]


def _check_paths(paths: PricePathSet, M: int) -> tuple[int, ...]:
    if tuple(paths.indices[:M]) != tuple(range(1, M + 1)):
        raise GridMismatch("paths must contain products 1..M")
    return tuple(paths.indices)


# -- stochastic one-index ---------------------------------------------------------------
def optimize_stochastic(paths: PricePathSet, battery: BatterySpec, impact: ImpactSpec,
                        cfg: RegressionConfig = RegressionConfig(), n_products: int | None = None) -> RegressionPolicy:
    """Backward regression Monte Carlo with realised cash flows carried along each path.

    At product ``i`` the continuation value of every stock level is regressed
    on the prices of products ``i+1 .. i+4`` observed at ``T_i - delta``.
    """
    M = n_products or len(paths.indices)
    mats = _check_paths(paths, M)
    times = [paths.maturities[mats.index(i)] - impact.delta for i in range(1, M + 1)]
    F = decision_prices(paths, times)
    n = F.shape[0]
    if M > 1 and not cfg.discrete:
        make_regressor(cfg, n, min(N_REGRESSORS, M - 1))
    K, units = battery.K, battery.controls()
    S = np.arange(K + 1)
    Y = np.zeros((n, K + 1))
    models: dict[int, object] = {}
    rows = np.arange(n)[:, None]
    for i in range(M, 0, -1):
        prices = F[:, i - 1, :]
        if i < M:
            X = _regressors(prices, mats, i)
            model = make_regressor(cfg, n, X.shape[1]).fit(X, Y)
            cont = model.predict(X)
        else:
            model, cont = None, np.zeros((n, K + 1))
        models[i] = model
        a, b = _cash_table(battery, impact, i, impact.delta, units)
        cash = a[None, :] * prices[:, mats.index(i)][:, None] + b[None, :]             # (n, nC)
        _, j = _maximize(cash, cont, units, K)
        Y = np.take_along_axis(cash, j, axis=1) + Y[rows, S[None, :] + units[j]]
    value = float(Y[:, battery.s0].mean())
    stderr = float(Y[:, battery.s0].std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return RegressionPolicy(models, mats, impact.delta, value,
                            {"n_paths": n, "stderr": stderr, "n_batteries": impact.n_batteries})


def policy_cashflows(policy: Policy, paths: PricePathSet, battery: BatterySpec, impact: ImpactSpec,
                     n_products: int | None = None) -> np.ndarray:
    """Per-path cash of ``policy`` run forward on ``paths``; checks admissibility along the way."""
    M = n_products or len(paths.indices)
    mats = _check_paths(paths, M)
    times = [paths.maturities[mats.index(i)] - policy.delta for i in range(1, M + 1)]
    F = decision_prices(paths, times)
    n = F.shape[0]
    stock = np.full(n, battery.s0, dtype=np.int64)
    total = np.zeros(n)
    units = battery.controls()
    for i in range(1, M + 1):
        prices = F[:, i - 1, :]
        u = np.asarray(policy.decide(i, stock, prices, battery, impact), dtype=np.int64)
        if np.any(np.abs(u) > battery.r):
            raise StockViolation(f"control beyond the rate limit at product {i}")
        stock = stock + u
        if np.any(stock < 0) or np.any(stock > battery.K):
            raise StockViolation(f"stock leaves [0, {battery.capacity}] at product {i}")
        a, b = _cash_table(battery, impact, i, policy.delta, units)
        jj = _index_of(units, u)
        total += a[jj] * prices[:, mats.index(i)] + b[jj]
    return total


def _index_of(units: np.ndarray, u: np.ndarray) -> np.ndarray:
    order = np.argsort(units)
    return order[np.searchsorted(units[order], u)]


def evaluate_policy(policy: Policy, paths: PricePathSet, battery: BatterySpec, impact: ImpactSpec,
                    n_products: int | None = None) -> float:
    """Average cash per battery of ``policy`` on (preferably fresh) ``paths``."""
    return float(policy_cashflows(policy, paths, battery, impact, n_products).mean())


# -- two-index problem -----------------------------------------------------------------
@dataclass
class TwoIndexResult:
    value: float
    stderr: float
    models: dict[int, object]
    first_model: object | None


def optimize_two_index(paths: PricePathSet, battery: BatterySpec, impact: ImpactSpec,
                       cfg: RegressionConfig = RegressionConfig(), n_products: int | None = None,
                       lead: float = 3.0, max_early: float | None = None) -> TwoIndexResult:
    """Trade each product both ``lead`` hours and ``delta`` hours before delivery.

    Trades are grid-side volumes.  Delivering ``C`` to the battery needs
    ``G = C w(C)`` MWh from the grid, of which ``q`` was bought at
    ``T_i - lead`` and ``G - q`` is bought at ``T_i - delta``.  The state at
    ``T_i - delta`` is (stock, q); the decision is ``C_i`` together with the
    early volume on product ``i + 1``, which trades at the same instant when
    ``lead = delta + 1``.  Without impact the early leg is a bet on a
    martingale and is worth nothing.  ``max_early=0`` gives back the
    one-index problem exactly.
    """
    M = n_products or len(paths.indices)
    mats = _check_paths(paths, M)
    T = [paths.maturities[mats.index(i)] for i in range(1, M + 1)]
    F2 = decision_prices(paths, [t - impact.delta for t in T])
    F3 = decision_prices(paths, [t - lead for t in T])
    n = F2.shape[0]
    K, units = battery.K, battery.controls()
    qmax = battery.r if max_early is None else int(round(max_early / battery.step))
    qs = np.arange(-qmax, qmax + 1)
    nQ = len(qs)
    if not cfg.discrete:
        make_regressor(cfg, n, min(N_REGRESSORS, M))
    S = np.arange(K + 1)
    c = units * battery.step
    w = battery.weight(c)
    G = c * w
    scale = np.ones_like(w) if impact.grid_side else 1.0 / w
    rows = np.arange(n)[:, None]
    Y = np.zeros((n, K + 1, nQ))
    models: dict[int, object] = {}
    for i in range(M, 0, -1):
        f2 = F2[:, i - 1, mats.index(i)]
        f3 = F3[:, i - 1, mats.index(i)]
        if i < M:
            X = _regressors(F2[:, i - 1, :], mats, i)
            model = make_regressor(cfg, n, X.shape[1]).fit(X, Y)
            cont = model.predict(X)                                   # (n, nS, nQ)
            # q' = 0 sits in the middle; ordering by |q| breaks ties towards no early trade
            qorder = np.argsort(np.abs(qs), kind="stable")
            pick = np.argmax(cont[:, :, qorder], axis=2)
            qstar = qorder[pick]
            H = np.take_along_axis(cont, qstar[:, :, None], axis=2)[:, :, 0]
        else:
            model = None
            H = np.zeros((n, K + 1))
            qstar = np.full((n, K + 1), qmax)
        models[i] = model
        Ynew = np.empty((n, K + 1, nQ))
        early_cost = impact.premium(i, lead, qs * battery.step)
        for k, q in enumerate(qs * battery.step):
            late = G - q
            late_cost = impact.premium(i, impact.delta, late * scale)
            cash = -q * (f3[:, None] + early_cost[k]) - late[None, :] * (f2[:, None] + late_cost[None, :])
            _, j = _maximize(cash, H, units, K)
            s_next = S[None, :] + units[j]
            Ynew[:, :, k] = np.take_along_axis(cash, j, axis=1) + Y[rows, s_next, np.take_along_axis(qstar, s_next, axis=1)]
        Y = Ynew
    # first early trade, at T_1 - lead
    X0 = _regressors(F3[:, 0, :], mats, 0)
    first = make_regressor(cfg, n, X0.shape[1]).fit(X0, Y[:, battery.s0, :])
    qorder = np.argsort(np.abs(qs), kind="stable")
    q1 = qorder[np.argmax(first.predict(X0)[:, qorder], axis=1)]
    v = Y[np.arange(n), battery.s0, q1]
    return TwoIndexResult(float(v.mean()), float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0, models, first)


# -- reporting -----------------------------------------------------------------------
MODELS = ("det_depth", "det_no_depth", "sto_depth", "sto_no_depth")


def write_report(path: str | Path, rows: Sequence[tuple[str, int, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("model", "n_batteries", "value"))
        for model, nb, value in rows:
            w.writerow((model, nb, f"{value:.6f}"))


def write_two_index_report(path: str | Path, rows: Sequence[tuple[int, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("n_batteries", "gain_one_index", "gain_two_index"))
        for nb, one, two in rows:
            w.writerow((nb, f"{one:.6f}", f"{two:.6f}"))
