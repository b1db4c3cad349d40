"""Linear-jump liquidity cost model and its calibration on order-book snapshots.

On each side the cost per MWh above (below) the mid is ``A(tau)|x| + B(tau)``
where ``tau`` is the time to maturity in hours, ``A`` is linear in ``tau`` and
``B`` is exponential in ``tau``.  Slopes ``alpha_A``/``alpha_B`` are stored
multiplied by the session length (the reference table convention) and divided
back out on evaluation.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from . import lob
from .errors import (
    DegenerateDesign,
    InsufficientWindows,
    NegativeCoefficient,
    TooFewPoints,
)

TABLE_COLUMNS = (
    "alpha_A_plus_T", "beta_A_plus", "alpha_B_plus_T", "beta_B_plus",
    "alpha_A_minus_T", "beta_A_minus", "alpha_B_minus_T", "beta_B_minus",
)


class PointRule(str, Enum):
    """Where each step of the stepwise curve is placed in the regression.

    MIDPOINT uses the centre of each step, LEFT_ENDPOINT pairs the cumulative
    volume at the end of a level with that level's value (low intercept), and
    RIGHT_ENDPOINT pairs the cumulative volume reached before a level with that
    level's value (high intercept).
    """

    MIDPOINT = "midpoint"
    LEFT_ENDPOINT = "left_endpoint"
    RIGHT_ENDPOINT = "right_endpoint"


@dataclass(frozen=True)
class SideCoefficients:
    alpha_A: float
    beta_A: float
    alpha_B: float
    beta_B: float


@dataclass(frozen=True)
class MaturityLiquidity:
    plus: SideCoefficients
    minus: SideCoefficients
    session_hours: float

    def _side(self, sign: int) -> SideCoefficients:
        return self.plus if sign > 0 else self.minus

    def slope(self, sign: int, tau):
        c = self._side(sign)
        return c.alpha_A / self.session_hours * np.asarray(tau, dtype=float) + c.beta_A

    def jump(self, sign: int, tau):
        c = self._side(sign)
        return np.exp(c.alpha_B / self.session_hours * np.asarray(tau, dtype=float) + c.beta_B)

    def check(self, tau: float) -> None:
        for sign in (1, -1):
            if self.slope(sign, tau) < 0 or self.jump(sign, tau) < 0:
                raise NegativeCoefficient(f"negative liquidity coefficient at tau={tau}")

    def cost(self, tau: float, x):
        """Liquidity cost per MWh of a signed trade ``x`` (vectorised over ``x``)."""
        x = np.asarray(x, dtype=float)
        buy = self.slope(1, tau) * x + self.jump(1, tau)
        sell = self.slope(-1, tau) * x - self.jump(-1, tau)
        return np.where(x > 0, buy, np.where(x < 0, sell, 0.0))

    def spread(self, tau: float) -> float:
        return float(self.jump(1, tau) + self.jump(-1, tau))


@dataclass(frozen=True)
class LiquiditySessionParams:
    """Liquidity coefficients for a set of maturities (index 1..24)."""

    by_maturity: Mapping[int, MaturityLiquidity]

    def __getitem__(self, m: int) -> MaturityLiquidity:
        return self.by_maturity[m]

    def __contains__(self, m: int) -> bool:
        return m in self.by_maturity

    @property
    def maturities(self) -> list[int]:
        return sorted(self.by_maturity)

    @classmethod
    def from_table_row(cls, row: Sequence[float], maturities: Iterable[int] = range(1, 25)):
        """Apply one reference row (eight numbers in table column order) to every maturity."""
        plus = SideCoefficients(*row[:4])
        minus = SideCoefficients(*row[4:])
        return cls({m: MaturityLiquidity(plus, minus, lob.session_hours(m)) for m in maturities})

    @classmethod
    def constant(cls, A_plus: float, B_plus: float, A_minus: float, B_minus: float,
                 maturities: Iterable[int] = range(1, 25)):
        """Time-independent coefficients, mostly for tests and toy problems."""
        lg = lambda b: math.log(b) if b > 0 else -math.inf
        plus = SideCoefficients(0.0, A_plus, 0.0, lg(B_plus))
        minus = SideCoefficients(0.0, A_minus, 0.0, lg(B_minus))
        return cls({m: MaturityLiquidity(plus, minus, lob.session_hours(m)) for m in maturities})

    def to_records(self) -> list[dict]:
        out = []
        for m in self.maturities:
            ml = self[m]
            for side, c in (("plus", ml.plus), ("minus", ml.minus)):
                out.append({"maturity": m, "side": side, **asdict(c), "session_hours": ml.session_hours})
        return out

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> "LiquiditySessionParams":
        sides: dict[int, dict] = defaultdict(dict)
        for r in records:
            sides[int(r["maturity"])][r["side"]] = r
        by_m = {}
        for m, d in sides.items():
            coef = {s: SideCoefficients(*(float(d[s][k]) for k in ("alpha_A", "beta_A", "alpha_B", "beta_B")))
                    for s in ("plus", "minus")}
            by_m[m] = MaturityLiquidity(coef["plus"], coef["minus"], float(d["plus"]["session_hours"]))
        return cls(by_m)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_records(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "LiquiditySessionParams":
        return cls.from_records(json.loads(Path(path).read_text()))

    def write_table(self, path: str | Path) -> None:
        """CSV with one row per maturity in the reference column layout, plus the average row."""
        rows = []
        for m in self.maturities:
            ml = self[m]
            rows.append([m, ml.plus.alpha_A, ml.plus.beta_A, ml.plus.alpha_B, ml.plus.beta_B,
                         ml.minus.alpha_A, ml.minus.beta_A, ml.minus.alpha_B, ml.minus.beta_B])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("maturity",) + TABLE_COLUMNS)
            for r in rows:
                w.writerow([r[0]] + [f"{v:.4f}" for v in r[1:]])
            if rows:
                w.writerow(["mean"] + [f"{v:.4f}" for v in np.mean([r[1:] for r in rows], axis=0)])


def eval_cost(params: LiquiditySessionParams, m: int, tau: float, x: float) -> float:
    ml = params[m]
    ml.check(tau)
    return float(ml.cost(tau, x))


def spread(params: LiquiditySessionParams, m: int, tau: float) -> float:
    return params[m].spread(tau)


# -- constrained least squares ------------------------------------------------------
def constrained_lstsq(X: np.ndarray, y: np.ndarray, nonneg: Sequence[bool]) -> tuple[np.ndarray, float]:
    """Least squares with sign constraints on a handful of coefficients.

    Enumerates every active set of the constrained coordinates, which is exact
    for the two or three unknowns used here.  Among equally good solutions the
    one with more coefficients pinned at zero wins, earlier coordinates first.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    constrained = [j for j in range(p) if nonneg[j]]
    candidates = []
    for r in range(len(constrained) + 1):
        for pinned in itertools.combinations(constrained, r):
            free = [j for j in range(p) if j not in pinned]
            coef = np.zeros(p)
            if free:
                coef[free] = np.linalg.lstsq(X[:, free], y, rcond=None)[0]
            if any(coef[j] < 0 for j in constrained):
                continue
            candidates.append((float(np.sum((X @ coef - y) ** 2)), -len(pinned), pinned, coef))
    lowest = min(c[0] for c in candidates)
    tied = [c for c in candidates if c[0] <= lowest + 1e-12 * (1.0 + lowest)]
    obj, _, _, coef = min(tied, key=lambda c: (c[1], c[2]))
    return coef, obj


# -- per-snapshot regression ----------------------------------------------------------
@dataclass(frozen=True)
class SnapshotFit:
    A_plus: float
    A_minus: float
    B_plus: float
    B_minus: float
    t: float
    n_points: int
    objective: float = 0.0


def regression_points(snapshot: lob.OrderBookSnapshot, sign: int, K: float,
                      rule: PointRule | str = PointRule.MIDPOINT) -> tuple[np.ndarray, np.ndarray]:
    """Absolute volumes and absolute stepwise costs used to fit one side."""
    rule = PointRule(rule)
    cum, step = lob.step_values(snapshot, sign)
    keep = cum <= K * (1 + 1e-12)
    prev = np.concatenate([[0.0], cum[:-1]])
    if rule is PointRule.MIDPOINT:
        u = 0.5 * (prev + cum)
    elif rule is PointRule.LEFT_ENDPOINT:
        u = cum
    else:
        u = prev
    return u[keep], step[keep]


def _fit_side(u: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    if len(u) >= 2 and np.ptp(u) == 0:
        raise DegenerateDesign("all regression volumes coincide")
    if len(u) == 1:
        b = max(float(y[0]), 0.0)
        return 0.0, b, float((y[0] - b) ** 2)
    return _nonneg_line(u, y)


def _nonneg_line(u: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Closed-form least squares of ``y ~ A u + B`` with ``A, B >= 0``.

    Same answer and tie-break as ``constrained_lstsq`` for this two-column design.
    """
    ub, yb = u.mean(), y.mean()
    du = u - ub
    a = float(du @ (y - yb) / (du @ du))
    b = float(yb - a * ub)
    if a >= 0 and b >= 0:
        return a, b, float(np.sum((a * u + b - y) ** 2))
    cands = [(0.0, 0.0)]
    if yb >= 0:
        cands.append((0.0, float(yb)))
    uy = float(u @ y)
    if uy >= 0:
        cands.append((uy / float(u @ u), 0.0))
    objs = [float(np.sum((ca * u + cb - y) ** 2)) for ca, cb in cands]
    lowest = min(objs)
    for (ca, cb), o in zip(cands, objs):
        if o <= lowest + 1e-12 * (1.0 + lowest):
            return ca, cb, o


def fit_snapshot(snapshot: lob.OrderBookSnapshot, K: float, rule: PointRule | str = PointRule.MIDPOINT,
                 min_levels: int = 1, common_spread: bool = False) -> SnapshotFit:
    """Nonnegative fit of slope and half-spread on both sides of one snapshot.

    ``min_levels`` is the minimum number of levels inside the volume window on
    each side; the temporal studies use 5.
    """
    pts = {}
    for sign in (1, -1):
        u, y = regression_points(snapshot, sign, K, rule)
        if len(u) < max(min_levels, 1):
            raise TooFewPoints(f"{len(u)} levels within {K} MWh on side {sign:+d} at t={snapshot.t}")
        pts[sign] = (u, y)
    n = len(pts[1][0]) + len(pts[-1][0])
    if common_spread:
        (up, yp), (um, ym) = pts[1], pts[-1]
        X = np.zeros((n, 3))
        X[: len(up), 0] = up
        X[len(up):, 1] = um
        X[:, 2] = 1.0
        coef, obj = constrained_lstsq(X, np.concatenate([yp, ym]), [True, True, True])
        return SnapshotFit(coef[0], coef[1], coef[2], coef[2], snapshot.t, n, obj)
    a_p, b_p, o_p = _fit_side(*pts[1])
    a_m, b_m, o_m = _fit_side(*pts[-1])
    return SnapshotFit(a_p, a_m, b_p, b_m, snapshot.t, n, o_p + o_m)


def fit_stream(snapshots: Iterable[lob.OrderBookSnapshot], K: float, rule=PointRule.MIDPOINT,
               min_levels: int = 1, tau_window: tuple[float, float] | None = None) -> list[SnapshotFit]:
    """Per-snapshot fits of a session, skipping snapshots that are too thin to fit."""
    fits = []
    for snap in snapshots:
        if tau_window and not (tau_window[0] <= snap.t <= tau_window[1]):
            continue
        try:
            fits.append(fit_snapshot(snap, K, rule, min_levels))
        except (TooFewPoints, lob.EmptySide):
            continue
    return fits


# -- time structure ---------------------------------------------------------------
def _time_regression(tau: np.ndarray, A: np.ndarray, B: np.ndarray) -> SideCoefficients:
    X = np.column_stack([tau, np.ones_like(tau)])
    (alpha_A, beta_A), _ = constrained_lstsq(X, A, [True, True])
    pos = B > 0
    if np.unique(tau[pos]).size < 2:
        raise InsufficientWindows("need positive half-spreads at two distinct times")
    (alpha_B, beta_B), _ = constrained_lstsq(X[pos], np.log(B[pos]), [True, False])
    return SideCoefficients(alpha_A, beta_A, alpha_B, beta_B)


def _normalise(c: SideCoefficients, hours: float) -> SideCoefficients:
    return SideCoefficients(c.alpha_A * hours, c.beta_A, c.alpha_B * hours, c.beta_B)


def fit_session(fits: Sequence[SnapshotFit], session_hours: float, window_minutes: float = 10.0,
                tau_window: tuple[float, float] | None = None) -> MaturityLiquidity:
    """Average snapshot fits per time window, then fit the linear / exponential time structure."""
    groups: dict[int, list[SnapshotFit]] = defaultdict(list)
    for f in fits:
        if tau_window and not (tau_window[0] <= f.t <= tau_window[1]):
            continue
        groups[int(math.floor(f.t * 60.0 / window_minutes + 1e-9))].append(f)
    if len(groups) < 2:
        raise InsufficientWindows(f"{len(groups)} non-empty windows")
    rows = np.array([[np.mean([getattr(f, k) for f in g]) for k in ("t", "A_plus", "A_minus", "B_plus", "B_minus")]
                     for _, g in sorted(groups.items())])
    tau = rows[:, 0]
    if np.unique(tau).size < 2:
        raise InsufficientWindows("all windows at a single time to maturity")
    plus = _time_regression(tau, rows[:, 1], rows[:, 3])
    minus = _time_regression(tau, rows[:, 2], rows[:, 4])
    return MaturityLiquidity(_normalise(plus, session_hours), _normalise(minus, session_hours), session_hours)


def fit_pooled(sessions: Sequence[Sequence[lob.OrderBookSnapshot]], K: float, session_hours: float,
               rule: PointRule | str = PointRule.MIDPOINT,
               tau_window: tuple[float, float] | None = None) -> MaturityLiquidity:
    """Joint fit of the time-structured model on every snapshot of every session.

    Slope parameters and ``alpha_B`` are kept nonnegative, ``beta_B`` is free.
    """
    sides = {}
    for sign in (1, -1):
        taus, us, ys, per_snap = [], [], [], []
        for stream in sessions:
            for snap in stream:
                if tau_window and not (tau_window[0] <= snap.t <= tau_window[1]):
                    continue
                try:
                    u, y = regression_points(snap, sign, K, rule)
                except lob.EmptySide:
                    continue
                if len(u) == 0:
                    continue
                taus.append(np.full(len(u), snap.t))
                us.append(u)
                ys.append(y)
                a, b, _ = _fit_side(u, y)
                per_snap.append((snap.t, a, b))
        if not per_snap:
            raise TooFewPoints(f"no levels within {K} MWh on side {sign:+d}")
        tau, u, y = np.concatenate(taus), np.concatenate(us), np.concatenate(ys)
        sides[sign] = _pooled_side(tau, u, y, np.array(per_snap))
    return MaturityLiquidity(_normalise(sides[1], session_hours), _normalise(sides[-1], session_hours), session_hours)


def _pooled_side(tau, u, y, per_snap) -> SideCoefficients:
    single_time = np.ptp(tau) == 0
    st, sa, sb = per_snap.T
    X = np.column_stack([st, np.ones_like(st)])
    if single_time:
        A0, B0 = float(np.mean(sa)), float(np.mean(sb))
        x0 = np.array([0.0, A0, 0.0, math.log(max(B0, 1e-12))])
    else:
        (aa, ba), _ = constrained_lstsq(X, sa, [True, True])
        pos = sb > 0
        if np.unique(st[pos]).size >= 2:
            (ab, bb), _ = constrained_lstsq(X[pos], np.log(sb[pos]), [True, False])
        else:
            ab, bb = 0.0, math.log(max(float(np.mean(sb)), 1e-12))
        x0 = np.array([aa, ba, ab, bb])

    def resid(p):
        return (p[0] * tau + p[1]) * u + np.exp(p[2] * tau + p[3]) - y

    def jac(p):
        e = np.exp(p[2] * tau + p[3])
        return np.column_stack([tau * u, u, tau * e, e])

    if single_time:
        # time slopes are not identified from one instant: keep them at zero
        sub = least_squares(lambda q: resid([0.0, q[0], 0.0, q[1]]), x0[[1, 3]],
                            jac=lambda q: jac([0.0, q[0], 0.0, q[1]])[:, [1, 3]],
                            bounds=([0.0, -np.inf], [np.inf, np.inf]), xtol=1e-15, ftol=1e-15, gtol=1e-15)
        return SideCoefficients(0.0, float(sub.x[0]), 0.0, float(sub.x[1]))
    x0 = np.maximum(x0, [0.0, 0.0, 0.0, -np.inf])
    res = least_squares(resid, x0, jac=jac, bounds=([0.0, 0.0, 0.0, -np.inf], [np.inf] * 4),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    best = res.x if res.cost <= 0.5 * np.sum(resid(x0) ** 2) else x0
    return SideCoefficients(*(float(v) for v in best))
