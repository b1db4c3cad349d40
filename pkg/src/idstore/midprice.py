"""Common-shock compound Poisson model for the mid-prices of the 24 hourly products.

Each maturity ``T_m`` carries an idiosyncratic pair of (up, down) compound
Poisson processes with intensity ``mu * exp(-kappa (T_m - t))`` and each index
``j`` carries a common pair that moves every maturity ``m <= j`` by the same
amount.  Prices are frozen after their own maturity.

Up and down processes of a pair share the same intensity and jump law, so a
pair is simulated as one process with twice the intensity and a fair random
sign.  When only a subset of maturities is requested, the common processes
lying between two selected maturities are merged into one block: their
intensities telescope, so the simulation stays exact.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import EmptyJumpLaw, EmptySample, InconsistentKappa, NoJumpsObserved, SameMaturity
from .lob import SESSION_OPEN

DEFAULT_MATURITIES = tuple(float(h) for h in range(24))


# -- parameters ------------------------------------------------------------------
@dataclass(frozen=True)
class JumpLawStats:
    m1: float
    m2: float


def jump_law_stats(nu: Iterable[float]) -> JumpLawStats:
    y = np.abs(np.asarray(list(nu) if not isinstance(nu, np.ndarray) else nu, dtype=float))
    if y.size == 0:
        raise EmptySample("jump-size sample is empty")
    return JumpLawStats(float(np.mean(y)), float(np.mean(y * y)))


def power_jump_law(m1: float, m2: float, n: int = 1000) -> np.ndarray:
    """Deterministic ``n``-point jump law ``b u^g`` matching the two moments exactly.

    ``u`` runs over the midpoints ``(j - 1/2)/n``.  The shape ``g`` fixes the
    ratio ``m2/m1^2`` and the scale ``b`` fixes ``m1``.
    """
    if m1 <= 0 or m2 < m1 * m1 * (1 - 1e-12):
        raise ValueError("need m1 > 0 and m2 >= m1^2")
    u = (np.arange(n) + 0.5) / n
    target = m2 / (m1 * m1)

    def ratio(g):
        p = u ** g
        return np.mean(p * p) / np.mean(p) ** 2 - target

    if ratio(0.0) >= 0:
        return np.full(n, m1)
    hi = 1.0
    while ratio(hi) < 0:
        hi *= 2.0
        if hi > 1e4:
            raise ValueError("moment ratio too large for the power family")
    g = brentq(ratio, 0.0, hi, xtol=1e-14, rtol=1e-15)
    p = u ** g
    return m1 * p / np.mean(p)


@dataclass(frozen=True)
class MidPriceParams:
    kappa: float
    mu: float
    mu_c: float
    jump_sizes: np.ndarray = field(compare=False)
    maturities: tuple[float, ...] = DEFAULT_MATURITIES
    t0: float = SESSION_OPEN

    def __post_init__(self):
        sizes = np.abs(np.asarray(self.jump_sizes, dtype=float)).ravel()
        if sizes.size == 0:
            raise EmptyJumpLaw("the jump law needs at least one size")
        if not np.all(np.isfinite(sizes)):
            raise EmptyJumpLaw("jump sizes must be finite")
        object.__setattr__(self, "jump_sizes", sizes)
        object.__setattr__(self, "maturities", tuple(float(t) for t in self.maturities))
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.mu < 0 or self.mu_c < 0:
            raise ValueError("intensities must be non-negative")
        if any(b <= a for a, b in zip(self.maturities, self.maturities[1:])):
            raise ValueError("maturities must be strictly increasing")
        if self.t0 > self.maturities[0]:
            raise ValueError("session opens after the first maturity")

    @classmethod
    def from_moments(cls, kappa, mu, mu_c, m1, m2, n_sizes: int = 1000, **kw) -> "MidPriceParams":
        return cls(kappa, mu, mu_c, power_jump_law(m1, m2, n_sizes), **kw)

    @property
    def M(self) -> int:
        return len(self.maturities)

    @property
    def stats(self) -> JumpLawStats:
        return jump_law_stats(self.jump_sizes)

    def T(self, m: int) -> float:
        """Delivery time of the 1-based maturity index ``m``."""
        return self.maturities[m - 1]

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "mu": self.mu, "mu_c": self.mu_c,
                "jump_sizes": self.jump_sizes.tolist(), "maturities": list(self.maturities), "t0": self.t0}

    @classmethod
    def from_dict(cls, d: dict) -> "MidPriceParams":
        return cls(float(d["kappa"]), float(d["mu"]), float(d["mu_c"]), np.asarray(d["jump_sizes"], dtype=float),
                   tuple(d.get("maturities", DEFAULT_MATURITIES)), float(d.get("t0", SESSION_OPEN)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "MidPriceParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- closed forms ------------------------------------------------------------------
def change_intensity(params: MidPriceParams, m: int, t: float) -> float:
    T = params.T(m)
    if t > T:
        return 0.0
    return 2.0 * (params.mu + params.mu_c) * math.exp(-params.kappa * (T - t))


def theoretical_vol(params: MidPriceParams, m: int, t: float) -> tuple[float, float]:
    """Instantaneous variance rate at ``t`` and the long-horizon integrated volatility."""
    m2 = params.stats.m2
    s2 = m2 * change_intensity(params, m, t)
    s_inf = math.sqrt(2.0 * m2 * (params.mu + params.mu_c) / params.kappa)
    return s2, s_inf


def integrated_variance(params: MidPriceParams, m: int, start: float | None = None,
                        end: float | None = None) -> float:
    """Integral of the variance rate of maturity ``m`` over ``[start, end]`` (clamped at T_m)."""
    T = params.T(m)
    a = params.t0 if start is None else start
    b = T if end is None else min(end, T)
    if b <= a:
        return 0.0
    k = params.kappa
    return 2.0 * params.stats.m2 * (params.mu + params.mu_c) / k * (math.exp(-k * (T - b)) - math.exp(-k * (T - a)))


def theoretical_corr(params: MidPriceParams, l: int, k: int) -> float:
    if l == k:
        raise SameMaturity("correlation needs two distinct maturities")
    total = params.mu + params.mu_c
    if total == 0:
        return 0.0
    return params.mu_c / total * math.exp(-0.5 * params.kappa * abs(params.T(l) - params.T(k)))


# -- process layout --------------------------------------------------------------------
@dataclass(frozen=True)
class _Process:
    """A (merged) pair with intensity ``2 * amp * exp(-kappa (ref - s))`` on ``s <= ref``."""

    amp: float
    ref: float
    targets: tuple[int, ...]

    def cum(self, kappa: float, a, b):
        """Expected number of jumps (both signs) on ``[a, b]``."""
        a = np.minimum(a, self.ref)
        b = np.minimum(b, self.ref)
        return 2.0 * self.amp / kappa * (np.exp(-kappa * (self.ref - b)) - np.exp(-kappa * (self.ref - a)))

    def invert(self, kappa: float, a: float, lam):
        """Time at which the cumulative expected count from ``a`` reaches ``lam``."""
        base = math.exp(-kappa * (self.ref - min(a, self.ref)))
        return self.ref + np.log(base + kappa * lam / (2.0 * self.amp)) / kappa


def _select(params: MidPriceParams, maturities: Sequence[int] | None) -> list[int]:
    if maturities is None:
        return list(range(1, params.M + 1))
    sel = sorted(set(int(m) for m in maturities))
    if not sel or sel[0] < 1 or sel[-1] > params.M:
        raise ValueError(f"maturity indices must lie in 1..{params.M}")
    return sel


def _layout(params: MidPriceParams, sel: list[int]) -> tuple[list[_Process], list[_Process]]:
    """Idiosyncratic processes and merged common blocks for the selected maturities."""
    T = [params.T(m) for m in sel]
    k = params.kappa
    idio = [_Process(params.mu, T[q], (q,)) for q in range(len(sel))]
    common = []
    for q in range(len(sel)):
        if q + 1 < len(sel):
            amp = params.mu_c * (1.0 - math.exp(-k * (T[q + 1] - T[q])))
        else:
            amp = params.mu_c
        common.append(_Process(amp, T[q], tuple(range(q + 1))))
    return idio, common


# -- grid simulation ----------------------------------------------------------------
@dataclass
class PricePathSet:
    grid: np.ndarray            # clock hours
    values: np.ndarray          # (n_paths, n_grid, n_maturities)
    f0: np.ndarray              # initial prices of the stored maturities
    maturities: np.ndarray      # delivery hours of the stored maturities
    indices: tuple[int, ...]    # 1-based maturity indices
    seed: int | None = None

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def col(self, m: int) -> int:
        return self.indices.index(m)

    def time_index(self, t: float) -> int:
        i = int(np.searchsorted(self.grid, t - 1e-9))
        if i >= len(self.grid) or abs(self.grid[i] - t) > 1e-9:
            raise KeyError(f"time {t} is not on the grid")
        return i

    def prices(self, m: int, t: float) -> np.ndarray:
        return self.values[:, self.time_index(t), self.col(m)]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("path", "maturity", "t", "price"))
            for p in range(self.n_paths):
                for j, m in enumerate(self.indices):
                    for g, t in enumerate(self.grid):
                        w.writerow((p, m, repr(float(t)), repr(float(self.values[p, g, j]))))

    @classmethod
    def from_csv(cls, path: str | Path) -> "PricePathSet":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        paths = np.unique(data[:, 0]).astype(int)
        mats = np.unique(data[:, 1]).astype(int)
        grid = np.unique(data[:, 2])
        vals = np.empty((len(paths), len(grid), len(mats)))
        vals[data[:, 0].astype(int), np.searchsorted(grid, data[:, 2]), np.searchsorted(mats, data[:, 1])] = data[:, 3]
        return cls(grid, vals, vals[0, 0].copy(), mats.astype(float) - 1.0, tuple(int(m) for m in mats))


def _initial(f0, n: int, sel: list[int], M: int) -> np.ndarray:
    f0 = np.asarray(f0, dtype=float)
    if f0.ndim == 0:
        return np.full(n, float(f0))
    if f0.size == M:
        return f0[np.asarray(sel) - 1].copy()
    if f0.size == n:
        return f0.copy()
    raise ValueError(f"expected {n} or {M} initial prices, got {f0.size}")


def simulate(params: MidPriceParams, f0, grid: Sequence[float], n_paths: int, seed: int | None = None,
             maturities: Sequence[int] | None = None, start: float | None = None,
             backend: str = "jump", chunk_jumps: int = 4_000_000) -> PricePathSet:
    """Simulate mid-price paths sampled on ``grid`` (clock hours).

    ``f0`` holds prices at ``start`` (default: session open).  ``backend="diffusion"``
    replaces every compound Poisson increment by a Gaussian with the same variance.
    """
    sel = _select(params, maturities)
    start = params.t0 if start is None else float(start)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be a non-empty increasing sequence")
    if grid[0] < start - 1e-12 or grid[-1] > params.maturities[-1] + 1e-12:
        raise ValueError("grid must lie inside [start, T_M]")
    if backend not in ("jump", "diffusion"):
        raise ValueError(f"unknown backend {backend!r}")
    nq = len(sel)
    Tsel = np.array([params.T(m) for m in sel])
    f0v = _initial(f0, nq, sel, params.M)

    # evaluation times: the grid plus every maturity inside it, so no interval straddles a freeze
    cut = np.concatenate([[start], grid, Tsel[(Tsel > start) & (Tsel < grid[-1])]])
    evals = np.unique(np.round(cut, 12))
    lo, hi = evals[:-1], evals[1:]
    idio, common = _layout(params, sel)
    procs = idio + common
    lam = np.array([p.cum(params.kappa, lo, hi) for p in procs])        # (P, K)
    alive = (hi[None, :] <= Tsel[:, None] + 1e-12).astype(float)         # (Q, K)
    gidx = np.searchsorted(evals, np.round(grid, 12))

    sizes = params.jump_sizes
    m2 = float(np.mean(sizes ** 2))
    signed = np.concatenate([sizes, -sizes])
    per_path = max(float(lam.sum()), 1.0)
    chunk = max(1, min(n_paths, int(chunk_jumps / per_path)))
    starts = list(range(0, n_paths, chunk))
    streams = np.random.SeedSequence(seed).spawn(len(starts))
    out = np.empty((n_paths, len(grid), nq))
    for s0, ss in zip(starts, streams):
        rng = np.random.default_rng(ss)
        n = min(chunk, n_paths - s0)
        if backend == "jump":
            counts = rng.poisson(np.broadcast_to(lam, (n,) + lam.shape))
            flat = counts.ravel()
            total = int(flat.sum())
            incr = np.zeros(flat.size)
            if total:
                draws = signed[rng.integers(0, signed.size, total)]
                nz = np.flatnonzero(flat)
                offs = np.concatenate([[0], np.cumsum(flat[nz])[:-1]])
                incr[nz] = np.add.reduceat(draws, offs)
            incr = incr.reshape(counts.shape)
        else:
            incr = rng.standard_normal((n,) + lam.shape) * np.sqrt(m2 * lam)
        d_idio = incr[:, :nq, :]
        d_common = np.cumsum(incr[:, nq:, :][:, ::-1, :], axis=1)[:, ::-1, :]   # blocks p >= q
        d = (d_idio + d_common) * alive[None]
        path = np.concatenate([np.zeros((n, nq, 1)), np.cumsum(d, axis=2)], axis=2)
        out[s0:s0 + n] = (path[:, :, gidx] + f0v[None, :, None]).transpose(0, 2, 1)
    return PricePathSet(grid, out, f0v, Tsel, tuple(sel), seed)


# -- event-level simulation ---------------------------------------------------------
@dataclass
class EventPaths:
    """Jump times and signed sizes per maturity for ``n_paths`` independent sessions."""

    n_paths: int
    indices: tuple[int, ...]
    maturities: np.ndarray
    windows: np.ndarray                 # (Q, 2) clock-time observation windows
    path: list[np.ndarray]
    time: list[np.ndarray]
    size: list[np.ndarray]
    common: list[np.ndarray]            # True where the jump is a common shock

    def series(self, p: int, f0, start: float | None = None) -> list["MidPriceSeries"]:
        """Event-time mid-price series of path ``p``, starting at the window start."""
        f0v = np.broadcast_to(np.asarray(f0, dtype=float), (len(self.indices),))
        out = []
        for q, T in enumerate(self.maturities):
            lo, hi = np.searchsorted(self.path[q], [p, p + 1])
            t = self.time[q][lo:hi]
            x = self.size[q][lo:hi]
            t_open = self.windows[q, 0] if start is None else start
            out.append(MidPriceSeries(float(T), np.concatenate([[t_open], t]),
                                      f0v[q] + np.concatenate([[0.0], np.cumsum(x)])))
        return out

    def counts(self, q: int) -> np.ndarray:
        return np.bincount(self.path[q], minlength=self.n_paths)


def simulate_events(params: MidPriceParams, n_paths: int, seed: int | None = None,
                    maturities: Sequence[int] | None = None, window: tuple[float, float] | None = None,
                    tau_window: tuple[float, float] | None = None) -> EventPaths:
    """Exact jump times by inversion of the cumulative intensities.

    ``window`` restricts clock time; ``tau_window=(lo, hi)`` keeps, for each
    maturity, only jumps with time to maturity in ``[lo, hi]``.
    """
    sel = _select(params, maturities)
    nq = len(sel)
    Tsel = np.array([params.T(m) for m in sel])
    win = np.column_stack([np.full(nq, params.t0), Tsel])
    if window is not None:
        win[:, 0] = np.maximum(win[:, 0], window[0])
        win[:, 1] = np.minimum(win[:, 1], window[1])
    if tau_window is not None:
        win[:, 0] = np.maximum(win[:, 0], Tsel - tau_window[1])
        win[:, 1] = np.minimum(win[:, 1], Tsel - tau_window[0])
    idio, common = _layout(params, sel)
    rng = np.random.default_rng(seed)
    sizes = params.jump_sizes
    parts: list[list[tuple]] = [[] for _ in range(nq)]
    for proc, is_common in [(p, False) for p in idio] + [(p, True) for p in common]:
        tg = list(proc.targets)
        a = float(win[tg, 0].min())
        b = float(min(win[tg, 1].max(), proc.ref))
        if b <= a or proc.amp == 0:
            continue
        total = float(proc.cum(params.kappa, a, b))
        counts = rng.poisson(total, n_paths)
        n = int(counts.sum())
        if n == 0:
            continue
        pid = np.repeat(np.arange(n_paths), counts)
        t = proc.invert(params.kappa, a, rng.random(n) * total)
        x = sizes[rng.integers(0, sizes.size, n)] * np.where(rng.random(n) < 0.5, -1.0, 1.0)
        for q in tg:
            keep = (t >= win[q, 0]) & (t <= win[q, 1])
            parts[q].append((pid[keep], t[keep], x[keep], np.full(int(keep.sum()), is_common)))
    P, Tm, X, C = [], [], [], []
    for q in range(nq):
        if parts[q]:
            pid, t, x, c = (np.concatenate(z) for z in zip(*parts[q]))
        else:
            pid, t, x, c = np.empty(0, int), np.empty(0), np.empty(0), np.empty(0, bool)
        order = np.lexsort((t, pid))
        P.append(pid[order]); Tm.append(t[order]); X.append(x[order]); C.append(c[order])
    return EventPaths(n_paths, tuple(sel), Tsel, win, P, Tm, X, C)


# -- estimation -----------------------------------------------------------------------
@dataclass(frozen=True)
class MidPriceSeries:
    """Observed mid-prices of one product on event times (clock hours).

    The first entry is the price in force at the start of observation.
    """

    maturity: float
    times: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "prices", np.asarray(self.prices, dtype=float))
        if self.times.shape != self.prices.shape or self.times.size == 0:
            raise ValueError("times and prices must be non-empty and aligned")

    def sample(self, grid: np.ndarray) -> np.ndarray:
        i = np.searchsorted(self.times, grid, side="right") - 1
        return self.prices[np.maximum(i, 0)]


@dataclass
class EstimationReport:
    params: MidPriceParams
    total_intensity: float              # 2 (mu + mu_c)
    corr_ratio: float                   # mu_c / (mu + mu_c)
    distances: np.ndarray
    correlations: np.ndarray
    corr_slope: float
    n_changes: int
    n_outliers: int
    m1: float
    m2: float


def _count_fit(tau: np.ndarray, spans: np.ndarray, h: float) -> tuple[float, float]:
    """Poisson maximum likelihood of ``I exp(-kappa tau)`` on ``h``-wide time-to-maturity buckets."""
    nb = int(math.ceil(spans.max() / h - 1e-9))
    counts = np.bincount(np.minimum((tau / h).astype(int), nb - 1), minlength=nb).astype(float)
    edges = np.arange(nb + 1) * h
    lo = edges[:-1][None, :]
    hi = np.minimum(edges[1:][None, :], spans[:, None])
    covered = hi > lo

    def g(kappa):       # expected counts per bucket divided by I
        e = np.where(covered, (np.exp(-kappa * lo) - np.exp(-kappa * np.where(covered, hi, lo))) / kappa, 0.0)
        return e.sum(axis=0)

    def nll(logk):
        gk = g(math.exp(logk))
        I = counts.sum() / gk.sum()
        mu = np.maximum(I * gk, 1e-300)
        return float(-(counts * np.log(mu)).sum() + mu.sum())

    res = minimize_scalar(nll, bounds=(math.log(1e-4), math.log(50.0)), method="bounded",
                          options={"xatol": 1e-10})
    kappa = math.exp(res.x)
    return counts.sum() / g(kappa).sum(), kappa


def _exp_integral(kappa, T, a, b):
    """Integral of exp(-kappa (T - s)) over [a, b]."""
    return (np.exp(-kappa * (T - b)) - np.exp(-kappa * (T - a))) / kappa


def estimate_with_report(sessions: Sequence[Sequence[MidPriceSeries]], delta_minutes: float = 30.0,
                         bucket_minutes: float = 15.0, method: str = "correlation", max_distance: float = 6.0,
                         outlier_sigmas: float = 5.0, fix_slope: bool = False, t0: float | None = None,
                         law_points: int | None = None) -> EstimationReport:
    if method not in ("correlation", "covariation"):
        raise ValueError(f"unknown method {method!r}")
    series = [s for sess in sessions for s in sess]
    if not series:
        raise NoJumpsObserved("no series supplied")
    changes = [np.diff(s.prices) for s in series]
    nz = np.concatenate([c[c != 0] for c in changes]) if changes else np.empty(0)
    if nz.size == 0:
        raise NoJumpsObserved("no mid-price change in any series")
    sd = float(np.std(nz))
    keep = np.abs(nz) <= outlier_sigmas * sd if sd > 0 else np.ones(nz.size, bool)
    law = np.abs(nz[keep])
    m1, m2 = float(law.mean()), float(np.mean(law ** 2))

    # (b) intensity decay from change counts
    taus, spans = [], []
    for s, c in zip(series, changes):
        span = s.maturity - (s.times[0] if t0 is None else t0)
        spans.append(span)
        taus.append(s.maturity - s.times[1:][c != 0])
    tau = np.concatenate(taus)
    I, kappa = _count_fit(np.clip(tau, 0.0, None), np.array(spans), bucket_minutes / 60.0)

    # (d) 30-minute increments
    dt = delta_minutes / 60.0
    prepared = []
    all_inc = []
    for sess in sessions:
        if not sess:
            continue
        open_ = min(s.times[0] for s in sess) if t0 is None else t0
        Tm = np.array([s.maturity for s in sess])
        ng = int(math.floor((Tm.max() - open_) / dt + 1e-9))
        grid = open_ + dt * np.arange(ng + 1)
        X = np.array([np.diff(s.sample(grid)) for s in sess])
        valid = (grid[1:][None, :] <= Tm[:, None] + 1e-9) & (grid[:-1][None, :] >= np.array([s.times[0] for s in sess])[:, None] - 1e-9)
        prepared.append((Tm, grid, X, valid))
        all_inc.append(X[valid & (X != 0)])
    inc = np.concatenate(all_inc)
    sd30 = float(np.std(inc)) if inc.size else 0.0
    n_out = 0
    num, den_a, den_b, cov_w = {}, {}, {}, {}
    qv, qv_w = 0.0, 0.0
    for Tm, grid, X, valid in prepared:
        ok = valid & ((np.abs(X) <= outlier_sigmas * sd30) if sd30 > 0 else True)
        n_out += int((valid & ~ok).sum())
        Xm = np.where(ok, X, 0.0)
        W = ok.astype(float)
        P = Xm @ Xm.T
        Q = (Xm * Xm) @ W.T
        both = W @ W.T
        qv += float((Xm * Xm).sum())
        qv_w += float(sum(_exp_integral(kappa, T, grid[:-1][o], grid[1:][o]).sum() for T, o in zip(Tm, ok)))
        for l in range(len(Tm)):
            for k in range(l + 1, len(Tm)):
                if both[l, k] == 0:
                    continue
                d = round(abs(Tm[k] - Tm[l]), 6)
                if d == 0 or d > max_distance + 1e-9:
                    continue
                num[d] = num.get(d, 0.0) + P[l, k]
                den_a[d] = den_a.get(d, 0.0) + Q[l, k]
                den_b[d] = den_b.get(d, 0.0) + Q[k, l]
                o = ok[l] & ok[k]
                late = max(Tm[l], Tm[k])
                cov_w[d] = cov_w.get(d, 0.0) + float(_exp_integral(kappa, late, grid[:-1][o], grid[1:][o]).sum())
    dist = np.array(sorted(num))
    corr = np.array([num[d] / math.sqrt(den_a[d] * den_b[d]) if den_a[d] > 0 and den_b[d] > 0 else np.nan
                     for d in dist])
    use = np.isfinite(corr) & (corr > 0)

    if method == "covariation":
        S = qv / (2.0 * m2 * qv_w) if qv_w > 0 else I / 2.0
        cw = sum(cov_w.values())
        mu_c = sum(num.values()) / (2.0 * m2 * cw) if cw > 0 else 0.0
        mu_c = min(max(mu_c, 0.0), S)
        slope = float(np.polyfit(dist[use], np.log(corr[use]), 1)[0]) if use.sum() >= 2 else math.nan
        r = mu_c / S if S > 0 else 0.0
    else:
        S = I / 2.0
        if use.sum() == 0:
            r, slope = 0.0, math.nan
        elif fix_slope or use.sum() == 1:
            slope = -0.5 * kappa
            r = float(np.exp(np.mean(np.log(corr[use]) - slope * dist[use])))
        else:
            slope, c = np.polyfit(dist[use], np.log(corr[use]), 1)
            slope, r = float(slope), float(math.exp(c))
        r = min(max(r, 0.0), 1.0)
        mu_c = r * S
    if math.isfinite(slope) and abs(slope + 0.5 * kappa) > 0.5 * 0.5 * kappa:
        warnings.warn(f"correlation decay slope {slope:.4f} vs -kappa/2 = {-0.5 * kappa:.4f}", InconsistentKappa)
    mu = S - mu_c
    mats = tuple(sorted({s.maturity for s in series}))
    sizes = law
    if law_points and law.size > law_points:
        sizes = np.quantile(law, (np.arange(law_points) + 0.5) / law_points)
    open_all = min(s.times[0] for s in series) if t0 is None else t0
    params = MidPriceParams(kappa, mu, mu_c, sizes, mats, min(open_all, mats[0]))
    return EstimationReport(params, I, r, dist, corr, slope, int(nz.size), int(n_out), m1, m2)


def estimate(sessions: Sequence[Sequence[MidPriceSeries]], delta_minutes: float = 30.0, **kw) -> MidPriceParams:
    """Moment-based estimation of kappa, mu, mu_c and the jump law from event-time series."""
    return estimate_with_report(sessions, delta_minutes, **kw).params
