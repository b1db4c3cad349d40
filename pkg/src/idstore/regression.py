"""Conditional expectation estimators for regression Monte Carlo.

``LocalLinearRegressor`` partitions the regressor space into nested
equal-count cells (each dimension split into ``meshes`` quantile bins
conditionally on the previous ones) and fits an affine function per cell.
Every column of the response matrix is fitted at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooFewPaths


@dataclass(frozen=True)
class RegressionConfig:
    n_paths: int = 500_000
    meshes: int = 4
    max_dims: int = 4
    min_per_cell: int = 50
    discrete: bool = False      # exact conditional means over distinct regressor rows

    def cells(self, dims: int) -> int:
        return self.meshes ** min(dims, self.max_dims)


class LocalLinearRegressor:
    def __init__(self, meshes: int = 4, min_per_cell: int = 50, rcond: float = 1e-10):
        self.meshes = meshes
        self.min_per_cell = min_per_cell
        self.rcond = rcond

    # -- partition ------------------------------------------------------------
    def _assign(self, X: np.ndarray) -> np.ndarray:
        cell = np.zeros(len(X), dtype=np.int64)
        for d, thr in enumerate(self.thresholds):
            b = (X[:, d:d + 1] >= thr[cell]).sum(axis=1)
            cell = cell * self.meshes + b
        return cell

    def _partition(self, X: np.ndarray) -> np.ndarray:
        n, p = X.shape
        k = self.meshes
        cell = np.zeros(n, dtype=np.int64)
        self.thresholds = []
        for d in range(p):
            n_parent = k ** d
            order = np.lexsort((X[:, d], cell))
            cs = cell[order]
            xs = X[order, d]
            counts = np.bincount(cs, minlength=n_parent)
            starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
            thr = np.full((n_parent, k - 1), np.inf)
            for j in range(1, k):
                pos = starts + (counts * j) // k
                ok = (counts > 0) & (pos > starts) & (pos < starts + counts)
                lo = xs[np.clip(pos - 1, 0, n - 1)]
                hi = xs[np.clip(pos, 0, n - 1)]
                thr[ok, j - 1] = 0.5 * (lo[ok] + hi[ok])
            thr = np.maximum.accumulate(thr, axis=1)
            self.thresholds.append(thr)
            b = (X[:, d:d + 1] >= thr[cell]).sum(axis=1)
            cell = cell * k + b
        return cell

    # -- fit / predict --------------------------------------------------------
    def fit(self, X: np.ndarray, Y: np.ndarray) -> "LocalLinearRegressor":
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        n, p = X.shape
        Y2 = Y.reshape(n, -1)
        self.p = p
        self.out_shape = Y.shape[1:]
        cell = self._partition(X)
        n_cells = self.meshes ** p
        order = np.argsort(cell, kind="stable")
        cs = cell[order]
        counts = np.bincount(cs, minlength=n_cells)
        self.x_mean = np.zeros((n_cells, p))
        self.y_mean = np.zeros((n_cells, Y2.shape[1]))
        self.beta = np.zeros((n_cells, p, Y2.shape[1]))
        # global fit used for cells that are too thin
        gx, gy, gb = self._affine(X, Y2)
        self.x_mean[:], self.y_mean[:], self.beta[:] = gx, gy, gb
        nonempty = np.flatnonzero(counts)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        Xs, Ys = X[order], Y2[order]
        sx = np.add.reduceat(Xs, starts[nonempty], axis=0)
        sy = np.add.reduceat(Ys, starts[nonempty], axis=0)
        cnt = counts[nonempty][:, None]
        xm, ym = sx / cnt, sy / cnt
        dX = Xs - np.repeat(xm, counts[nonempty], axis=0)
        dY = Ys - np.repeat(ym, counts[nonempty], axis=0)
        sxx = np.stack([np.add.reduceat(dX * dX[:, [d]], starts[nonempty], axis=0) for d in range(p)], axis=1)
        sxy = np.stack([np.add.reduceat(dY * dX[:, [d]], starts[nonempty], axis=0) for d in range(p)], axis=1)
        beta = np.linalg.pinv(sxx, rcond=self.rcond, hermitian=True) @ sxy
        use = counts[nonempty] >= max(self.min_per_cell, p + 1)
        idx = nonempty[use]
        self.x_mean[idx], self.y_mean[idx], self.beta[idx] = xm[use], ym[use], beta[use]
        return self

    def _affine(self, X, Y):
        xm, ym = X.mean(axis=0), Y.mean(axis=0)
        dX = X - xm
        beta = np.linalg.pinv(dX.T @ dX, rcond=self.rcond, hermitian=True) @ (dX.T @ (Y - ym))
        return xm, ym, beta

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        cell = self._assign(X)
        order = np.argsort(cell, kind="stable")
        cs = cell[order]
        bounds = np.flatnonzero(np.diff(cs)) + 1
        starts = np.concatenate([[0], bounds])
        ends = np.concatenate([bounds, [len(cs)]])
        out = np.empty((len(X), self.y_mean.shape[1]))
        for s, e in zip(starts, ends):
            c = cs[s]
            rows = order[s:e]
            out[rows] = self.y_mean[c] + (X[rows] - self.x_mean[c]) @ self.beta[c]
        return out.reshape((len(X),) + self.out_shape)

    def to_dict(self) -> dict:
        return {"kind": "local_linear", "meshes": self.meshes, "thresholds": [t.tolist() for t in self.thresholds],
                "x_mean": self.x_mean.tolist(), "y_mean": self.y_mean.tolist(), "beta": self.beta.tolist(),
                "out_shape": list(self.out_shape)}

    @classmethod
    def from_dict(cls, d: dict) -> "LocalLinearRegressor":
        r = cls(d["meshes"])
        r.thresholds = [np.asarray(t, dtype=float).reshape(-1, d["meshes"] - 1) for t in d["thresholds"]]
        r.x_mean = np.asarray(d["x_mean"], dtype=float)
        r.y_mean = np.asarray(d["y_mean"], dtype=float)
        r.beta = np.asarray(d["beta"], dtype=float)
        r.p = r.x_mean.shape[1]
        r.out_shape = tuple(d["out_shape"])
        return r


class DiscreteRegressor:
    """Exact conditional means when regressors take finitely many values (scenario trees)."""

    def fit(self, X: np.ndarray, Y: np.ndarray) -> "DiscreteRegressor":
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        n = len(X)
        keys, inv = np.unique(X, axis=0, return_inverse=True)
        inv = inv.ravel()
        Y2 = Y.reshape(n, -1)
        sums = np.zeros((len(keys), Y2.shape[1]))
        np.add.at(sums, inv, Y2)
        self.means = sums / np.bincount(inv)[:, None]
        self.lookup = {tuple(k): i for i, k in enumerate(keys.tolist())}
        self.out_shape = Y.shape[1:]
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        rows = [self.lookup[tuple(r)] for r in np.asarray(X, dtype=float).tolist()]
        return self.means[rows].reshape((len(rows),) + self.out_shape)

    def to_dict(self) -> dict:
        return {"kind": "discrete", "keys": [list(k) for k in self.lookup], "means": self.means.tolist(),
                "out_shape": list(self.out_shape)}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteRegressor":
        r = cls()
        r.lookup = {tuple(k): i for i, k in enumerate(d["keys"])}
        r.means = np.asarray(d["means"], dtype=float)
        r.out_shape = tuple(d["out_shape"])
        return r


def make_regressor(cfg: RegressionConfig, n_paths: int, dims: int):
    if cfg.discrete:
        return DiscreteRegressor()
    need = cfg.cells(dims) * cfg.min_per_cell
    if n_paths < need:
        raise TooFewPaths(f"{n_paths} paths for {cfg.cells(dims)} cells (need {need})")
    return LocalLinearRegressor(cfg.meshes, cfg.min_per_cell)


def regressor_from_dict(d: dict):
    return (DiscreteRegressor if d["kind"] == "discrete" else LocalLinearRegressor).from_dict(d)
