"""Identifiability scoring: matching, correlation, and nonlinear R^2.

Estimated latents are only defined up to a permutation and per-component
invertible maps, so scoring first fixes the permutation by minimizing
1 - |pearson| with the Hungarian algorithm, then reports the mean absolute
correlation (MCC) and a nonlinear R^2 from a per-component RBF kernel ridge
regression mapping each estimate to its matched ground-truth component.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .numerics import make_rng

__all__ = [
    "ZeroVariance",
    "EvalReport",
    "hungarian",
    "pearson",
    "median_bandwidth",
    "krr_fit_predict",
    "score",
]

KRR_RIDGE = 1e-3
KRR_MAX_TRAIN = 2000
TRAIN_FRACTION = 0.9


class ZeroVariance(Exception):
    """Correlation undefined: a component is constant."""


@dataclass
class EvalReport:
    permutation: list[int]
    mcc: list[float]
    r2: list[float]
    mean_mcc: float
    mean_r2: float
    heatmap: np.ndarray
    split_seed: int
    n_train: int
    n_test: int

    def to_dict(self) -> dict:
        return {
            "permutation": list(self.permutation),
            "mcc": list(self.mcc),
            "r2": list(self.r2),
            "mean_mcc": self.mean_mcc,
            "mean_r2": self.mean_r2,
            "heatmap": np.asarray(self.heatmap).tolist(),
            "split": {
                "seed": self.split_seed,
                "n_train": self.n_train,
                "n_test": self.n_test,
            },
        }

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def save_heatmap_csv(self, path) -> None:
        d = self.heatmap.shape[1]
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(f"est{j + 1}" for j in range(d)) + "\n")
            for row in self.heatmap:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _assignment_cost(cost: np.ndarray) -> tuple[float, list[int]]:
    """Minimum-cost perfect matching via the potentials (O(n^3)) method."""
    n = cost.shape[0]
    inf = float("inf")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[j] = row assigned to column j
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        way = np.zeros(n + 1, dtype=int)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0, delta, j1 = match[j0], inf, 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = [0] * n
    total = 0.0
    for j in range(1, n + 1):
        perm[match[j] - 1] = j - 1
        total += float(cost[match[j] - 1, j - 1])
    return total, perm


def hungarian(cost) -> list[int]:
    """Cost-minimizing bijection rows -> columns.

    Among all optima, returns the lexicographically smallest permutation by
    greedily fixing each row to the smallest column that still admits an
    optimal completion.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("cost must be square")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    n = cost.shape[0]
    if n == 1:
        return [0]
    best, _ = _assignment_cost(cost)
    tol = 1e-9 * (1.0 + abs(best))
    perm: list[int] = []
    free = list(range(n))
    fixed = 0.0
    for i in range(n):
        for j in free:
            rest_rows = [r for r in range(i + 1, n)]
            if rest_rows:
                sub = cost[np.ix_(rest_rows, [c for c in free if c != j])]
                rest, _ = _assignment_cost(sub)
            else:
                rest = 0.0
            if fixed + cost[i, j] + rest <= best + tol:
                perm.append(j)
                fixed += cost[i, j]
                free.remove(j)
                break
        else:
            raise RuntimeError("no optimal completion found (numerical issue)")
    return perm


def pearson(a, b) -> float:
    """Sample Pearson correlation; raises ZeroVariance on constant input."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size != b.size or a.size < 2:
        raise ValueError("need two equal-length vectors of size >= 2")
    ac = a - np.mean(a)
    bc = b - np.mean(b)
    na, nb = np.linalg.norm(ac), np.linalg.norm(bc)
    if na == 0.0 or nb == 0.0:
        raise ZeroVariance("constant component")
    return float(np.dot(ac, bc) / (na * nb))


def median_bandwidth(x: np.ndarray, max_points: int = 1000) -> float:
    """Median pairwise distance heuristic (subsampled deterministically)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] > max_points:
        step = x.shape[0] // max_points
        x = x[::step][:max_points]
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    med = float(np.median(np.sqrt(d2[np.triu_indices(x.shape[0], k=1)])))
    return med if med > 0 else 1.0


def krr_fit_predict(x_train, y_train, x_test, bandwidth: float, ridge: float):
    """RBF kernel ridge regression: fit on train, predict on test.

    Kernel exp(-||a - b||^2 / (2 bandwidth^2)); dual coefficients solve
    (K + ridge I) alpha = y.
    """
    if bandwidth <= 0 or ridge <= 0:
        raise ValueError("bandwidth and ridge must be positive")
    xtr = np.asarray(x_train, dtype=np.float64)
    xte = np.asarray(x_test, dtype=np.float64)
    if xtr.ndim == 1:
        xtr = xtr[:, None]
    if xte.ndim == 1:
        xte = xte[:, None]
    if xtr.shape[0] < 2:
        raise ValueError("need at least 2 training points")
    y = np.asarray(y_train, dtype=np.float64)
    gamma = 1.0 / (2.0 * bandwidth * bandwidth)
    d2 = np.sum(xtr * xtr, axis=1)
    k_train = np.exp(-gamma * (d2[:, None] + d2[None, :] - 2.0 * xtr @ xtr.T))
    k_train[np.diag_indices_from(k_train)] = 1.0
    alpha = cho_solve(
        cho_factor(k_train + ridge * np.eye(xtr.shape[0]), lower=True), y
    )
    d2te = (
        np.sum(xte * xte, axis=1)[:, None]
        + d2[None, :]
        - 2.0 * xte @ xtr.T
    )
    return np.exp(-gamma * d2te) @ alpha


def _r2(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    sse = float(np.sum((y_true - y_pred) ** 2))
    sst = float(np.sum((y_true - np.mean(y_true)) ** 2))
    if sst == 0.0:
        raise ZeroVariance("constant test target")
    return 1.0 - sse / sst


def score(latents_true, latents_est, seed: int = 0) -> EvalReport:
    """Full identifiability report for estimated latents.

    Pipeline: |pearson| matrix on all samples, Hungarian matching on
    1 - |pearson|, per-pair MCC, then per-pair kernel ridge R^2 (estimate ->
    truth) on a deterministic 90/10 split, plus the full truth x estimate
    R^2 heatmap.
    """
    s = np.asarray(latents_true, dtype=np.float64)
    shat = np.asarray(latents_est, dtype=np.float64)
    if s.shape != shat.shape or s.ndim != 2:
        raise ValueError("latents_true and latents_est must share shape (n, d)")
    n, d = s.shape
    if n < 20:
        raise ValueError("need at least 20 samples")

    corr = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            corr[i, j] = abs(pearson(s[:, i], shat[:, j]))
    perm = hungarian(1.0 - corr)
    mcc = [float(corr[i, perm[i]]) for i in range(d)]

    rng = make_rng(seed)
    order = rng.permutation(n)
    n_train = int(round(TRAIN_FRACTION * n))
    tr, te = order[:n_train], order[n_train:]
    tr_fit = tr[:KRR_MAX_TRAIN]

    heatmap = np.empty((d, d))
    for j in range(d):
        xin_tr, xin_te = shat[tr_fit, j], shat[te, j]
        bw = median_bandwidth(xin_tr)
        for i in range(d):
            pred = krr_fit_predict(xin_tr, s[tr_fit, i], xin_te, bw, KRR_RIDGE)
            heatmap[i, j] = _r2(s[te, i], pred)
    r2 = [float(heatmap[i, perm[i]]) for i in range(d)]

    return EvalReport(
        permutation=perm,
        mcc=mcc,
        r2=r2,
        mean_mcc=float(np.mean(mcc)),
        mean_r2=float(np.mean(r2)),
        heatmap=heatmap,
        split_seed=seed,
        n_train=int(tr.size),
        n_test=int(te.size),
    )
