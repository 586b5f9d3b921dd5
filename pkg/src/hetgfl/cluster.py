"""Lloyd k-means with k-means++ seeding for downstream node clustering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ClusteringError(ValueError):
    pass


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int
    inertia_history: list[float] = field(default_factory=list)


def _sq_dist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dist(X, X[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # every point already sits on a centre; pick any unused row
            unused = np.setdiff1d(np.arange(n), chosen)
            nxt = int(unused[rng.integers(unused.size)])
        else:
            nxt = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        chosen.append(nxt)
        closest = np.minimum(closest, _sq_dist(X, X[[nxt]])[:, 0])
    return X[chosen].copy()


def kmeans(
    X: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-8,
    n_init: int = 10,
) -> KMeansResult:
    """Best of ``n_init`` seeded Lloyd runs (lowest inertia, earliest on ties)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ClusteringError(f"expected a 2-D data matrix, got shape {X.shape}")
    n = X.shape[0]
    if k < 1 or n < k:
        raise ClusteringError(f"need n >= k >= 1, got n={n}, k={k}")
    if not np.isfinite(X).all():
        raise ClusteringError("data contains non-finite values")
    if n_init < 1:
        raise ClusteringError("n_init must be >= 1")

    best = None
    for rng in (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_init)):
        res = _lloyd(X, k, rng, max_iter, tol)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int, tol: float) -> KMeansResult:
    n = X.shape[0]
    C = _plus_plus(X, k, rng)
    history: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        D = _sq_dist(X, C)
        assign = D.argmin(axis=1)
        own = D[np.arange(n), assign]
        history.append(float(own.sum()))
        for j in range(k):
            if np.any(assign == j):
                continue
            # empty cluster claims the point farthest from its centre,
            # never stealing a cluster's last member
            counts = np.bincount(assign, minlength=k)
            cand = np.where(counts[assign] > 1, own, -1.0)
            far = int(cand.argmax())
            assign[far] = j
            own[far] = 0.0
        newC = np.stack([X[assign == j].mean(axis=0) for j in range(k)])
        shift = float(np.sqrt(((newC - C) ** 2).sum(axis=1)).max())
        C = newC
        if shift < tol:
            break
    D = _sq_dist(X, C)
    assign = D.argmin(axis=1)
    inertia = float(D[np.arange(n), assign].sum())
    history.append(inertia)
    return KMeansResult(assign, C, inertia, it, history)
