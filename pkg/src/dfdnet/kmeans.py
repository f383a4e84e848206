"""Lloyd's k-means with k-means++ seeding and restarts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError

# relative slack for float round-off when checking that inertia never rises
_INERTIA_RTOL = 1e-9


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int
    history: list[float] = field(default_factory=list)


def _sq_dists(x: np.ndarray, x_sq: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = x_sq[:, None] - 2.0 * x @ centroids.T + (centroids ** 2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator, n_trials: int | None = None) -> np.ndarray:
    """Greedy k-means++ seeding.

    Each new centre is the best (lowest resulting potential) of ``n_trials``
    candidates drawn with probability proportional to squared distance.
    """
    m = x.shape[0]
    if n_trials is None:
        n_trials = 2 + int(np.log(k))
    x_sq = (x ** 2).sum(1)
    centers = [x[rng.integers(m)]]
    closest = _sq_dists(x, x_sq, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with a chosen centre
            cand = rng.integers(m, size=n_trials)
        else:
            cand = np.searchsorted(np.cumsum(closest), rng.random(n_trials) * total, side="right")
            cand = np.minimum(cand, m - 1)
        cand_d = np.minimum(closest[None, :], _sq_dists(x, x_sq, x[cand]).T)
        best = int(np.argmin(cand_d.sum(1)))
        centers.append(x[cand[best]])
        closest = cand_d[best]
    return np.array(centers)


def _repair_empty(x, labels, dists, centroids, k):
    """Move each empty cluster onto the worst-fit point of the costliest cluster."""
    for j in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[j] > 0:
            continue
        point_cost = dists[np.arange(len(labels)), labels]
        cluster_cost = np.bincount(labels, weights=point_cost, minlength=k)
        cluster_cost[counts < 2] = -1.0
        donor = int(np.argmax(cluster_cost))
        members = np.flatnonzero(labels == donor)
        far = members[np.argmax(point_cost[members])]
        centroids[j] = x[far]
        labels[far] = j
        dists[far] = ((x[far] - centroids) ** 2).sum(1)
    return labels


def _lloyd(x, centroids, max_iter):
    k = centroids.shape[0]
    x_sq = (x ** 2).sum(1)
    history = []
    labels = None
    for it in range(1, max_iter + 1):
        dists = _sq_dists(x, x_sq, centroids)
        new_labels = np.argmin(dists, axis=1)
        new_labels = _repair_empty(x, new_labels, dists, centroids, k)
        inertia = float(dists[np.arange(len(x)), new_labels].sum())
        if history:
            assert inertia <= history[-1] * (1 + _INERTIA_RTOL) + 1e-12, (
                f"inertia rose from {history[-1]} to {inertia} at iteration {it}")
        history.append(inertia)
        converged = labels is not None and np.array_equal(new_labels, labels)
        labels = new_labels
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        counts = np.bincount(labels, minlength=k)
        centroids = sums / counts[:, None]
        if converged:
            break
    final = ((x - centroids[labels]) ** 2).sum()
    return centroids, labels, float(final), it, history


def kmeans(samples: np.ndarray, k: int, seed: int = 0, n_init: int = 3, max_iter: int = 300) -> KMeansResult:
    """Cluster the rows of ``samples`` into ``k`` groups.

    Runs to an assignment fixpoint or ``max_iter`` iterations, keeping the
    lowest-inertia of ``n_init`` seeded restarts. Centroids are returned in
    float64 and equal the mean of their assigned rows.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ParameterError(f"samples must be an M x D array, got shape {x.shape}")
    if k < 1 or x.shape[0] < k:
        raise ParameterError(f"need 1 <= K <= M, got K={k}, M={x.shape[0]}")
    if not np.isfinite(x).all():
        raise DataError("samples contain non-finite values")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        init = kmeans_plusplus(x, k, rng)
        centroids, labels, inertia, n_iter, history = _lloyd(x, init.copy(), max_iter)
        if best is None or inertia < best.inertia:
            best = KMeansResult(centroids, labels, inertia, n_iter, history)
    return best
