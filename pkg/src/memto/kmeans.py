"""Lloyd's K-means with k-means++ seeding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: list[float] = field(default_factory=list)  # after each assignment step
    shifts: list[float] = field(default_factory=list)  # max centroid shift per iteration
    n_iter: int = 0


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (
        (points**2).sum(1)[:, None]
        - 2.0 * points @ centroids.T
        + (centroids**2).sum(1)[None, :]
    )
    return np.maximum(d, 0.0)


def kmeans_plusplus(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    P = points.shape[0]
    centroids = np.empty((K, points.shape[1]), dtype=points.dtype)
    centroids[0] = points[rng.integers(P)]
    closest = _sq_dists(points, centroids[:1])[:, 0]
    for k in range(1, K):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a chosen centroid
            centroids[k] = points[rng.integers(P)]
        else:
            centroids[k] = points[rng.choice(P, p=closest / total)]
        closest = np.minimum(closest, _sq_dists(points, centroids[k : k + 1])[:, 0])
    return centroids


def kmeans(
    points: np.ndarray,
    K: int,
    iters: int = 100,
    tol: float = 1e-4,
    seed: int = 0,
) -> KMeansResult:
    """Cluster ``points`` (P x C) into ``K`` groups.

    Stops after ``iters`` Lloyd iterations or once the largest centroid
    shift drops below ``tol``. A cluster that goes empty takes over the
    point farthest from its current centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be a P x C matrix")
    P = points.shape[0]
    if K < 1 or P < K:
        raise ValueError(f"need at least K={K} points, got {P}")
    rng = np.random.default_rng(seed)
    centroids = kmeans_plusplus(points, K, rng)
    result = KMeansResult(centroids, np.zeros(P, dtype=np.int64))
    for it in range(iters):
        d = _sq_dists(points, centroids)
        labels = d.argmin(1)
        result.objective.append(float(d[np.arange(P), labels].sum()))
        new = np.empty_like(centroids)
        counts = np.bincount(labels, minlength=K)
        point_d = d[np.arange(P), labels]
        taken = np.zeros(P, dtype=bool)
        for k in range(K):
            if counts[k]:
                new[k] = points[labels == k].mean(0)
            else:
                far = np.where(taken, -1.0, point_d).argmax()
                taken[far] = True
                new[k] = points[far]
        shift = float(np.sqrt(((new - centroids) ** 2).sum(1)).max())
        result.shifts.append(shift)
        centroids = new
        result.n_iter = it + 1
        if shift < tol:
            break
    d = _sq_dists(points, centroids)
    result.labels = d.argmin(1)
    result.centroids = centroids
    return result
