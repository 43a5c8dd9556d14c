"""Lloyd's algorithm with k-means++ seeding."""

from __future__ import annotations

import numpy as np

from ..exceptions import TooFewPoints

__all__ = ["kmeans", "assign", "inertia"]


def _sqdist(points, centroids):
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def assign(points, centroids) -> np.ndarray:
    """Index of the nearest centroid (lowest index on ties)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return np.argmin(_sqdist(points, np.asarray(centroids, dtype=float)), axis=1)


def inertia(points, centroids, labels) -> float:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return float(((points - np.asarray(centroids)[labels]) ** 2).sum())


def _plus_plus(points, k, stream):
    n = points.shape[0]
    centroids = [points[stream.integers(n)]]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # every point already coincides with a centroid
            idx = stream.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), stream.random() * total, side="right"))
            idx = min(idx, n - 1)
        centroids.append(points[idx])
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centroids)


def kmeans(points, k: int, stream: np.random.Generator, iters: int = 100,
           history: list | None = None):
    """Cluster ``points`` into ``k`` groups.

    Returns ``(centroids, labels)``. Iterates until the assignment stops
    changing or ``iters`` updates have run. Empty clusters keep their
    previous centroid. When ``history`` is a list, the within-cluster sum of
    squares after seeding and after every centroid update is appended to it.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if k < 1:
        raise ValueError("k must be positive")
    if k > points.shape[0]:
        raise TooFewPoints(f"k={k} exceeds the number of points ({points.shape[0]})")
    centroids = _plus_plus(points, k, stream)
    labels = assign(points, centroids)
    if history is not None:
        history.append(inertia(points, centroids, labels))
    for _ in range(iters):
        new = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = points[members].mean(axis=0)
        centroids = new
        if history is not None:
            history.append(inertia(points, centroids, labels))
        relabel = assign(points, centroids)
        if np.array_equal(relabel, labels):
            break
        labels = relabel
    return centroids, labels
