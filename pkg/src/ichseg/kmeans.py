"""Seeded, deterministic K-means with k-means++ initialization.

Small feature sets only (pixels inside one bounding box); determinism for a
fixed seed matters more than speed here, so this is a plain numpy
implementation with a fixed convergence rule rather than a library call.
"""

from __future__ import annotations

import numpy as np

MAX_ITER = 100
TOL = 1e-6


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            # All remaining points coincide with a chosen center.
            centers[i] = points[rng.integers(n)]
            continue
        idx = rng.choice(n, p=d2 / total)
        centers[i] = points[idx]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def kmeans(points: np.ndarray, k: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Cluster points (n, d) into k groups; returns (labels, centers).

    Deterministic for a fixed seed: k-means++ seeding from the given
    generator, Lloyd iterations until max centroid movement < 1e-6 or 100
    iterations. Clusters may end up empty on degenerate data; their centers
    keep the last value.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"expected (n, d) points, got shape {points.shape}")
    n = points.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(points, k, rng)

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(MAX_ITER):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = points[labels == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
        shift = np.abs(new_centers - centers).max()
        centers = new_centers
        if shift < TOL:
            break
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return labels, centers
