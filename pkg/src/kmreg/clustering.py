"""K-means machinery for multi-view registration.

Centroid seeding from the coarse model, hard nearest-centroid assignment,
all-views centroid update, and the cardinality-based validity weights that
drop points whose cluster is under-populated. A vanilla Lloyd's K-means is
included as an independent correctness oracle for the kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Scene
from .spatial_index import NnIndex

__all__ = [
    "ClusterState",
    "coarse_model",
    "seed_centroids",
    "assign",
    "update_centroids",
    "compute_weights",
    "lloyd_kmeans",
    "objective",
]


@dataclass(frozen=True, eq=False)
class ClusterState:
    """Snapshot of the clustering variables for one iteration.

    ``assignments`` and ``weights`` are per-view arrays aligned with each
    view's point order. Weights are binary; whether they actually follow
    the elimination rule is up to the producer (the registration driver
    substitutes all-ones when elimination is disabled).
    """

    centroids: np.ndarray
    assignments: tuple
    cardinalities: np.ndarray
    weights: tuple

    def __post_init__(self):
        centroids = np.asarray(self.centroids, dtype=np.float64)
        if centroids.ndim != 2 or centroids.shape[1] != 3:
            raise ValueError(f"centroids must have shape (K, 3), got {centroids.shape}")
        k = centroids.shape[0]
        assignments = tuple(np.asarray(a) for a in self.assignments)
        weights = tuple(np.asarray(w) for w in self.weights)
        if len(assignments) != len(weights):
            raise ValueError("assignments and weights must cover the same views")
        for a, w in zip(assignments, weights):
            if a.ndim != 1 or w.shape != a.shape:
                raise ValueError("per-view assignments and weights must be 1-D and aligned")
            if a.size and (a.min() < 0 or a.max() >= k):
                raise ValueError("assignment index out of range")
            if not np.isin(w, (0, 1)).all():
                raise ValueError("weights must be binary (0 or 1)")
        cards = np.asarray(self.cardinalities)
        expected = np.bincount(
            np.concatenate([a for a in assignments]) if assignments else [],
            minlength=k,
        )
        if cards.shape != (k,) or not np.array_equal(cards, expected):
            raise ValueError("cardinalities are inconsistent with assignments")
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "assignments", assignments)
        object.__setattr__(self, "cardinalities", cards.astype(np.int64))
        object.__setattr__(self, "weights", weights)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def total_points(self) -> int:
        return int(self.cardinalities.sum())


def coarse_model(scene: Scene) -> np.ndarray:
    """All views' points mapped through their current transforms, in view order."""
    return np.concatenate([scene.transformed_points(i) for i in range(scene.n_views)])


def seed_centroids(scene: Scene, k: int) -> np.ndarray:
    """Deterministic uniform sample of `k` centroids from the coarse model.

    Builds the coarse model as the concatenation of all transformed views
    and strides it, taking indices ``floor(m * M / k)`` for ``m = 0..k-1``.
    Scan order traverses the surface, so the sampled shape follows the
    coarse model at reduced resolution.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    model = coarse_model(scene)
    m = model.shape[0]
    if k > m:
        raise ValueError(f"k={k} exceeds the total point count {m}")
    idx = (np.arange(k, dtype=np.int64) * m) // k
    return model[idx].copy()


def assign(scene: Scene, index: NnIndex, workers: int = 1):
    """Assign every transformed point to its nearest centroid.

    Returns:
        (assignments, cardinalities): a per-view tuple of index arrays and
        the exact per-cluster point counts over all views.
    """
    assignments = []
    for i in range(scene.n_views):
        idx, _ = index.nearest_batch(scene.transformed_points(i), workers=workers)
        assignments.append(idx)
    cards = np.bincount(np.concatenate(assignments), minlength=len(index))
    return tuple(assignments), cards.astype(np.int64)


def update_centroids(scene: Scene, assignments, centroids: np.ndarray) -> np.ndarray:
    """Mean of the transformed points assigned to each cluster, over all views.

    Clusters with no assigned points keep their previous centroid, so the
    cluster count never shrinks.
    """
    centroids = np.asarray(centroids, dtype=np.float64)
    k = centroids.shape[0]
    sums = np.zeros((k, 3))
    counts = np.zeros(k, dtype=np.int64)
    for i in range(scene.n_views):
        pts = scene.transformed_points(i)
        a = assignments[i]
        for c in range(3):
            sums[:, c] += np.bincount(a, weights=pts[:, c], minlength=k)
        counts += np.bincount(a, minlength=k)
    out = centroids.copy()
    occupied = counts > 0
    out[occupied] = sums[occupied] / counts[occupied, None]
    return out


def compute_weights(assignments, cardinalities: np.ndarray, k: int):
    """Binary validity weights from the cluster-cardinality elimination rule.

    A point's weight is 0 iff its cluster holds strictly fewer points than
    four fifths of the mean cardinality M/k (mean over all k clusters,
    empty ones included). The comparison ``5*k*card < 4*M`` is done in
    integer arithmetic so the boundary is exact.
    """
    cards = np.asarray(cardinalities, dtype=np.int64)
    if cards.shape != (k,):
        raise ValueError(f"expected {k} cardinalities, got shape {cards.shape}")
    m = int(cards.sum())
    invalid = cards * (5 * k) < 4 * m
    return tuple(np.where(invalid[a], 0, 1).astype(np.uint8) for a in assignments)


def lloyd_kmeans(data, k: int, max_iter: int = 100, init=None):
    """Vanilla Lloyd's K-means over a flat point cloud.

    Used as an independent oracle for the clustering kernels: assignment
    is a brute-force argmin over all centroids, no spatial index involved.
    Iterates until the assignment stabilizes or `max_iter` is reached;
    empty clusters keep their previous centroid.

    Args:
        data: (M, 3) points.
        k: cluster count, at most M.
        max_iter: iteration cap.
        init: optional (k, 3) initial centroids; defaults to a
            deterministic stride sample of the data.

    Returns:
        (centroids, assignments) arrays of shapes (k, 3) and (M,).
    """
    pts = np.asarray(data, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"data must have shape (M, 3), got {pts.shape}")
    m = pts.shape[0]
    if k <= 0 or k > m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    if init is None:
        centroids = pts[(np.arange(k, dtype=np.int64) * m) // k].copy()
    else:
        centroids = np.array(init, dtype=np.float64)
        if centroids.shape != (k, 3):
            raise ValueError(f"init must have shape ({k}, 3), got {centroids.shape}")

    labels = np.full(m, -1, dtype=np.intp)
    for _ in range(max_iter):
        dists = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(dists, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        for c in range(3):
            sums = np.bincount(labels, weights=pts[:, c], minlength=k)
            occupied = counts > 0
            centroids[occupied, c] = sums[occupied] / counts[occupied]
    return centroids, labels


def objective(scene: Scene, state: ClusterState) -> float:
    """Weighted sum of squared point-to-centroid residuals, skipping view 0.

    The first view defines the reference frame and does not contribute a
    residual term; its points still shape the centroids.
    """
    total = 0.0
    for i in range(1, scene.n_views):
        pts = scene.transformed_points(i)
        diff = pts - state.centroids[state.assignments[i]]
        sq = (diff**2).sum(axis=1)
        total += float((sq * state.weights[i]).sum())
    return total
