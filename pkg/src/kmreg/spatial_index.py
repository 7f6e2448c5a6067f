"""Exact nearest-centroid search over a snapshot of cluster centroids.

The index is rebuilt from scratch once per outer registration iteration
and is immutable afterwards, so concurrent batched queries are safe.
Queries are exact: the result always equals a brute-force argmin over
squared Euclidean distance, with ties resolved to the smallest centroid
index.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

__all__ = ["NnIndex"]


class NnIndex:
    """K-d tree over centroid positions, preserving input indices.

    Backed by a median-split k-d tree with leaf size 16. Tree distances
    are never trusted for tie decisions: squared distances are recomputed
    with the same arithmetic a linear scan would use, and exact ties fall
    back to an exhaustive scan of the tied ball so the smallest-index rule
    holds bit-for-bit.
    """

    def __init__(self, centroids):
        pts = np.array(centroids, dtype=np.float64, order="C")
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"centroids must have shape (K, 3), got {pts.shape}")
        if pts.shape[0] == 0:
            raise ValueError("cannot build an index over zero centroids")
        if not np.isfinite(pts).all():
            raise ValueError("centroids contain non-finite coordinates")
        pts.flags.writeable = False
        self._points = pts
        self._tree = cKDTree(pts, leafsize=16, balanced_tree=True)

    def __len__(self) -> int:
        return self._points.shape[0]

    @property
    def points(self) -> np.ndarray:
        """The centroid snapshot the index was built from (read-only)."""
        return self._points

    def nearest(self, query) -> tuple[int, float]:
        """Index and squared distance of the nearest centroid to one point."""
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (3,):
            raise ValueError(f"query must have shape (3,), got {q.shape}")
        idx, sq = self.nearest_batch(q[None, :])
        return int(idx[0]), float(sq[0])

    def nearest_batch(self, queries, workers: int = 1):
        """Nearest centroid for each row of an (N, 3) query batch.

        Args:
            queries: (N, 3) array of query points.
            workers: thread count for the tree traversal; the result is
                identical for any value.

        Returns:
            (indices, squared_distances) arrays of length N.
        """
        q = np.ascontiguousarray(queries, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != 3:
            raise ValueError(f"queries must have shape (N, 3), got {q.shape}")
        pts = self._points
        if len(self) == 1:
            sq = ((q - pts[0]) ** 2).sum(axis=1)
            return np.zeros(q.shape[0], dtype=np.intp), sq

        _, nbr = self._tree.query(q, k=2, workers=workers)
        i0 = nbr[:, 0]
        i1 = nbr[:, 1]
        d0 = ((q - pts[i0]) ** 2).sum(axis=1)
        d1 = ((q - pts[i1]) ** 2).sum(axis=1)
        swap = (d1 < d0) | ((d1 == d0) & (i1 < i0))
        best = np.where(swap, i1, i0).astype(np.intp)
        best_sq = np.where(swap, d1, d0)

        # An exact two-way tie may hide further equidistant centroids that
        # the k=2 traversal did not return; scan the tied ball for those.
        for row in np.flatnonzero(d0 == d1):
            best[row] = self._smallest_tied_index(q[row], best_sq[row], int(best[row]))
        return best, best_sq

    def _smallest_tied_index(self, q: np.ndarray, sq: float, fallback: int) -> int:
        radius = np.sqrt(sq) * (1.0 + 1e-9) + np.finfo(np.float64).tiny
        candidates = self._tree.query_ball_point(q, radius)
        tied = [j for j in candidates if ((q - self._points[j]) ** 2).sum() == sq]
        return min(tied) if tied else fallback
