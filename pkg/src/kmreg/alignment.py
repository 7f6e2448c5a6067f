"""Closed-form weighted rigid alignment between corresponding point pairs.

Solves ``argmin_{R,t} sum_j w_j * ||R @ p_j + t - q_j||^2`` over proper
rotations (weighted Kabsch): subtract the weighted centroids, take the SVD
of the cross-covariance and correct the determinant sign so the result is
never a reflection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform

__all__ = [
    "Correspondences",
    "InsufficientCorrespondencesError",
    "DegenerateConfigurationError",
    "solve_rigid",
    "weighted_residual",
]

# Below this relative singular-value ratio the rotation about the weak axis
# is unobservable; failing loudly beats returning an arbitrary rotation.
DEGENERACY_RATIO = 1e-12


class InsufficientCorrespondencesError(ValueError):
    """Fewer than three weight-1 pairs."""


class DegenerateConfigurationError(ValueError):
    """Weight-1 sources are collinear or coincident."""


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Paired source/target points with binary validity weights.

    Zero-weight pairs are carried along but have no influence on the
    solve (they are masked out before any arithmetic touches them).
    """

    sources: np.ndarray
    targets: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.sources, dtype=np.float64)
        tgt = np.asarray(self.targets, dtype=np.float64)
        w = np.asarray(self.weights)
        if src.ndim != 2 or src.shape[1] != 3:
            raise ValueError(f"sources must have shape (N, 3), got {src.shape}")
        if tgt.shape != src.shape:
            raise ValueError(
                f"targets shape {tgt.shape} does not match sources {src.shape}"
            )
        if w.shape != (src.shape[0],):
            raise ValueError(
                f"weights must have shape ({src.shape[0]},), got {w.shape}"
            )
        if not np.isin(w, (0, 1)).all():
            raise ValueError("weights must be binary (0 or 1)")
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "targets", tgt)
        object.__setattr__(self, "weights", w.astype(np.uint8))

    def __len__(self) -> int:
        return self.sources.shape[0]


def solve_rigid(corr: Correspondences) -> RigidTransform:
    """Best rigid transform mapping weight-1 sources onto their targets.

    Returns:
        The (R, t) minimizing the weighted sum of squared residuals, with
        ``det(R) = +1`` always (reflections are corrected via the sign of
        the smallest singular direction).

    Raises:
        InsufficientCorrespondencesError: fewer than 3 weight-1 pairs.
        DegenerateConfigurationError: weight-1 sources collinear or
            coincident (second singular value of the cross-covariance
            below ``DEGENERACY_RATIO`` times the largest).
    """
    mask = corr.weights == 1
    src = corr.sources[mask]
    tgt = corr.targets[mask]
    if src.shape[0] < 3:
        raise InsufficientCorrespondencesError(
            f"need at least 3 weight-1 pairs, got {src.shape[0]}"
        )

    src_centroid = src.mean(axis=0)
    tgt_centroid = tgt.mean(axis=0)
    h = (src - src_centroid).T @ (tgt - tgt_centroid)

    u, s, vt = np.linalg.svd(h)
    if s[1] <= s[0] * DEGENERACY_RATIO:
        raise DegenerateConfigurationError(
            "weight-1 sources are collinear or coincident "
            f"(singular values {s.tolist()})"
        )
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = tgt_centroid - r @ src_centroid
    return RigidTransform(r, t)


def weighted_residual(corr: Correspondences, tf: RigidTransform) -> float:
    """Weighted sum of squared residuals of a transform on the pairs."""
    diff = tf.apply(corr.sources) - corr.targets
    return float(((diff**2).sum(axis=1) * corr.weights).sum())
