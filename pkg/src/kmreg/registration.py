"""The outer registration loop: cluster, update centroids, re-estimate poses.

Each iteration rebuilds the nearest-centroid index, assigns every
transformed point to a cluster, refreshes the centroids over all views,
derives validity weights, and then re-solves each view's rigid transform
(view 0 excepted: it pins the reference frame). The loop stops when the
largest per-view pose change falls below ``epsilon`` or the iteration cap
is exceeded.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .alignment import (
    Correspondences,
    DegenerateConfigurationError,
    InsufficientCorrespondencesError,
    solve_rigid,
)
from .clustering import (
    ClusterState,
    assign,
    coarse_model,
    compute_weights,
    objective,
    seed_centroids,
    update_centroids,
)
from .geometry import Scene, bounding_box_diagonal
from .spatial_index import NnIndex

__all__ = ["RegistrationConfig", "IterationTrace", "RegistrationError", "register"]

log = logging.getLogger(__name__)


class RegistrationError(RuntimeError):
    """A view could not be estimated in any iteration."""


@dataclass(frozen=True)
class RegistrationConfig:
    """Knobs of the registration loop.

    Attributes:
        k: number of cluster centroids.
        max_iterations: iteration cap Q; the loop body runs at most
            ``max_iterations + 1`` times.
        epsilon: convergence threshold on the largest per-view change,
            measured as Frobenius rotation change plus translation change
            normalized by the coarse-model bounding-box diagonal (which
            makes the threshold scale-free).
        eliminate_invalid: apply the cardinality elimination rule; set
            False to keep every point (the without-elimination variant).
    """

    k: int = 1500
    max_iterations: int = 500
    epsilon: float = 1e-6
    eliminate_invalid: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not (self.epsilon > 0.0 and np.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon}")


@dataclass(frozen=True)
class IterationTrace:
    """Per-iteration diagnostics of one registration run."""

    iteration: int
    objective: float
    max_transform_change: float
    index_build_s: float
    assign_s: float
    update_s: float
    estimate_s: float
    empty_clusters: int
    eliminated_points: int


def _transform_change(old, new, diagonal: float) -> float:
    rot = float(np.linalg.norm(new.rotation - old.rotation))
    tr = float(np.linalg.norm(new.translation - old.translation)) / diagonal
    return rot + tr


def register(scene: Scene, config: RegistrationConfig, workers: int = 1):
    """Jointly cluster and align all views of a scene.

    The scene's transforms are the initial guesses; centroids are seeded
    by striding the coarse model they produce. View 0's transform is
    returned untouched.

    Args:
        scene: views plus initial transforms.
        config: loop parameters.
        workers: thread count for batched nearest-centroid queries; the
            result is identical for any value.

    Returns:
        (transforms, traces): the final per-view transforms in view order
        and one :class:`IterationTrace` per executed iteration.

    Raises:
        ValueError: ``config.k`` exceeds the total point count.
        RegistrationError: some view had too few valid correspondences in
            every single iteration.
    """
    total = scene.total_points
    if config.k > total:
        raise ValueError(f"k={config.k} exceeds the total point count {total}")

    centroids = seed_centroids(scene, config.k)
    diagonal = bounding_box_diagonal(coarse_model(scene))
    if diagonal <= 0.0:
        diagonal = 1.0  # degenerate single-location scene; keep the metric finite

    transforms = list(scene.transforms)
    n_views = scene.n_views
    skip_counts = np.zeros(n_views, dtype=np.int64)
    traces: list[IterationTrace] = []
    all_ones = tuple(
        np.ones(len(scene.sets[i]), dtype=np.uint8) for i in range(n_views)
    )

    q = 0
    while True:
        q += 1
        current = scene.with_transforms(transforms)

        t0 = time.perf_counter()
        index = NnIndex(centroids)
        t1 = time.perf_counter()
        assignments, cardinalities = assign(current, index, workers=workers)
        t2 = time.perf_counter()
        centroids = update_centroids(current, assignments, centroids)
        t3 = time.perf_counter()
        if config.eliminate_invalid:
            weights = compute_weights(assignments, cardinalities, config.k)
        else:
            weights = all_ones

        previous = list(transforms)
        for i in range(1, n_views):
            w = weights[i]
            if int(w.sum()) < 3:
                skip_counts[i] += 1
                log.warning(
                    "iteration %d: view %d has %d valid correspondences, "
                    "keeping its transform",
                    q,
                    i,
                    int(w.sum()),
                )
                continue
            corr = Correspondences(
                scene.sets[i].points, centroids[assignments[i]], w
            )
            try:
                transforms[i] = solve_rigid(corr)
            except (InsufficientCorrespondencesError, DegenerateConfigurationError) as exc:
                skip_counts[i] += 1
                log.warning(
                    "iteration %d: estimation for view %d skipped (%s)", q, i, exc
                )
        t4 = time.perf_counter()

        change = max(
            (_transform_change(previous[i], transforms[i], diagonal) for i in range(1, n_views)),
            default=0.0,
        )
        state = ClusterState(centroids, assignments, cardinalities, weights)
        obj = objective(scene.with_transforms(transforms), state)
        empty = int((cardinalities == 0).sum())
        eliminated = int(sum(int((w == 0).sum()) for w in weights))
        traces.append(
            IterationTrace(
                iteration=q,
                objective=obj,
                max_transform_change=change,
                index_build_s=t1 - t0,
                assign_s=t2 - t1,
                update_s=t3 - t2,
                estimate_s=t4 - t3,
                empty_clusters=empty,
                eliminated_points=eliminated,
            )
        )
        log.debug(
            "iteration %d: objective=%.6g change=%.3g empty=%d eliminated=%d",
            q,
            obj,
            change,
            empty,
            eliminated,
        )

        if change < config.epsilon or q > config.max_iterations:
            break

    always_skipped = [i for i in range(1, n_views) if skip_counts[i] == len(traces)]
    if always_skipped:
        raise RegistrationError(
            f"views {always_skipped} had too few valid correspondences in every iteration"
        )
    return transforms, traces
