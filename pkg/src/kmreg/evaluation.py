"""Error metrics against ground truth and the Monte Carlo experiment harnesses.

The metrics compare transforms directly (mean Frobenius distance between
rotation matrices, mean Euclidean distance between translations), which is
only meaningful when the reference view's transform is pinned identically
in both lists; the harnesses check that before scoring.

All harnesses derive per-trial seeds from a base seed by fixed splitting,
so any trial is reproducible in isolation and paired runs share their
perturbations.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass

import numpy as np

from .dataset_io import PerturbationSpec, perturb
from .geometry import Scene
from .registration import RegistrationConfig, RegistrationError, register

__all__ = [
    "GaugeError",
    "rotation_error",
    "translation_error",
    "RegistrationReport",
    "run_single",
    "TrialRecord",
    "AggregateRecord",
    "k_sweep",
    "ablation_elimination",
    "noise_sweep",
    "cross_section",
    "trial_seed",
]

REPORT_SCHEMA_VERSION = 1


class GaugeError(ValueError):
    """Measured and ground-truth reference transforms differ."""


def rotation_error(measured, ground_truth) -> float:
    """Mean Frobenius-norm difference between rotation matrices."""
    measured = list(measured)
    ground_truth = list(ground_truth)
    if len(measured) != len(ground_truth):
        raise ValueError(
            f"length mismatch: {len(measured)} measured vs {len(ground_truth)} ground truth"
        )
    return float(
        np.mean(
            [
                np.linalg.norm(m.rotation - g.rotation)
                for m, g in zip(measured, ground_truth)
            ]
        )
    )


def translation_error(measured, ground_truth) -> float:
    """Mean Euclidean-norm difference between translation vectors."""
    measured = list(measured)
    ground_truth = list(ground_truth)
    if len(measured) != len(ground_truth):
        raise ValueError(
            f"length mismatch: {len(measured)} measured vs {len(ground_truth)} ground truth"
        )
    return float(
        np.mean(
            [
                np.linalg.norm(m.translation - g.translation)
                for m, g in zip(measured, ground_truth)
            ]
        )
    )


def _require_gauge(measured, ground_truth):
    m, g = measured[0], ground_truth[0]
    if not (
        np.array_equal(m.rotation, g.rotation)
        and np.array_equal(m.translation, g.translation)
    ):
        raise GaugeError(
            "view 0 transforms differ between measured and ground truth; "
            "absolute transform errors are undefined without a shared reference frame"
        )


@dataclass(frozen=True)
class RegistrationReport:
    """Summary of one registration run scored against ground truth."""

    rotation_error: float
    translation_error: float
    iterations: int
    converged: bool
    total_time_s: float
    index_build_s: float
    assign_s: float
    update_s: float
    estimate_s: float
    objective_series: tuple
    n_views: int
    total_points: int
    k: int
    max_iterations: int
    epsilon: float
    eliminate_invalid: bool
    seed: int | None = None
    amplitude: float | None = None
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["objective_series"] = list(self.objective_series)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RegistrationReport":
        d = dict(data)
        d["objective_series"] = tuple(d["objective_series"])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RegistrationReport":
        return cls.from_dict(json.loads(text))


def run_single(
    scene: Scene,
    ground_truth,
    config: RegistrationConfig,
    seed: int,
    amplitude: float,
    workers: int = 1,
):
    """Perturb the ground truth, register, and score the result.

    Returns:
        (report, transforms): the scored report and the final transforms.
    """
    ground_truth = list(ground_truth)
    initial = perturb(ground_truth, PerturbationSpec(amplitude, seed))
    start = time.perf_counter()
    transforms, traces = register(scene.with_transforms(initial), config, workers=workers)
    elapsed = time.perf_counter() - start
    _require_gauge(transforms, ground_truth)
    report = RegistrationReport(
        rotation_error=rotation_error(transforms, ground_truth),
        translation_error=translation_error(transforms, ground_truth),
        iterations=len(traces),
        converged=traces[-1].max_transform_change < config.epsilon,
        total_time_s=elapsed,
        index_build_s=sum(t.index_build_s for t in traces),
        assign_s=sum(t.assign_s for t in traces),
        update_s=sum(t.update_s for t in traces),
        estimate_s=sum(t.estimate_s for t in traces),
        objective_series=tuple(t.objective for t in traces),
        n_views=scene.n_views,
        total_points=scene.total_points,
        k=config.k,
        max_iterations=config.max_iterations,
        epsilon=config.epsilon,
        eliminate_invalid=config.eliminate_invalid,
        seed=int(seed),
        amplitude=float(amplitude),
    )
    return report, transforms


def trial_seed(base_seed: int, trial: int) -> int:
    """Fixed-splitting child seed: trial j is reproducible in isolation."""
    ss = np.random.SeedSequence([int(base_seed), int(trial)])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TrialRecord:
    """One Monte Carlo trial of a sweep."""

    param: float
    trial: int
    seed: int
    e_r: float
    e_t: float
    time_s: float
    iterations: int
    converged: bool
    eliminate_invalid: bool
    error: str | None = None


@dataclass(frozen=True)
class AggregateRecord:
    """Per-parameter summary over the successful trials of a sweep."""

    param: float
    eliminate_invalid: bool
    n_trials: int
    n_failed: int
    mean_e_r: float
    std_e_r: float
    mean_e_t: float
    std_e_t: float
    mean_time_s: float
    std_time_s: float
    mean_iterations: float


def _run_trial(scene, ground_truth, config, param, trial, seed, amplitude, workers):
    try:
        report, _ = run_single(scene, ground_truth, config, seed, amplitude, workers)
    except RegistrationError as exc:
        return TrialRecord(
            param=float(param),
            trial=trial,
            seed=seed,
            e_r=float("nan"),
            e_t=float("nan"),
            time_s=float("nan"),
            iterations=0,
            converged=False,
            eliminate_invalid=config.eliminate_invalid,
            error=str(exc),
        )
    return TrialRecord(
        param=float(param),
        trial=trial,
        seed=seed,
        e_r=report.rotation_error,
        e_t=report.translation_error,
        time_s=report.total_time_s,
        iterations=report.iterations,
        converged=report.converged,
        eliminate_invalid=config.eliminate_invalid,
    )


def _aggregate(param, records) -> AggregateRecord:
    ok = [r for r in records if r.error is None]
    failed = len(records) - len(ok)

    def _stats(values):
        if not ok:
            return float("nan"), float("nan")
        arr = np.asarray(values, dtype=np.float64)
        return float(arr.mean()), float(arr.std())

    mean_e_r, std_e_r = _stats([r.e_r for r in ok])
    mean_e_t, std_e_t = _stats([r.e_t for r in ok])
    mean_time, std_time = _stats([r.time_s for r in ok])
    mean_iters = float(np.mean([r.iterations for r in ok])) if ok else float("nan")
    return AggregateRecord(
        param=float(param),
        eliminate_invalid=records[0].eliminate_invalid,
        n_trials=len(records),
        n_failed=failed,
        mean_e_r=mean_e_r,
        std_e_r=std_e_r,
        mean_e_t=mean_e_t,
        std_e_t=std_e_t,
        mean_time_s=mean_time,
        std_time_s=std_time,
        mean_iterations=mean_iters,
    )


def k_sweep(
    scene: Scene,
    ground_truth,
    k_values,
    trials: int,
    base_seed: int,
    amplitude: float = 0.02,
    config: RegistrationConfig | None = None,
    workers: int = 1,
):
    """Registration accuracy and runtime as a function of the cluster count.

    Trial j uses the same perturbation seed for every k, so the sweep
    isolates the effect of k.

    Returns:
        (trial_records, aggregates), one aggregate per k value.
    """
    _require_gauge(scene.transforms, ground_truth)
    base = config or RegistrationConfig()
    trial_records = []
    aggregates = []
    for k in k_values:
        cfg = dataclasses.replace(base, k=int(k))
        rows = [
            _run_trial(
                scene, ground_truth, cfg, k, j, trial_seed(base_seed, j), amplitude, workers
            )
            for j in range(trials)
        ]
        trial_records.extend(rows)
        aggregates.append(_aggregate(k, rows))
    return trial_records, aggregates


def ablation_elimination(
    scene: Scene,
    ground_truth,
    noise_levels,
    trials: int,
    base_seed: int,
    config: RegistrationConfig | None = None,
    workers: int = 1,
):
    """Paired comparison of registration with and without point elimination.

    Both variants of a (noise level, trial) pair run from the same
    perturbed initial transforms.

    Returns:
        (trial_records, aggregates) with two aggregates per noise level,
        elimination enabled first.
    """
    _require_gauge(scene.transforms, ground_truth)
    base = config or RegistrationConfig()
    trial_records = []
    aggregates = []
    for level in noise_levels:
        for eliminate in (True, False):
            cfg = dataclasses.replace(base, eliminate_invalid=eliminate)
            rows = [
                _run_trial(
                    scene,
                    ground_truth,
                    cfg,
                    level,
                    j,
                    trial_seed(base_seed, j),
                    level,
                    workers,
                )
                for j in range(trials)
            ]
            trial_records.extend(rows)
            aggregates.append(_aggregate(level, rows))
    return trial_records, aggregates


def noise_sweep(
    scene: Scene,
    ground_truth,
    amplitudes,
    trials: int,
    base_seed: int,
    config: RegistrationConfig | None = None,
    workers: int = 1,
):
    """Robustness sweep over perturbation amplitudes.

    Returns:
        (trial_records, aggregates) with mean and standard deviation of
        the errors and runtimes per amplitude.
    """
    _require_gauge(scene.transforms, ground_truth)
    cfg = config or RegistrationConfig()
    trial_records = []
    aggregates = []
    for amplitude in amplitudes:
        rows = [
            _run_trial(
                scene,
                ground_truth,
                cfg,
                amplitude,
                j,
                trial_seed(base_seed, j),
                amplitude,
                workers,
            )
            for j in range(trials)
        ]
        trial_records.extend(rows)
        aggregates.append(_aggregate(amplitude, rows))
    return trial_records, aggregates


_AXES = {"x": 0, "y": 1, "z": 2, 0: 0, 1: 1, 2: 2}


def cross_section(scene: Scene, axis, position: float, thickness: float):
    """All transformed points inside a slab orthogonal to an axis.

    Args:
        scene: views posed by their current (e.g. final) transforms.
        axis: "x", "y", "z" or 0..2.
        position: slab center along the axis.
        thickness: slab width, strictly positive.

    Returns:
        (view_ids, points): an (n,) int array tagging each slice point
        with its view and the (n, 3) transformed points, in view order.
        Possibly empty.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of 'x', 'y', 'z' or 0..2, got {axis!r}")
    if not (thickness > 0.0 and np.isfinite(thickness)):
        raise ValueError(f"thickness must be positive and finite, got {thickness}")
    col = _AXES[axis]
    half = thickness / 2.0
    ids = []
    points = []
    for i in range(scene.n_views):
        pts = scene.transformed_points(i)
        mask = np.abs(pts[:, col] - position) <= half
        if mask.any():
            ids.append(np.full(int(mask.sum()), i, dtype=np.int64))
            points.append(pts[mask])
    if not ids:
        return np.empty(0, dtype=np.int64), np.empty((0, 3))
    return np.concatenate(ids), np.concatenate(points)
