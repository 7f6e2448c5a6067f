"""Command-line front end tying ingestion, registration and evaluation together.

Subcommands::

    kmreg synth        build a synthetic scene (PLY files + manifest)
    kmreg register     register one scene and score it against ground truth
    kmreg ksweep       accuracy/runtime sweep over the cluster count
    kmreg ablate       paired runs with and without point elimination
    kmreg noise-sweep  robustness sweep over perturbation amplitudes
    kmreg slice        export a cross-section of the registered scene

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 parse error,
5 registration failure.

metrics.csv deliberately contains no wall-clock columns so that a run is
byte-reproducible given ``--seed``, regardless of ``--threads``; timings
live in report.json and the printed summary.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .dataset_io import (
    PlyError,
    SceneManifest,
    ViewEntry,
    load_manifest,
    load_scene,
    save_scene,
    synth_scene,
    write_ply,
)
from .evaluation import (
    ablation_elimination,
    cross_section,
    k_sweep,
    noise_sweep,
    run_single,
)
from .geometry import PointSet, RigidTransform
from .registration import RegistrationConfig, RegistrationError

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_PARSE = 4
EXIT_REGISTRATION = 5


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_line(values) -> str:
    return ",".join(_fmt(v) for v in values)


class _Artifacts:
    """Collects output files and commits them atomically at the end.

    Every artifact is first written as ``.tmp.<name>`` inside the output
    directory and renamed into place only after all of them succeeded, so
    a failing run leaves no partial final artifacts behind.
    """

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self._entries = []

    def add_text(self, name: str, text: str):
        self._entries.append((name, lambda path, t=text: _write_text(path, t)))

    def add_writer(self, name: str, writer):
        self._entries.append((name, writer))

    def commit(self):
        os.makedirs(self.out_dir, exist_ok=True)
        staged = []
        try:
            for name, writer in self._entries:
                tmp = os.path.join(self.out_dir, f".tmp.{name}")
                writer(tmp)
                staged.append((tmp, os.path.join(self.out_dir, name)))
            for tmp, final in staged:
                os.replace(tmp, final)
        finally:
            for tmp, _ in staged:
                if os.path.exists(tmp):
                    os.remove(tmp)


def _write_text(path: str, text: str):
    with open(path, "w", encoding="ascii") as f:
        f.write(text)


def _parse_float_list(text: str):
    try:
        values = [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def _parse_int_list(text: str):
    try:
        values = [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def _add_common(parser: argparse.ArgumentParser, with_trials: bool, default_trials: int = 10):
    parser.add_argument("--manifest", required=True, help="scene manifest JSON")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--k", type=int, default=1500, help="cluster count (default 1500)")
    parser.add_argument(
        "--max-iters", type=int, default=500, help="iteration cap Q (default 500)"
    )
    parser.add_argument(
        "--epsilon", type=float, default=1e-6, help="convergence threshold (default 1e-6)"
    )
    parser.add_argument(
        "--no-eliminate",
        action="store_true",
        help="disable elimination of under-populated clusters",
    )
    parser.add_argument(
        "--downsample", type=int, default=1, help="keep every S-th point (default 1)"
    )
    parser.add_argument("--seed", type=int, default=0, help="base RNG seed (default 0)")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker threads for assignment queries (default: all cores); "
        "results are independent of this value",
    )
    if with_trials:
        parser.add_argument(
            "--trials",
            type=int,
            default=default_trials,
            help=f"Monte Carlo trials per setting (default {default_trials})",
        )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kmreg",
        description="Multi-view point-set registration by joint K-means clustering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--shape", choices=("sphere", "cube", "helix"), default="sphere")
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--points", type=int, default=2500, help="target points per view")
    p.add_argument("--overlap", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("binary", "ascii"), default="binary")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("register", help="register one scene")
    _add_common(p, with_trials=False)
    p.add_argument(
        "--amplitude",
        type=float,
        default=0.0,
        help="perturbation added to the ground-truth transforms before "
        "registering (default 0: start from ground truth)",
    )
    p.add_argument(
        "--registered-ply",
        action="store_true",
        help="also write the registered point cloud as registered.ply",
    )

    p = sub.add_parser("ksweep", help="sweep the cluster count")
    _add_common(p, with_trials=True, default_trials=20)
    p.add_argument(
        "--k-values",
        type=_parse_int_list,
        default=[500, 1000, 1500, 2000, 2500, 3000, 3500],
        help="comma-separated cluster counts (default 500..3500)",
    )
    p.add_argument("--amplitude", type=float, default=0.02)

    p = sub.add_parser("ablate", help="compare with/without elimination")
    _add_common(p, with_trials=True, default_trials=10)
    p.add_argument(
        "--amplitudes",
        type=_parse_float_list,
        default=[0.01, 0.02, 0.03, 0.04],
        help="comma-separated noise amplitudes",
    )

    p = sub.add_parser("noise-sweep", help="sweep the perturbation amplitude")
    _add_common(p, with_trials=True, default_trials=10)
    p.add_argument(
        "--amplitudes",
        type=_parse_float_list,
        default=[0.01, 0.02, 0.03, 0.04],
        help="comma-separated noise amplitudes",
    )

    p = sub.add_parser("slice", help="export a cross-section")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--transforms",
        default=None,
        help="transforms.json from a register run; defaults to the manifest poses",
    )
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--position", type=float, default=0.0)
    p.add_argument("--thickness", type=float, required=True)
    p.add_argument("--downsample", type=int, default=1)

    return parser


def _resolve_workers(threads) -> int:
    if threads is None:
        return os.cpu_count() or 1
    if threads < 1:
        raise ValueError(f"--threads must be >= 1, got {threads}")
    return int(threads)


def _config_from_args(args) -> RegistrationConfig:
    return RegistrationConfig(
        k=args.k,
        max_iterations=args.max_iters,
        epsilon=args.epsilon,
        eliminate_invalid=not args.no_eliminate,
    )


def _load_workload(args):
    if args.downsample < 1:
        raise ValueError(f"--downsample must be >= 1, got {args.downsample}")
    manifest = load_manifest(args.manifest)
    scene = load_scene(manifest, downsample_factor=args.downsample)
    return manifest, scene, list(scene.transforms)


def _transforms_json(manifest: SceneManifest, transforms) -> str:
    doc = {
        "name": manifest.name,
        "units": manifest.units,
        "views": [
            {"ply": entry.ply_path, "transform": tf.as_matrix().tolist()}
            for entry, tf in zip(manifest.views, transforms)
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _cmd_synth(args) -> int:
    scene, manifest = synth_scene(
        args.shape, args.points, args.views, args.overlap, args.seed
    )
    path = save_scene(scene, manifest, args.out, fmt=args.format)
    sizes = [len(ps) for ps in scene.sets]
    print(
        f"synthesized {args.shape} scene: {scene.n_views} views, "
        f"{scene.total_points} points ({min(sizes)}-{max(sizes)} per view)"
    )
    print(f"manifest: {path}")
    return EXIT_OK


def _cmd_register(args) -> int:
    config = _config_from_args(args)
    workers = _resolve_workers(args.threads)
    manifest, scene, ground_truth = _load_workload(args)

    report, transforms = run_single(
        scene, ground_truth, config, args.seed, args.amplitude, workers
    )

    lines = ["metric,value"]
    for key, value in (
        ("e_r", report.rotation_error),
        ("e_t", report.translation_error),
        ("iterations", report.iterations),
        ("converged", report.converged),
        ("views", report.n_views),
        ("points", report.total_points),
        ("k", config.k),
        ("max_iterations", config.max_iterations),
        ("epsilon", config.epsilon),
        ("eliminate", config.eliminate_invalid),
        ("downsample", args.downsample),
        ("amplitude", args.amplitude),
        ("seed", args.seed),
    ):
        lines.append(_csv_line((key, value)))

    artifacts = _Artifacts(args.out)
    artifacts.add_text("metrics.csv", "\n".join(lines) + "\n")
    artifacts.add_text("report.json", report.to_json() + "\n")
    artifacts.add_text("transforms.json", _transforms_json(manifest, transforms))
    if args.registered_ply:
        merged = np.concatenate(
            [tf.apply(ps.points) for ps, tf in zip(scene.sets, transforms)]
        )
        cloud = PointSet(merged, view_id=0)
        artifacts.add_writer("registered.ply", lambda path: write_ply(cloud, path))
    artifacts.commit()

    print(
        f"registered {report.n_views} views ({report.total_points} points): "
        f"E_R={report.rotation_error:.6g} E_t={report.translation_error:.6g} "
        f"iterations={report.iterations} converged={report.converged} "
        f"time={report.total_time_s:.2f}s"
    )
    print(f"outputs in {args.out}")
    return EXIT_OK


_SWEEP_HEADER = (
    "row,{param},eliminate,trial,seed,e_r,e_t,iterations,converged,error,"
    "n_trials,n_failed,mean_e_r,std_e_r,mean_e_t,std_e_t,mean_iterations"
)


def _sweep_csv(param_name: str, trial_records, aggregates, param_fmt=_fmt) -> str:
    lines = [_SWEEP_HEADER.format(param=param_name)]
    for r in trial_records:
        lines.append(
            _csv_line(
                (
                    "trial",
                    param_fmt(r.param),
                    r.eliminate_invalid,
                    r.trial,
                    r.seed,
                    r.e_r,
                    r.e_t,
                    r.iterations,
                    r.converged,
                    r.error,
                    None,
                    None,
                    None,
                    None,
                    None,
                    None,
                    None,
                )
            )
        )
    for a in aggregates:
        lines.append(
            _csv_line(
                (
                    "aggregate",
                    param_fmt(a.param),
                    a.eliminate_invalid,
                    None,
                    None,
                    None,
                    None,
                    None,
                    None,
                    None,
                    a.n_trials,
                    a.n_failed,
                    a.mean_e_r,
                    a.std_e_r,
                    a.mean_e_t,
                    a.std_e_t,
                    a.mean_iterations,
                )
            )
        )
    return "\n".join(lines) + "\n"


def _sweep_report_json(command: str, args, trial_records, aggregates) -> str:
    doc = {
        "schema_version": 1,
        "command": command,
        "seed": args.seed,
        "trials": [dataclasses.asdict(r) for r in trial_records],
        "aggregates": [dataclasses.asdict(a) for a in aggregates],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _print_aggregates(param_name: str, aggregates):
    print(f"{param_name:>12}  elim  trials  mean E_R    mean E_t    mean time")
    for a in aggregates:
        print(
            f"{a.param:>12.6g}  {str(a.eliminate_invalid).lower():5}"
            f" {a.n_trials:>6}  {a.mean_e_r:<10.4g}  {a.mean_e_t:<10.4g}"
            f"  {a.mean_time_s:.2f}s"
        )


def _run_sweep(args, command: str) -> int:
    config = _config_from_args(args)
    workers = _resolve_workers(args.threads)
    _, scene, ground_truth = _load_workload(args)

    if command == "ksweep":
        records, aggregates = k_sweep(
            scene,
            ground_truth,
            args.k_values,
            args.trials,
            args.seed,
            amplitude=args.amplitude,
            config=config,
            workers=workers,
        )
        param = "k"
        fmt = lambda v: str(int(v))
    elif command == "ablate":
        records, aggregates = ablation_elimination(
            scene,
            ground_truth,
            args.amplitudes,
            args.trials,
            args.seed,
            config=config,
            workers=workers,
        )
        param = "amplitude"
        fmt = _fmt
    else:
        records, aggregates = noise_sweep(
            scene,
            ground_truth,
            args.amplitudes,
            args.trials,
            args.seed,
            config=config,
            workers=workers,
        )
        param = "amplitude"
        fmt = _fmt

    artifacts = _Artifacts(args.out)
    artifacts.add_text("metrics.csv", _sweep_csv(param, records, aggregates, fmt))
    artifacts.add_text("report.json", _sweep_report_json(command, args, records, aggregates))
    artifacts.commit()

    _print_aggregates(param, aggregates)
    print(f"outputs in {args.out}")
    return EXIT_OK


def _load_transform_overrides(path, n_views: int):
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    views = doc.get("views")
    if not isinstance(views, list) or len(views) != n_views:
        raise ValueError(
            f"{path}: expected {n_views} view transforms, got "
            f"{len(views) if isinstance(views, list) else 'none'}"
        )
    return [RigidTransform.from_matrix(np.asarray(v["transform"])) for v in views]


def _cmd_slice(args) -> int:
    if args.downsample < 1:
        raise ValueError(f"--downsample must be >= 1, got {args.downsample}")
    manifest = load_manifest(args.manifest)
    scene = load_scene(manifest, downsample_factor=args.downsample)
    if args.transforms is not None:
        scene = scene.with_transforms(
            _load_transform_overrides(args.transforms, scene.n_views)
        )
    ids, points = cross_section(scene, args.axis, args.position, args.thickness)

    lines = ["view,x,y,z"]
    for view, (x, y, z) in zip(ids, points):
        lines.append(_csv_line((int(view), float(x), float(y), float(z))))
    artifacts = _Artifacts(args.out)
    artifacts.add_text("slice.csv", "\n".join(lines) + "\n")
    artifacts.commit()

    print(
        f"slice {args.axis}={args.position}±{args.thickness / 2}: "
        f"{len(ids)} points from {scene.n_views} views"
    )
    print(f"outputs in {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK

    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "register":
            return _cmd_register(args)
        if args.command in ("ksweep", "ablate", "noise-sweep"):
            return _run_sweep(args, args.command)
        if args.command == "slice":
            return _cmd_slice(args)
        raise AssertionError(f"unhandled command {args.command!r}")
    except PlyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except RegistrationError as exc:
        print(f"error: registration failed: {exc}", file=sys.stderr)
        return EXIT_REGISTRATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TypeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
