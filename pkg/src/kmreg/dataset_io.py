"""Scan ingestion, scene manifests, perturbation and synthetic-scene tooling.

PLY support covers the subset multi-view scan repositories actually use:
``ascii`` and ``binary_little_endian`` version 1.0 files with a vertex
element carrying float or double x/y/z properties. Everything else in the
file (extra scalar properties, face elements, comments) is skipped.

Scene manifests are small JSON files listing one PLY path and one
row-major 3x4 ground-truth matrix per view, in view order.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .geometry import PointSet, RigidTransform, Scene, rotation_from_euler_xyz

__all__ = [
    "PlyError",
    "PlyHeaderError",
    "PlyFormatError",
    "PlyTruncationError",
    "PlyValueError",
    "load_ply",
    "write_ply",
    "downsample",
    "PerturbationSpec",
    "perturb",
    "ViewEntry",
    "SceneManifest",
    "save_manifest",
    "load_manifest",
    "load_scene",
    "save_scene",
    "synth_scene",
]


class PlyError(ValueError):
    """Base class for PLY parse failures; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class PlyHeaderError(PlyError):
    """Malformed or incomplete header."""


class PlyFormatError(PlyError):
    """Valid PLY, but a format or layout this reader does not support."""


class PlyTruncationError(PlyError):
    """Payload ends before the header-declared element counts are met."""


class PlyValueError(PlyError):
    """Unparsable or non-finite coordinate data."""


_SCALAR_NUMPY = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}

_COORD_TYPES = {"float", "float32", "double", "float64"}


@dataclass
class _Property:
    name: str
    value_type: str
    is_list: bool = False
    count_type: str = ""


@dataclass
class _Element:
    name: str
    count: int
    properties: list


def _parse_header(f):
    """Read the header, returning (format, elements, data_offset)."""
    offset = 0
    line = f.readline()
    if line.strip() != b"ply":
        raise PlyHeaderError("missing 'ply' magic", offset)
    offset = f.tell()

    fmt = None
    elements: list[_Element] = []
    while True:
        line = f.readline()
        if not line:
            raise PlyHeaderError("header ended before 'end_header'", offset)
        text = line.decode("ascii", errors="replace").strip()
        if text == "end_header":
            if fmt is None:
                raise PlyHeaderError("header has no format line", offset)
            return fmt, elements, f.tell()
        tokens = text.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            offset = f.tell()
            continue
        keyword = tokens[0]
        if keyword == "format":
            if len(tokens) != 3:
                raise PlyHeaderError(f"malformed format line: {text!r}", offset)
            kind, version = tokens[1], tokens[2]
            if version != "1.0":
                raise PlyFormatError(f"unsupported PLY version {version!r}", offset)
            if kind == "ascii":
                fmt = "ascii"
            elif kind == "binary_little_endian":
                fmt = "binary"
            else:
                raise PlyFormatError(f"unsupported format keyword {kind!r}", offset)
        elif keyword == "element":
            if len(tokens) != 3:
                raise PlyHeaderError(f"malformed element line: {text!r}", offset)
            try:
                count = int(tokens[2])
            except ValueError:
                raise PlyHeaderError(f"bad element count in {text!r}", offset) from None
            if count < 0:
                raise PlyHeaderError(f"negative element count in {text!r}", offset)
            elements.append(_Element(tokens[1], count, []))
        elif keyword == "property":
            if not elements:
                raise PlyHeaderError("property before any element", offset)
            if len(tokens) == 3:
                ptype, name = tokens[1], tokens[2]
                if ptype == "list":
                    raise PlyHeaderError(f"malformed list property: {text!r}", offset)
                if ptype not in _SCALAR_NUMPY:
                    raise PlyFormatError(f"unknown property type {ptype!r}", offset)
                elements[-1].properties.append(_Property(name, ptype))
            elif len(tokens) == 5 and tokens[1] == "list":
                ctype, vtype, name = tokens[2], tokens[3], tokens[4]
                if ctype not in _SCALAR_NUMPY or vtype not in _SCALAR_NUMPY:
                    raise PlyFormatError(f"unknown list property types in {text!r}", offset)
                elements[-1].properties.append(
                    _Property(name, vtype, is_list=True, count_type=ctype)
                )
            else:
                raise PlyHeaderError(f"malformed property line: {text!r}", offset)
        else:
            raise PlyHeaderError(f"unexpected header line: {text!r}", offset)
        offset = f.tell()


def _element_row_size(element: _Element, offset: int) -> int:
    size = 0
    for prop in element.properties:
        if prop.is_list:
            raise PlyFormatError(
                f"cannot skip list-typed element {element.name!r} in binary data",
                offset,
            )
        size += np.dtype(_SCALAR_NUMPY[prop.value_type]).itemsize
    return size


def _skip_element_binary(f, element: _Element):
    pos = f.tell()
    need = element.count * _element_row_size(element, pos)
    got = len(f.read(need))
    if got < need:
        raise PlyTruncationError(f"element {element.name!r} truncated", pos + got)


def _skip_element_ascii(f, element: _Element):
    for _ in range(element.count):
        pos = f.tell()
        if not f.readline():
            raise PlyTruncationError(f"element {element.name!r} truncated", pos)


def _read_vertices_binary(f, element: _Element) -> np.ndarray:
    if any(p.is_list for p in element.properties):
        raise PlyFormatError("list property inside vertex element", f.tell())
    dt = np.dtype(
        [(f"f{i}", "<" + _SCALAR_NUMPY[p.value_type]) for i, p in enumerate(element.properties)]
    )
    names = {p.name: f"f{i}" for i, p in enumerate(element.properties)}
    start = f.tell()
    need = element.count * dt.itemsize
    buf = f.read(need)
    if len(buf) < need:
        raise PlyTruncationError("vertex data truncated", start + len(buf))
    arr = np.frombuffer(buf, dtype=dt, count=element.count)
    pts = np.empty((element.count, 3))
    for col, axis in enumerate("xyz"):
        pts[:, col] = arr[names[axis]].astype(np.float64)
    bad = ~np.isfinite(pts).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise PlyValueError(
            f"non-finite coordinate in vertex {row}", start + row * dt.itemsize
        )
    return pts


def _read_vertices_ascii(f, element: _Element) -> np.ndarray:
    n_props = len(element.properties)
    columns = {p.name: i for i, p in enumerate(element.properties)}
    ix, iy, iz = columns["x"], columns["y"], columns["z"]
    pts = np.empty((element.count, 3))
    for row in range(element.count):
        pos = f.tell()
        line = f.readline()
        if not line:
            raise PlyTruncationError("vertex data truncated", pos)
        tokens = line.split()
        if len(tokens) < n_props:
            raise PlyValueError(
                f"vertex {row} has {len(tokens)} fields, expected {n_props}", pos
            )
        try:
            x = float(tokens[ix])
            y = float(tokens[iy])
            z = float(tokens[iz])
        except ValueError:
            raise PlyValueError(f"unparsable coordinate in vertex {row}", pos) from None
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
            raise PlyValueError(f"non-finite coordinate in vertex {row}", pos)
        pts[row, 0] = x
        pts[row, 1] = y
        pts[row, 2] = z
    return pts


def load_ply(path, view_id: int = 0) -> PointSet:
    """Load the vertex x/y/z coordinates of a PLY file, order preserved.

    Accepts ascii and binary_little_endian PLY 1.0. Coordinates may be
    float32 or float64 and are widened to float64. All other properties
    and elements are skipped.

    Raises:
        PlyHeaderError, PlyFormatError, PlyTruncationError, PlyValueError:
            distinct parse failures, each naming the byte offset.
        OSError: the file cannot be read.
    """
    with open(path, "rb") as f:
        fmt, elements, _ = _parse_header(f)
        vertex = next((e for e in elements if e.name == "vertex"), None)
        if vertex is None:
            raise PlyHeaderError("no vertex element declared", f.tell())
        if vertex.count < 1:
            raise PlyHeaderError("vertex element is empty", f.tell())
        for axis in "xyz":
            prop = next((p for p in vertex.properties if p.name == axis), None)
            if prop is None:
                raise PlyFormatError(f"vertex element lacks property {axis!r}", f.tell())
            if prop.is_list or prop.value_type not in _COORD_TYPES:
                raise PlyFormatError(
                    f"vertex property {axis!r} has unsupported type {prop.value_type!r}",
                    f.tell(),
                )

        for element in elements:
            if element.name == "vertex":
                if fmt == "binary":
                    pts = _read_vertices_binary(f, element)
                else:
                    pts = _read_vertices_ascii(f, element)
                return PointSet(pts, view_id=view_id)
            if fmt == "binary":
                _skip_element_binary(f, element)
            else:
                _skip_element_ascii(f, element)
    raise AssertionError("unreachable")  # vertex element handled above


def write_ply(ps: PointSet, path, fmt: str = "binary", precision: str = "float64") -> None:
    """Write a point set as a PLY file readable by :func:`load_ply`.

    Args:
        ps: the points to write, order preserved.
        fmt: ``"binary"`` (little-endian) or ``"ascii"``. ASCII prints 9
            significant digits per coordinate.
        precision: ``"float64"`` or ``"float32"`` vertex storage.
    """
    if fmt not in ("binary", "ascii"):
        raise ValueError(f"fmt must be 'binary' or 'ascii', got {fmt!r}")
    if precision not in ("float64", "float32"):
        raise ValueError(f"precision must be 'float64' or 'float32', got {precision!r}")
    ply_type = "double" if precision == "float64" else "float"
    format_line = "binary_little_endian" if fmt == "binary" else "ascii"
    header = (
        "ply\n"
        f"format {format_line} 1.0\n"
        f"element vertex {len(ps)}\n"
        f"property {ply_type} x\n"
        f"property {ply_type} y\n"
        f"property {ply_type} z\n"
        "end_header\n"
    )
    try:
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            if fmt == "binary":
                dtype = "<f8" if precision == "float64" else "<f4"
                f.write(np.ascontiguousarray(ps.points, dtype=dtype).tobytes())
            else:
                rows = ("%.9g %.9g %.9g" % (x, y, z) for x, y, z in ps.points)
                f.write(("\n".join(rows) + "\n").encode("ascii"))
    except OSError as exc:
        raise OSError(f"cannot write PLY to {path}: {exc}") from exc


def downsample(ps: PointSet, factor: int) -> PointSet:
    """Keep every `factor`-th point (indices 0, S, 2S, ...), order preserved."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"downsample factor must be a positive integer, got {factor}")
    return PointSet(ps.points[:: int(factor)], view_id=ps.view_id)


@dataclass(frozen=True)
class PerturbationSpec:
    """Amplitude and seed of a uniform pose perturbation.

    The same amplitude applies to the three Euler-angle offsets (radians)
    and the three translation offsets (model units).
    """

    amplitude: float
    seed: int

    def __post_init__(self):
        if not (np.isfinite(self.amplitude) and self.amplitude >= 0.0):
            raise ValueError(f"amplitude must be finite and >= 0, got {self.amplitude}")
        object.__setattr__(self, "seed", int(self.seed))


def perturb(ground_truth, spec: PerturbationSpec):
    """Randomly displace every transform except the first.

    For each view past the reference, six values are drawn uniformly from
    ``[-amplitude, amplitude]``: the first three are extrinsic x-y-z Euler
    offsets composed as a left-multiplied delta rotation, the last three
    are added to the translation. Deterministic given the seed; an
    amplitude of zero reproduces the input bit-for-bit.
    """
    transforms = list(ground_truth)
    rng = np.random.default_rng(spec.seed)
    a = float(spec.amplitude)
    out = [transforms[0]]
    for tf in transforms[1:]:
        vals = rng.uniform(-a, a, size=6)
        delta = rotation_from_euler_xyz(vals[0], vals[1], vals[2])
        out.append(RigidTransform(delta @ tf.rotation, tf.translation + vals[3:6]))
    return out


@dataclass(frozen=True)
class ViewEntry:
    """One manifest row: a PLY path and the view's ground-truth transform."""

    ply_path: str
    transform: RigidTransform


@dataclass(frozen=True, eq=False)
class SceneManifest:
    """Ordered list of (PLY path, ground-truth transform) pairs."""

    views: tuple
    name: str | None = None
    units: str | None = None

    def __post_init__(self):
        views = tuple(self.views)
        if len(views) < 2:
            raise ValueError("a manifest needs at least two views")
        for entry in views:
            if not isinstance(entry, ViewEntry):
                raise TypeError("views must contain ViewEntry instances")
        object.__setattr__(self, "views", views)

    def __len__(self) -> int:
        return len(self.views)


def manifest_to_dict(manifest: SceneManifest) -> dict:
    return {
        "name": manifest.name,
        "units": manifest.units,
        "views": [
            {
                "ply": entry.ply_path,
                "transform": entry.transform.as_matrix().tolist(),
            }
            for entry in manifest.views
        ],
    }


def save_manifest(manifest: SceneManifest, path) -> None:
    """Write a manifest as human-editable JSON."""
    with open(path, "w", encoding="ascii") as f:
        json.dump(manifest_to_dict(manifest), f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest(path) -> SceneManifest:
    """Load a manifest; relative PLY paths resolve against the manifest dir.

    Raises:
        FileNotFoundError: the manifest or any referenced PLY is missing.
        ValueError: the JSON does not follow the manifest schema.
    """
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict) or "views" not in data:
        raise ValueError(f"{path}: not a scene manifest (missing 'views')")
    base = os.path.dirname(os.path.abspath(path))
    views = []
    for i, row in enumerate(data["views"]):
        try:
            ply = row["ply"]
            tf = RigidTransform.from_matrix(np.asarray(row["transform"], dtype=np.float64))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: bad view entry {i}: {exc}") from exc
        resolved = ply if os.path.isabs(ply) else os.path.join(base, ply)
        if not os.path.exists(resolved):
            raise FileNotFoundError(f"{path}: view {i} references missing file {resolved}")
        views.append(ViewEntry(resolved, tf))
    return SceneManifest(tuple(views), name=data.get("name"), units=data.get("units"))


def load_scene(manifest: SceneManifest, downsample_factor: int = 1) -> Scene:
    """Load every view of a manifest into a scene posed at ground truth."""
    sets = []
    for i, entry in enumerate(manifest.views):
        ps = load_ply(entry.ply_path, view_id=i)
        if downsample_factor != 1:
            ps = downsample(ps, downsample_factor)
        sets.append(ps)
    return Scene(tuple(sets), tuple(entry.transform for entry in manifest.views))


def save_scene(scene: Scene, manifest: SceneManifest, out_dir, fmt: str = "binary") -> str:
    """Write a scene's views as PLY files plus a manifest.json beside them.

    Returns the manifest path. Paths inside the written manifest are
    relative, so the directory can be moved as a unit.
    """
    os.makedirs(out_dir, exist_ok=True)
    rel_entries = []
    for ps, entry in zip(scene.sets, manifest.views):
        rel = os.path.basename(entry.ply_path)
        write_ply(ps, os.path.join(out_dir, rel), fmt=fmt)
        rel_entries.append(ViewEntry(rel, entry.transform))
    manifest_path = os.path.join(out_dir, "manifest.json")
    save_manifest(
        SceneManifest(tuple(rel_entries), name=manifest.name, units=manifest.units),
        manifest_path,
    )
    return manifest_path


def _sample_sphere(total: int, rng) -> np.ndarray:
    # Jittered Fibonacci spiral: quasi-uniform coverage (max gap close to
    # the mean spacing) while staying random through the seed.
    j = np.arange(total)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    z = -1.0 + 2.0 * (j + 0.5) / total + rng.uniform(-1.0, 1.0, total) / total
    z = np.clip(z, -1.0, 1.0)
    phi = j * golden + rng.uniform(-0.5, 0.5, total) * golden
    r = np.sqrt(1.0 - z**2)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _sample_cube(total: int, rng) -> np.ndarray:
    counts = np.full(6, total // 6)
    counts[: total % 6] += 1
    pts = []
    for face, n in enumerate(counts):
        if n == 0:
            continue
        side = int(np.ceil(np.sqrt(n)))
        cells = np.arange(n)
        u = (cells % side + rng.uniform(0.0, 1.0, n)) / side * 2.0 - 1.0
        v = (cells // side + rng.uniform(0.0, 1.0, n)) / side * 2.0 - 1.0
        w = np.full(n, 1.0 if face % 2 == 0 else -1.0)
        axis = face // 2
        cols = [None, None, None]
        cols[axis] = w
        others = [c for c in range(3) if c != axis]
        cols[others[0]] = u
        cols[others[1]] = v
        pts.append(np.column_stack(cols))
    return np.concatenate(pts)


def _sample_helix(total: int, rng) -> np.ndarray:
    turns = 3.0
    t_max = turns * 2.0 * np.pi
    j = np.arange(total)
    t = (j + rng.uniform(0.0, 1.0, total)) / total * t_max
    z = -1.0 + 2.0 * t / t_max
    core = np.column_stack([np.cos(t), np.sin(t), z])
    return core + rng.normal(0.0, 0.02, size=(total, 3))


_SAMPLERS = {"sphere": _sample_sphere, "cube": _sample_cube, "helix": _sample_helix}


def synth_scene(
    shape: str,
    points_per_view: int,
    n_views: int,
    overlap_fraction: float,
    seed: int,
):
    """Build a synthetic multi-view scene with identity ground truth.

    A quasi-uniform sample of the chosen closed surface is sorted by
    azimuth and partitioned into ``n_views`` angular sectors, each widened
    so that adjacent views share ``overlap_fraction`` of a base sector.
    Views therefore contain identical sample points in their overlap
    regions, exactly as registered scans revisit the same surface. All
    views live in a common frame; the ground-truth transforms are the
    identity.

    Args:
        shape: "sphere", "cube" or "helix".
        points_per_view: target view size; actual sizes are exact up to
            rounding of the sector width.
        n_views: number of views, at least 2.
        overlap_fraction: in (0, 1]; 1.0 with two views makes both views
            identical.
        seed: RNG seed; the scene is deterministic given it.

    Returns:
        (scene, manifest): the scene plus a manifest whose PLY paths are
        placeholder relative names (written only by :func:`save_scene`).
    """
    if shape not in _SAMPLERS:
        raise ValueError(f"shape must be one of {sorted(_SAMPLERS)}, got {shape!r}")
    if n_views < 2:
        raise ValueError(f"n_views must be >= 2, got {n_views}")
    if not (0.0 < overlap_fraction <= 1.0):
        raise ValueError(f"overlap_fraction must be in (0, 1], got {overlap_fraction}")
    if points_per_view < 1:
        raise ValueError(f"points_per_view must be >= 1, got {points_per_view}")

    rng = np.random.default_rng(seed)
    total = max(n_views, int(round(points_per_view * n_views / (1.0 + overlap_fraction))))
    master = _SAMPLERS[shape](total, rng)
    order = np.argsort(np.arctan2(master[:, 1], master[:, 0]), kind="stable")
    ranked = master[order]

    width = int(round(total * (1.0 + overlap_fraction) / n_views))
    width = min(max(width, 1), total)
    sets = []
    for i in range(n_views):
        center = (i + 0.5) * total / n_views
        start = int(round(center - width / 2.0))
        idx = (start + np.arange(width)) % total
        sets.append(PointSet(ranked[idx], view_id=i))

    identity = RigidTransform.identity()
    scene = Scene(tuple(sets), tuple(identity for _ in range(n_views)))
    manifest = SceneManifest(
        tuple(ViewEntry(f"view_{i:03d}.ply", identity) for i in range(n_views)),
        name=f"synth-{shape}",
        units="model",
    )
    return scene, manifest
