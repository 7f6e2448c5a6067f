"""Core 3D types and rigid-motion algebra.

Conventions used across the package:

* a single point is a ``(3,)`` float64 array, a batch is ``(N, 3)``;
* rotations are explicit 3x3 matrices (the error metrics and the solver
  both work on the matrix directly, so no quaternion round trips);
* all coordinates are 64-bit floats.

Every type in this module is an immutable value after construction and
can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ORTHONORMALITY_TOL",
    "REPAIR_TOL",
    "RigidTransform",
    "PointSet",
    "Scene",
    "rotation_about_axis",
    "rotation_from_euler_xyz",
    "bounding_box_diagonal",
]

# A candidate rotation matrix this close to orthonormal is stored unchanged
# (keeps clean inputs bit-stable); between the two bounds it is repaired by
# projection onto the nearest rotation; beyond REPAIR_TOL it is rejected.
ORTHONORMALITY_TOL = 1e-9
REPAIR_TOL = 1e-6


def _as_point_array(values, name: str) -> np.ndarray:
    pts = np.array(values, dtype=np.float64)
    if pts.ndim == 1:
        if pts.shape != (3,):
            raise ValueError(f"{name} must have shape (3,) or (N, 3), got {pts.shape}")
    elif pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (3,) or (N, 3), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError(f"{name} contains non-finite coordinates")
    return pts


def _rotation_violation(r: np.ndarray) -> float:
    ortho = np.linalg.norm(r.T @ r - np.eye(3))
    det = abs(np.linalg.det(r) - 1.0)
    return max(float(ortho), float(det))


def _nearest_rotation(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


class RigidTransform:
    """A proper rigid motion ``p -> R @ p + t``.

    Construction validates the rotation: matrices within
    ``ORTHONORMALITY_TOL`` of a proper rotation are kept as-is, drifted
    ones (violation below ``REPAIR_TOL``) are re-orthonormalized via the
    nearest-rotation SVD projection, anything worse is rejected. The
    repair keeps long chains of compositions from accumulating drift.
    """

    __slots__ = ("_r", "_t")

    def __init__(self, rotation, translation):
        r = np.array(rotation, dtype=np.float64)
        t = np.array(translation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if t.shape != (3,):
            raise ValueError(f"translation must have shape (3,), got {t.shape}")
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise ValueError("transform contains non-finite entries")
        violation = _rotation_violation(r)
        if violation > ORTHONORMALITY_TOL:
            if violation >= REPAIR_TOL:
                raise ValueError(
                    f"matrix is not a rotation (violation {violation:.3e} >= {REPAIR_TOL:.0e})"
                )
            r = _nearest_rotation(r)
        r.flags.writeable = False
        t.flags.writeable = False
        self._r = r
        self._t = t

    @property
    def rotation(self) -> np.ndarray:
        return self._r

    @property
    def translation(self) -> np.ndarray:
        return self._t

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        """Map a ``(3,)`` point or ``(N, 3)`` batch through ``R @ p + t``."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self._r.T + self._t

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return the transform applying ``other`` first, then ``self``."""
        return RigidTransform(self._r @ other._r, self._r @ other._t + self._t)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self._r.T, -(self._r.T @ self._t))

    def as_matrix(self) -> np.ndarray:
        """Row-major 3x4 matrix ``[R | t]``."""
        out = np.empty((3, 4))
        out[:, :3] = self._r
        out[:, 3] = self._t
        return out

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        """Build from a 3x4 or 4x4 row-major matrix."""
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape not in ((3, 4), (4, 4)):
            raise ValueError(f"expected a 3x4 or 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self._r.tolist()}, translation={self._t.tolist()})"


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rotation matrix for a right-handed rotation of `angle` radians about `axis`."""
    a = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(a)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("axis must be a non-zero finite vector")
    x, y, z = a / norm
    c, s = np.cos(angle), np.sin(angle)
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def rotation_from_euler_xyz(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation from extrinsic x-y-z Euler angles: ``Rz(rz) @ Ry(ry) @ Rx(rx)``."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    mx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    my = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    mz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return mz @ my @ mx


@dataclass(frozen=True, eq=False)
class PointSet:
    """One view's ordered 3D points.

    Point order is stable: cluster assignments refer to positions in
    ``points``.
    """

    points: np.ndarray
    view_id: int = 0

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point set must contain at least one point")
        if not np.isfinite(pts).all():
            raise ValueError("points contain non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "view_id", int(self.view_id))

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class Scene:
    """An ordered collection of views plus their current rigid transforms.

    ``transforms[0]`` is the reference frame: the registration driver never
    modifies it.
    """

    sets: tuple
    transforms: tuple

    def __post_init__(self):
        sets = tuple(self.sets)
        transforms = tuple(self.transforms)
        if len(sets) < 2:
            raise ValueError("a scene needs at least two views")
        if len(sets) != len(transforms):
            raise ValueError(
                f"{len(sets)} point sets but {len(transforms)} transforms"
            )
        for ps in sets:
            if not isinstance(ps, PointSet):
                raise TypeError("sets must contain PointSet instances")
        for tf in transforms:
            if not isinstance(tf, RigidTransform):
                raise TypeError("transforms must contain RigidTransform instances")
        object.__setattr__(self, "sets", sets)
        object.__setattr__(self, "transforms", transforms)

    @property
    def n_views(self) -> int:
        return len(self.sets)

    @property
    def total_points(self) -> int:
        return sum(len(ps) for ps in self.sets)

    def transformed_points(self, i: int) -> np.ndarray:
        """View ``i``'s points mapped through its current transform."""
        return self.transforms[i].apply(self.sets[i].points)

    def with_transforms(self, transforms) -> "Scene":
        """A new scene sharing this one's point sets with replaced transforms."""
        return Scene(self.sets, tuple(transforms))


def bounding_box_diagonal(points) -> float:
    """Diagonal length of the axis-aligned bounding box of an (N, 3) cloud."""
    pts = _as_point_array(points, "points")
    pts = np.atleast_2d(pts)
    span = pts.max(axis=0) - pts.min(axis=0)
    return float(np.linalg.norm(span))
