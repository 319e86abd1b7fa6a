"""Rigid-body math: unit quaternions, poses, and point clouds.

All rotations are stored as unit quaternions in (w, x, y, z) order. A
quaternion and its negation describe the same rotation; `canonical()`
picks the w >= 0 representative for hashing and serialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

_NORM_TOL = 1e-9


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion (w, x, y, z)."""

    w: float
    x: float
    y: float
    z: float

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_array(a) -> "Quaternion":
        a = np.asarray(a, dtype=float)
        if a.shape != (4,):
            raise InputError(f"quaternion needs 4 components, got shape {a.shape}")
        q = Quaternion(float(a[0]), float(a[1]), float(a[2]), float(a[3]))
        # keep already-unit inputs bit-exact so serialization round-trips
        return q if abs(q.norm() - 1.0) < 1e-12 else q.normalized()

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=float)

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)

    def normalized(self) -> "Quaternion":
        n = self.norm()
        if n == 0.0:
            raise InputError("cannot normalize a zero quaternion")
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    def canonical(self) -> "Quaternion":
        """Sign-canonical representative: w > 0, ties broken by x, y, z."""
        for c in (self.w, self.x, self.y, self.z):
            if c > 0.0:
                return self
            if c < 0.0:
                return Quaternion(-self.w, -self.x, -self.y, -self.z)
        return self

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def inverse(self) -> "Quaternion":
        # unit quaternion: inverse == conjugate
        return self.conjugate()

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        """Hamilton product; (a * b).rotate(v) == a.rotate(b.rotate(v))."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def dot(self, other: "Quaternion") -> float:
        return self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z

    def rotate(self, v) -> np.ndarray:
        """Rotate vector(s) of shape (3,) or (n, 3)."""
        v = np.asarray(v, dtype=float)
        u = np.array([self.x, self.y, self.z])
        uv = np.cross(u, v)
        uuv = np.cross(u, uv)
        return v + 2.0 * (self.w * uv + uuv)

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ],
            dtype=float,
        )

    @staticmethod
    def from_matrix(m) -> "Quaternion":
        """Rotation matrix (3x3, orthonormal) to quaternion."""
        m = np.asarray(m, dtype=float)
        t = np.trace(m)
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        elif m[1, 1] > m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
        return Quaternion(*q).normalized()

    def rotation_equal(self, other: "Quaternion", tol: float = 1e-9) -> bool:
        """Equality as rotations: q and -q compare equal."""
        return abs(abs(self.dot(other)) - 1.0) <= tol

    def is_unit(self, tol: float = _NORM_TOL) -> bool:
        return abs(self.norm() - 1.0) <= tol


def quaternion_about_axis(axis, angle: float) -> Quaternion:
    """Rotation of `angle` radians about a unit `axis`."""
    axis = np.asarray(axis, dtype=float)
    n = float(np.linalg.norm(axis))
    if abs(n - 1.0) > 1e-6:
        raise InputError(f"axis must be unit length, norm={n}")
    h = 0.5 * angle
    s = math.sin(h)
    return Quaternion(math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotate then translate."""

    rotation: Quaternion
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(Quaternion.identity(), np.zeros(3))

    def transform(self, pts) -> np.ndarray:
        return self.rotation.rotate(pts) + self.translation

    def rotate_only(self, vecs) -> np.ndarray:
        return self.rotation.rotate(vecs)

    def __mul__(self, other: "Pose") -> "Pose":
        """Compose: (a * b).transform(p) == a.transform(b.transform(p))."""
        return Pose(self.rotation * other.rotation, self.rotation.rotate(other.translation) + self.translation)

    def inverse(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(rinv, -rinv.rotate(self.translation))

    def as_7floats(self) -> list[float]:
        q = self.rotation.canonical()
        return [q.w, q.x, q.y, q.z, float(self.translation[0]), float(self.translation[1]), float(self.translation[2])]

    @staticmethod
    def from_7floats(v) -> "Pose":
        v = np.asarray(v, dtype=float).reshape(7)
        return Pose(Quaternion.from_array(v[:4]), v[4:])


@dataclass(frozen=True)
class PointCloud:
    """Points in meters, with optional unit normals."""

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.isfinite(pts).all():
            raise InputError("point cloud contains NaN/Inf coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if nrm.shape != pts.shape:
                raise InputError("normals shape must match points")
            if not np.isfinite(nrm).all():
                raise InputError("normals contain NaN/Inf")
            lens = np.linalg.norm(nrm, axis=1)
            if len(lens) and np.abs(lens - 1.0).max() > 1e-6:
                raise InputError("normals must be unit length within 1e-6")
            nrm.flags.writeable = False
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, pose: Pose) -> "PointCloud":
        nrm = pose.rotate_only(self.normals) if self.normals is not None else None
        return PointCloud(pose.transform(self.points), nrm)

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(np.zeros((0, 3)))


def orthonormal_tangents(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic right-handed (u, v) basis perpendicular to a unit axis."""
    a = np.asarray(axis, dtype=float)
    helper = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(a, helper)
    u /= np.linalg.norm(u)
    v = np.cross(a, u)
    return u, v
