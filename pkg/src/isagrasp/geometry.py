"""Rigid-transform, quaternion, and rotation-distance primitives.

Conventions used throughout the package:
  - Quaternions are (w, x, y, z) with w >= 0 after construction, so q and -q
    map to the same canonical representative.
  - Rotation matrices act on column vectors: v_world = R @ v_local.
  - Frames store axes as a 3x3 matrix whose COLUMNS are the x/y/z axes.

Everything here is immutable after construction and safe to share across
workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_ORTHO_TOL = 1e-9


def _as_readonly(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion with canonical sign (w >= 0)."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
        if not math.isfinite(n) or n < 1e-12:
            raise ValueError("quaternion norm is zero or non-finite")
        w, x, y, z = self.w / n, self.x / n, self.y / n, self.z / n
        # canonical sign: w >= 0; on the w == 0 great circle pick the
        # representative whose first nonzero component is positive
        if w < 0.0 or (w == 0.0 and (x < 0.0 or (x == 0.0 and (y < 0.0 or (y == 0.0 and z < 0.0))))):
            w, x, y, z = -w, -x, -y, -z
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @staticmethod
    def identity() -> "UnitQuaternion":
        return UnitQuaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis_angle) -> "UnitQuaternion":
        """Rotation-vector (axis * angle, radians) to quaternion."""
        v = np.asarray(axis_angle, dtype=float)
        angle = float(np.linalg.norm(v))
        if angle < 1e-12:
            # first-order expansion keeps the map smooth through zero
            return UnitQuaternion(1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2])
        s = math.sin(0.5 * angle) / angle
        return UnitQuaternion(math.cos(0.5 * angle), v[0] * s, v[1] * s, v[2] * s)

    @staticmethod
    def from_matrix(R) -> "UnitQuaternion":
        """Rotation matrix to quaternion (Shepperd's method)."""
        R = np.asarray(R, dtype=float)
        _check_rotation_matrix(R)
        t = R[0, 0] + R[1, 1] + R[2, 2]
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            return UnitQuaternion(0.25 * s, (R[2, 1] - R[1, 2]) / s,
                                  (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s)
        if R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            return UnitQuaternion((R[2, 1] - R[1, 2]) / s, 0.25 * s,
                                  (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s)
        if R[1, 1] > R[2, 2]:
            s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            return UnitQuaternion((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                                  0.25 * s, (R[1, 2] + R[2, 1]) / s)
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        return UnitQuaternion((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                              (R[1, 2] + R[2, 1]) / s, 0.25 * s)

    @staticmethod
    def random(rng: np.random.Generator) -> "UnitQuaternion":
        """Uniform random rotation (Gaussian-4 normalization)."""
        v = rng.normal(size=4)
        return UnitQuaternion(v[0], v[1], v[2], v[3])

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        xx, yy, zz = x * x, y * y, z * z
        wx, wy, wz = w * x, w * y, w * z
        xy, xz, yz = x * y, x * z, y * z
        return np.array([
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ])

    def compose(self, other: "UnitQuaternion") -> "UnitQuaternion":
        """Hamilton product self * other (apply `other` first)."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return UnitQuaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def inverse(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def rotate(self, v) -> np.ndarray:
        """Rotate a 3-vector (v' = q v q^-1)."""
        v = np.asarray(v, dtype=float)
        u = np.array([self.x, self.y, self.z])
        t = 2.0 * np.cross(u, v)
        return v + self.w * t + np.cross(u, t)

    def dot(self, other: "UnitQuaternion") -> float:
        return (self.w * other.w + self.x * other.x
                + self.y * other.y + self.z * other.z)

    def rotation_equal(self, other: "UnitQuaternion", tol: float = 1e-9) -> bool:
        """True if both represent the same rotation (sign-insensitive)."""
        return abs(self.dot(other)) > 1.0 - tol

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: rotation then translation (p' = R p + t)."""

    translation: np.ndarray
    rotation: UnitQuaternion

    def __post_init__(self):
        t = _as_readonly(self.translation)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("translation must be a finite 3-vector")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.zeros(3), UnitQuaternion.identity())

    def apply(self, p) -> np.ndarray:
        return self.rotation.rotate(p) + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self ∘ other)(p) = self(other(p))."""
        return RigidTransform(self.apply(other.translation),
                              self.rotation.compose(other.rotation))

    def inverse(self) -> "RigidTransform":
        q_inv = self.rotation.inverse()
        return RigidTransform(-q_inv.rotate(self.translation), q_inv)


@dataclass(frozen=True)
class Frame3:
    """Oriented coordinate frame: origin plus orthonormal right-handed axes.

    Axes are stored column-wise: axes[:, 0] is the x-axis, etc.
    """

    origin: np.ndarray
    axes: np.ndarray

    def __post_init__(self):
        origin = _as_readonly(self.origin)
        axes = _as_readonly(self.axes)
        if origin.shape != (3,) or axes.shape != (3, 3):
            raise ValueError("Frame3 needs a 3-vector origin and 3x3 axes")
        _check_rotation_matrix(axes)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "axes", axes)

    def to_world(self, p_local) -> np.ndarray:
        return self.axes @ np.asarray(p_local, dtype=float) + self.origin

    def to_local(self, p_world) -> np.ndarray:
        return self.axes.T @ (np.asarray(p_world, dtype=float) - self.origin)


def _check_rotation_matrix(R: np.ndarray, tol: float = 1e-7) -> None:
    if R.shape != (3, 3):
        raise ValueError("rotation must be a 3x3 matrix")
    if not np.all(np.isfinite(R)):
        raise ValueError("rotation matrix has non-finite entries")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"matrix is not orthonormal (max deviation {err:.2e})")
    if np.linalg.det(R) < 0.0:
        raise ValueError("matrix is a reflection, not a rotation")


def _to_matrix(r) -> np.ndarray:
    if isinstance(r, UnitQuaternion):
        return r.to_matrix()
    if isinstance(r, Frame3):
        return np.asarray(r.axes)
    R = np.asarray(r, dtype=float)
    _check_rotation_matrix(R)
    return R


def geodesic_distance(a, b) -> float:
    """Minimum rotation angle between two orientations, in [0, pi].

    Accepts rotation matrices, UnitQuaternions, or Frame3 axes; raises on
    non-orthonormal matrix input.  The arccos argument is clamped to [-1, 1]
    to absorb floating-point drift near the identity.
    """
    A = _to_matrix(a)
    B = _to_matrix(b)
    c = (np.trace(A.T @ B) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


_GLOBAL_AXES = (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]))


def build_surface_frame(point, normal, hint_axis) -> Frame3:
    """Local frame at a surface point: z = normal, x = tangential hint.

    If the hint is (near-)parallel to the normal, falls back to the global
    axis with the smallest |dot| against the normal, ties broken in x, y, z
    order so the construction stays deterministic.
    """
    point = np.asarray(point, dtype=float)
    n = np.asarray(normal, dtype=float)
    nn = np.linalg.norm(n)
    if abs(nn - 1.0) > 1e-6:
        raise ValueError("normal must be unit length")
    n = n / nn
    h = np.asarray(hint_axis, dtype=float)
    h = h / np.linalg.norm(h)
    if abs(float(h @ n)) > 1.0 - 1e-6:
        dots = [abs(float(ax @ n)) for ax in _GLOBAL_AXES]
        h = _GLOBAL_AXES[int(np.argmin(dots))]
    x = h - float(h @ n) * n
    x = x / np.linalg.norm(x)
    y = np.cross(n, x)
    return Frame3(point, np.column_stack([x, y, n]))
