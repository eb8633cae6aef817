"""Rotation, rigid-transform, and unit-bearing primitives.

Conventions used across the package:

- Rotations are 3x3 orthonormal matrices with det +1.
- A rigid transform maps LiDAR-frame points into the camera frame,
  ``p_cam = R @ p_lidar + t``.
- Pose increments are 6-vectors ``(dtheta, dt)`` applied on the left:
  the rotation block of the increment is ``exp(skew(dtheta))`` and the
  translation column is ``dt`` itself (no coupling term), i.e.

      R' = exp(skew(dtheta)) @ R
      t' = exp(skew(dtheta)) @ t + dt

- Unit bearings live on the sphere; their tangent space is spanned by the
  two columns of :func:`tangent_basis`, and :func:`s2_boxplus` retracts a
  2-vector perturbation back onto the sphere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Below this angle the exponential map switches to its Taylor expansion.
_SMALL_ANGLE = 1e-8

# Constructor tolerance for orthonormality of rotation matrices.
_ROTATION_TOL = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric (cross-product) matrix of a 3-vector."""
    v = np.asarray(v, dtype=float).reshape(3)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def so3_exp(delta_theta: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of a rotation vector.

    For angles below 1e-8 rad the closed form divides by ~0, so the
    second-order Taylor expansion is used instead; the switch is a
    numerical-path choice only.
    """
    delta_theta = np.asarray(delta_theta, dtype=float).reshape(3)
    angle = float(np.linalg.norm(delta_theta))
    s = skew(delta_theta)
    if angle < _SMALL_ANGLE:
        return np.eye(3) + s + 0.5 * (s @ s)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + a * s + b * (s @ s)


def so3_log(rotation: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix (inverse of :func:`so3_exp`).

    Returns the minimal-angle representative; the angle is in [0, pi].
    """
    rotation = np.asarray(rotation, dtype=float)
    cos_angle = np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(cos_angle))
    if angle < _SMALL_ANGLE:
        return np.array(
            [
                rotation[2, 1] - rotation[1, 2],
                rotation[0, 2] - rotation[2, 0],
                rotation[1, 0] - rotation[0, 1],
            ]
        ) / 2.0
    if angle > np.pi - 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from the
        # symmetric part R + I whose largest-diagonal column is parallel to it.
        sym = rotation + np.eye(3)
        axis = sym[:, int(np.argmax(np.diag(sym)))]
        axis = axis / np.linalg.norm(axis)
        # Fix the sign using the antisymmetric part where it is nonzero.
        sin_axis = np.array(
            [
                rotation[2, 1] - rotation[1, 2],
                rotation[0, 2] - rotation[2, 0],
                rotation[1, 0] - rotation[0, 1],
            ]
        )
        if np.dot(sin_axis, axis) < 0.0:
            axis = -axis
        return angle * axis
    axis = np.array(
        [
            rotation[2, 1] - rotation[1, 2],
            rotation[0, 2] - rotation[2, 0],
            rotation[1, 0] - rotation[0, 1],
        ]
    ) / (2.0 * np.sin(angle))
    return angle * axis


def rotation_angle(rotation: np.ndarray) -> float:
    """Rotation angle in radians, in [0, pi]."""
    cos_angle = np.clip((np.trace(np.asarray(rotation)) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.arccos(cos_angle))


def rotation_distance(rot_a: np.ndarray, rot_b: np.ndarray) -> float:
    """Geodesic angle between two rotations, in radians."""
    return rotation_angle(np.asarray(rot_a).T @ np.asarray(rot_b))


@dataclass(frozen=True)
class TwistIncrement:
    """Left-multiplicative pose increment ``(delta_theta, delta_t)``."""

    delta_theta: np.ndarray
    delta_t: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "delta_theta", np.asarray(self.delta_theta, dtype=float).reshape(3)
        )
        object.__setattr__(
            self, "delta_t", np.asarray(self.delta_t, dtype=float).reshape(3)
        )

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "TwistIncrement":
        vec = np.asarray(vec, dtype=float).reshape(6)
        return cls(vec[:3], vec[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.delta_theta, self.delta_t])

    def norm(self) -> float:
        """Step size used by the convergence test: |dtheta| + |dt|."""
        return float(np.linalg.norm(self.delta_theta) + np.linalg.norm(self.delta_t))


@dataclass(frozen=True)
class RigidTransform:
    """Rigid transform ``p_out = rotation @ p_in + translation``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        translation = np.asarray(self.translation, dtype=float).reshape(3)
        err = np.max(np.abs(rotation.T @ rotation - np.eye(3)))
        if err > _ROTATION_TOL:
            raise ValueError(f"rotation not orthonormal (max deviation {err:.3e})")
        if np.linalg.det(rotation) < 0.0:
            raise ValueError("rotation has negative determinant")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a batch (N, 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def as_matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "RigidTransform":
        mat = np.asarray(mat, dtype=float)
        return cls(mat[:3, :3], mat[:3, 3])


def se3_boxplus(transform: RigidTransform, delta: TwistIncrement) -> RigidTransform:
    """Apply a pose increment on the left of a transform.

    The increment's homogeneous form has rotation block ``exp(skew(dtheta))``
    and translation column ``dt`` (the translation is perturbed directly, not
    through the coupled SE(3) exponential).
    """
    rot_delta = so3_exp(delta.delta_theta)
    return RigidTransform(
        rot_delta @ transform.rotation,
        rot_delta @ transform.translation + delta.delta_t,
    )


@dataclass(frozen=True)
class BearingVector:
    """Unit-norm direction, validated at construction."""

    vec: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vec, dtype=float).reshape(3)
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"bearing norm {norm!r} deviates from 1 by > 1e-12")
        object.__setattr__(self, "vec", vec)


def tangent_basis(omega: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the plane perpendicular to a unit bearing.

    Returns a 3x2 matrix whose columns are both unit length and orthogonal
    to ``omega``. The first column is built from the coordinate axis least
    aligned with ``omega`` (lowest index on ties) via Gram-Schmidt, so the
    basis is deterministic; the second column is ``omega x first``.
    """
    omega = np.asarray(omega, dtype=float).reshape(3)
    seed_axis = np.zeros(3)
    seed_axis[int(np.argmin(np.abs(omega)))] = 1.0
    first = seed_axis - np.dot(seed_axis, omega) * omega
    first = first / np.linalg.norm(first)
    second = np.cross(omega, first)
    return np.stack([first, second], axis=1)


def tangent_basis_batch(omegas: np.ndarray) -> np.ndarray:
    """Vectorized :func:`tangent_basis` for an (N, 3) stack; returns (N, 3, 2)."""
    omegas = np.asarray(omegas, dtype=float).reshape(-1, 3)
    n = omegas.shape[0]
    seeds = np.zeros((n, 3))
    seeds[np.arange(n), np.argmin(np.abs(omegas), axis=1)] = 1.0
    first = seeds - np.sum(seeds * omegas, axis=1, keepdims=True) * omegas
    first /= np.linalg.norm(first, axis=1, keepdims=True)
    second = np.cross(omegas, first)
    return np.stack([first, second], axis=2)


def s2_boxplus(omega: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Retract a 2-vector tangent perturbation onto the unit sphere.

    Rotates ``omega`` by the rotation whose axis-angle vector is
    ``tangent_basis(omega) @ delta``; the geodesic distance moved equals
    ``|delta|``.
    """
    omega = np.asarray(omega, dtype=float).reshape(3)
    delta = np.asarray(delta, dtype=float).reshape(2)
    return so3_exp(tangent_basis(omega) @ delta) @ omega


def euler_zyx_to_rotation(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rotation matrix from intrinsic Z-Y-X Euler angles (radians).

    ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``. The LiDAR-to-camera nominal
    mounting (x-forward sensor viewed by a z-forward camera) is
    ``(0, -pi/2, pi/2)``.
    """
    cz, sz = np.cos(yaw), np.sin(yaw)
    cy, sy = np.cos(pitch), np.sin(pitch)
    cx, sx = np.cos(roll), np.sin(roll)
    rot_z = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    rot_y = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rot_x = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return rot_z @ rot_y @ rot_x


def rotation_to_euler_zyx(rotation: np.ndarray) -> tuple[float, float, float]:
    """Intrinsic Z-Y-X Euler angles (yaw, pitch, roll) of a rotation matrix.

    At the gimbal singularity (|pitch| = pi/2) yaw and roll are coupled; the
    convention here pins roll = 0 and folds everything into yaw. Reports treat
    the matrix as the primary representation for exactly this reason.
    """
    rotation = np.asarray(rotation, dtype=float)
    sin_pitch = -rotation[2, 0]
    if abs(sin_pitch) >= 1.0 - 1e-12:
        pitch = np.pi / 2.0 if sin_pitch > 0 else -np.pi / 2.0
        yaw = float(np.arctan2(-rotation[0, 1], rotation[1, 1]))
        return yaw, float(pitch), 0.0
    pitch = float(np.arcsin(sin_pitch))
    yaw = float(np.arctan2(rotation[1, 0], rotation[0, 0]))
    roll = float(np.arctan2(rotation[2, 1], rotation[2, 2]))
    return yaw, pitch, roll
