"""Pinhole camera with Brown-Conrady distortion.

Pixel coordinates are (u, v) = (column, row) with the origin at the top-left
pixel center. Distortion is applied in normalized image coordinates
(x, y) = (X/Z, Y/Z) and scaled back through the focal lengths, so with all
coefficients zero the distortion map is the identity on pinhole output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera
from .geometry import RigidTransform

# Points closer than this to the camera plane are rejected rather than projected.
Z_MIN = 0.1


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image dimensions must be positive")

    def has_distortion(self) -> bool:
        return any(
            abs(c) > 0.0 for c in (self.k1, self.k2, self.k3, self.p1, self.p2)
        )


def project_pinhole(point: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Project one camera-frame point to (undistorted) pixel coordinates.

    Raises BehindCamera when Z <= Z_MIN. The result may lie outside the
    image bounds; bounds checking is the caller's concern.
    """
    point = np.asarray(point, dtype=float).reshape(3)
    if point[2] <= Z_MIN:
        raise BehindCamera(f"point depth {point[2]:.4f} <= {Z_MIN}")
    return np.array(
        [
            intr.fx * point[0] / point[2] + intr.cx,
            intr.fy * point[1] / point[2] + intr.cy,
        ]
    )


def _distort_normalized(xn: np.ndarray, yn: np.ndarray, intr: CameraIntrinsics):
    """Brown-Conrady forward map on normalized coordinates (vectorized)."""
    r2 = xn * xn + yn * yn
    radial = 1.0 + r2 * (intr.k1 + r2 * (intr.k2 + r2 * intr.k3))
    xd = xn * radial + 2.0 * intr.p1 * xn * yn + intr.p2 * (r2 + 2.0 * xn * xn)
    yd = yn * radial + intr.p1 * (r2 + 2.0 * yn * yn) + 2.0 * intr.p2 * xn * yn
    return xd, yd


def apply_distortion(pixel: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Distort an undistorted pixel position.

    The pixel is lifted to normalized coordinates through the intrinsics,
    distorted there, and scaled back, so this composes directly with
    :func:`project_pinhole`.
    """
    pixel = np.asarray(pixel, dtype=float).reshape(2)
    xn = (pixel[0] - intr.cx) / intr.fx
    yn = (pixel[1] - intr.cy) / intr.fy
    xd, yd = _distort_normalized(xn, yn, intr)
    return np.array([intr.fx * xd + intr.cx, intr.fy * yd + intr.cy])


def undistort_pixel(
    pixel: np.ndarray, intr: CameraIntrinsics, iterations: int = 12
) -> np.ndarray:
    """Invert :func:`apply_distortion` by fixed-point iteration."""
    pixel = np.asarray(pixel, dtype=float).reshape(2)
    xd = (pixel[0] - intr.cx) / intr.fx
    yd = (pixel[1] - intr.cy) / intr.fy
    xn, yn = xd, yd
    for _ in range(iterations):
        fx, fy = _distort_normalized(np.asarray(xn), np.asarray(yn), intr)
        xn = xn - (fx - xd)
        yn = yn - (fy - yd)
    return np.array([intr.fx * xn + intr.cx, intr.fy * yn + intr.cy])


def distortion_jacobian(pixel: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """2x2 Jacobian of :func:`apply_distortion` at an undistorted pixel."""
    pixel = np.asarray(pixel, dtype=float).reshape(2)
    xn = np.asarray((pixel[0] - intr.cx) / intr.fx)
    yn = np.asarray((pixel[1] - intr.cy) / intr.fy)
    jac_norm = _distortion_jacobian_normalized(xn, yn, intr)
    scale_out = np.diag([intr.fx, intr.fy])
    scale_in = np.diag([1.0 / intr.fx, 1.0 / intr.fy])
    return scale_out @ jac_norm @ scale_in


def _distortion_jacobian_normalized(xn, yn, intr: CameraIntrinsics) -> np.ndarray:
    """Jacobian of the normalized-coordinate distortion map.

    Vectorized: scalar inputs give (2, 2); (N,) inputs give (N, 2, 2).
    """
    xn = np.asarray(xn, dtype=float)
    yn = np.asarray(yn, dtype=float)
    r2 = xn * xn + yn * yn
    radial = 1.0 + r2 * (intr.k1 + r2 * (intr.k2 + r2 * intr.k3))
    dradial_dr2 = intr.k1 + r2 * (2.0 * intr.k2 + 3.0 * intr.k3 * r2)
    dxdx = radial + 2.0 * xn * xn * dradial_dr2 + 2.0 * intr.p1 * yn + 6.0 * intr.p2 * xn
    dxdy = 2.0 * xn * yn * dradial_dr2 + 2.0 * intr.p1 * xn + 2.0 * intr.p2 * yn
    dydx = dxdy
    dydy = radial + 2.0 * yn * yn * dradial_dr2 + 6.0 * intr.p1 * yn + 2.0 * intr.p2 * xn
    jac = np.stack(
        [np.stack([dxdx, dxdy], axis=-1), np.stack([dydx, dydy], axis=-1)], axis=-2
    )
    return jac


def projection_jacobian(point: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """2x3 Jacobian of the pinhole projection w.r.t. the camera-frame point."""
    point = np.asarray(point, dtype=float).reshape(3)
    x, y, z = point
    if z <= Z_MIN:
        raise BehindCamera(f"point depth {z:.4f} <= {Z_MIN}")
    return np.array(
        [
            [intr.fx / z, 0.0, -intr.fx * x / (z * z)],
            [0.0, intr.fy / z, -intr.fy * y / (z * z)],
        ]
    )


def project_point(point: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Full camera-frame-to-pixel map: pinhole projection then distortion."""
    return apply_distortion(project_pinhole(point, intr), intr)


def project_batch(
    points_cam: np.ndarray, intr: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Project an (N, 3) camera-frame batch through the full chain.

    Returns (pixels (N, 2), valid (N,)); rows with depth <= Z_MIN carry NaN
    and valid=False instead of raising. Bounds are not checked here.
    """
    points_cam = np.asarray(points_cam, dtype=float).reshape(-1, 3)
    z = points_cam[:, 2]
    valid = z > Z_MIN
    safe_z = np.where(valid, z, 1.0)
    xn = points_cam[:, 0] / safe_z
    yn = points_cam[:, 1] / safe_z
    xd, yd = _distort_normalized(xn, yn, intr)
    pixels = np.stack([intr.fx * xd + intr.cx, intr.fy * yd + intr.cy], axis=1)
    pixels[~valid] = np.nan
    return pixels, valid


def in_frame(pixels: np.ndarray, intr: CameraIntrinsics, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of pixels inside [0, width-1] x [0, height-1] shrunk by margin."""
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    with np.errstate(invalid="ignore"):
        return (
            (pixels[:, 0] >= margin)
            & (pixels[:, 0] <= intr.width - 1 - margin)
            & (pixels[:, 1] >= margin)
            & (pixels[:, 1] <= intr.height - 1 - margin)
        )


def projection_chain_jacobians(
    points_lidar: np.ndarray, transform: RigidTransform, intr: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized Jacobian pieces of pixel = distort(pinhole(T(p))).

    Returns (pixels (N,2), valid (N,), jac_pose (N,2,6), jac_point (N,2,3))
    where jac_pose differentiates w.r.t. the left increment (dtheta, dt) of
    the transform and jac_point w.r.t. the LiDAR-frame point.
    """
    points_lidar = np.asarray(points_lidar, dtype=float).reshape(-1, 3)
    n = points_lidar.shape[0]
    points_cam = transform.apply(points_lidar)
    z = points_cam[:, 2]
    valid = z > Z_MIN
    safe_z = np.where(valid, z, 1.0)
    xn = points_cam[:, 0] / safe_z
    yn = points_cam[:, 1] / safe_z
    xd, yd = _distort_normalized(xn, yn, intr)
    pixels = np.stack([intr.fx * xd + intr.cx, intr.fy * yd + intr.cy], axis=1)
    pixels[~valid] = np.nan

    # d(pixel)/d(point_cam) = S_out @ d(distort)/d(normalized) @ d(normalized)/d(P)
    jac_dist = _distortion_jacobian_normalized(xn, yn, intr)  # (N, 2, 2)
    jac_pin = np.zeros((n, 2, 3))
    jac_pin[:, 0, 0] = 1.0 / safe_z
    jac_pin[:, 0, 2] = -xn / safe_z
    jac_pin[:, 1, 1] = 1.0 / safe_z
    jac_pin[:, 1, 2] = -yn / safe_z
    focal = np.array([[intr.fx], [intr.fy]])  # scales the two output rows
    jac_cam = focal[None, :, :] * (jac_dist @ jac_pin)  # (N, 2, 3)

    # Pose increment: d(point_cam) = -skew(point_cam) dtheta + dt.
    jac_pose = np.empty((n, 2, 6))
    px, py, pz = points_cam[:, 0], points_cam[:, 1], points_cam[:, 2]
    for row in range(2):
        jx, jy, jz = jac_cam[:, row, 0], jac_cam[:, row, 1], jac_cam[:, row, 2]
        # row_vec @ (-skew(p)) == cross(p, row_vec)
        jac_pose[:, row, 0] = py * jz - pz * jy
        jac_pose[:, row, 1] = pz * jx - px * jz
        jac_pose[:, row, 2] = px * jy - py * jx
        jac_pose[:, row, 3:6] = jac_cam[:, row, :]

    jac_point = jac_cam @ transform.rotation
    return pixels, valid, jac_pose, jac_point
