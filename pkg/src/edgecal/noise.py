"""Measurement noise models for the two sensors.

A LiDAR return is range d along a unit bearing w, each with independent
Gaussian error: range noise of std sigma_d along the beam, and bearing noise
as a 2-vector in the tangent plane of w with std sigma_omega per axis. To
first order the resulting 3-D point error is

    dp = w * delta_d - d * skew(w) @ N(w) @ delta_omega

so the point covariance is A @ diag(sigma_d^2, sigma_omega^2 I2) @ A^T with
A = [w, -d*skew(w)@N(w)]. Image edge pixels carry isotropic sigma_I^2 I2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import skew, tangent_basis, tangent_basis_batch


@dataclass(frozen=True)
class ImageNoiseParams:
    """Pixel noise of detected edge points (std in pixels, isotropic)."""

    sigma_i: float = 1.5


@dataclass(frozen=True)
class LidarNoiseParams:
    """Per-return range (m) and bearing (rad, per tangent axis) noise stds."""

    sigma_d: float = 0.02
    sigma_omega: float = 0.0015


@dataclass(frozen=True)
class SensorNoise:
    image: ImageNoiseParams = ImageNoiseParams()
    lidar: LidarNoiseParams = LidarNoiseParams()


def lidar_point_cov(
    bearing: np.ndarray, depth: float, params: LidarNoiseParams
) -> np.ndarray:
    """3x3 covariance of one LiDAR point from its bearing and range."""
    bearing = np.asarray(bearing, dtype=float).reshape(3)
    if depth <= 0.0:
        raise ValueError("depth must be positive")
    basis = tangent_basis(bearing)
    amat = np.empty((3, 3))
    amat[:, 0] = bearing
    amat[:, 1:] = -depth * skew(bearing) @ basis
    noise_diag = np.diag(
        [params.sigma_d**2, params.sigma_omega**2, params.sigma_omega**2]
    )
    return amat @ noise_diag @ amat.T


def lidar_point_cov_batch(
    bearings: np.ndarray, depths: np.ndarray, params: LidarNoiseParams
) -> np.ndarray:
    """Vectorized :func:`lidar_point_cov`; (N, 3), (N,) -> (N, 3, 3)."""
    bearings = np.asarray(bearings, dtype=float).reshape(-1, 3)
    depths = np.asarray(depths, dtype=float).reshape(-1)
    basis = tangent_basis_batch(bearings)  # (N, 3, 2)
    # skew(w) @ N columns are cross products w x n_k.
    cross_cols = np.stack(
        [np.cross(bearings, basis[:, :, 0]), np.cross(bearings, basis[:, :, 1])],
        axis=2,
    )  # (N, 3, 2)
    amat = np.concatenate(
        [bearings[:, :, None], -depths[:, None, None] * cross_cols], axis=2
    )  # (N, 3, 3)
    noise_diag = np.array(
        [params.sigma_d**2, params.sigma_omega**2, params.sigma_omega**2]
    )
    return np.einsum("nik,k,njk->nij", amat, noise_diag, amat)


def correspondence_noise_cov(
    bearing: np.ndarray,
    depth: float,
    image: ImageNoiseParams,
    lidar: LidarNoiseParams,
) -> np.ndarray:
    """5x5 block-diagonal covariance of one correspondence.

    Upper-left 3x3 is the LiDAR point covariance; lower-right 2x2 is the
    image pixel covariance. The blocks are independent measurements, so the
    off-diagonal blocks are zero.
    """
    cov = np.zeros((5, 5))
    cov[:3, :3] = lidar_point_cov(bearing, depth, lidar)
    cov[3:, 3:] = image.sigma_i**2 * np.eye(2)
    return cov
