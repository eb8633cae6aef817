"""Image edge detection and the pixel neighborhood index.

Canny here is the classic four-stage pipeline (Gaussian smoothing, Sobel
gradients, 4-sector non-maximum suppression, two-threshold hysteresis) on
float arrays. Everything is deterministic: no randomized steps, and the
hysteresis connectivity is resolved with a connected-component labeling
instead of an order-dependent flood fill. Thresholds are expressed in the
unnormalized 3x3 Sobel magnitude scale of an 8-bit image, so the whole
detector is invariant to scaling the image and both thresholds by the same
factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import EmptyImage, InsufficientPixels

CANNY_SIGMA = 1.4
CANNY_LOW = 40.0
CANNY_HIGH = 110.0


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale image; pixels indexed [row, col]."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2 or pixels.size == 0:
            raise EmptyImage(f"expected a non-empty 2-D array, got shape {pixels.shape}")
        object.__setattr__(self, "pixels", pixels.astype(np.uint8, copy=False))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class EdgePixelSet:
    """Edge pixel positions (sub-pixel allowed) with a 2-D k-d tree index.

    Neighbor queries resolve distance ties by insertion order: neighbors are
    ranked by (squared distance, index). The tree only accelerates the
    search; results match a linear scan with the same rule.
    """

    pixels: np.ndarray
    _tree: cKDTree = field(repr=False, compare=False)

    @classmethod
    def from_points(cls, pixels: np.ndarray) -> "EdgePixelSet":
        pixels = np.ascontiguousarray(np.asarray(pixels, dtype=float).reshape(-1, 2))
        if pixels.shape[0] == 0:
            raise InsufficientPixels("edge pixel set is empty")
        return cls(pixels=pixels, _tree=cKDTree(pixels))

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def knn_query(self, point: np.ndarray, k: int) -> np.ndarray:
        """Indices of the k nearest pixels to one query point."""
        return self.knn_query_batch(np.asarray(point, dtype=float).reshape(1, 2), k)[0]

    def knn_query_batch(self, points: np.ndarray, k: int) -> np.ndarray:
        """(M, 2) queries -> (M, k) neighbor indices, tie-broken by index.

        The tree is queried with headroom (k + 8) and candidates re-ranked by
        exact (squared distance, index); this pins the tie order that the
        library itself leaves unspecified.
        """
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        n = len(self)
        if k > n:
            raise InsufficientPixels(f"requested {k} neighbors from {n} pixels")
        kq = min(n, k + 8)
        _, idx = self._tree.query(points, k=kq)
        idx = np.asarray(idx).reshape(points.shape[0], kq)
        diff = self.pixels[idx] - points[:, None, :]
        dist2 = np.einsum("mkd,mkd->mk", diff, diff)
        order = np.lexsort((idx, dist2), axis=1)[:, :k]
        return np.take_along_axis(idx, order, axis=1)


def _sobel_gradients(smoothed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = ndimage.sobel(smoothed, axis=1, mode="nearest")
    gy = ndimage.sobel(smoothed, axis=0, mode="nearest")
    return gx, gy


def _nonmax_suppress(magnitude: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that are >= both neighbors along the quantized gradient."""
    h, w = magnitude.shape
    padded = np.pad(magnitude, 1, mode="constant")

    def shifted(dr: int, dc: int) -> np.ndarray:
        return padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]

    angle = np.mod(np.arctan2(gy, gx), np.pi)
    sector = ((angle + np.pi / 8.0) // (np.pi / 4.0)).astype(int) % 4
    # Sector -> neighbor offsets along the gradient direction (row, col).
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros_like(magnitude, dtype=bool)
    for s, (dr, dc) in offsets.items():
        mask = sector == s
        # Strict on one side, non-strict on the other: a flat two-pixel ridge
        # thins to a single deterministic pixel instead of both or neither.
        keep |= mask & (magnitude > shifted(dr, dc)) & (magnitude >= shifted(-dr, -dc))
    return keep


def canny_edges(
    image: GrayImage,
    low: float = CANNY_LOW,
    high: float = CANNY_HIGH,
    sigma: float = CANNY_SIGMA,
) -> EdgePixelSet:
    """Detect edges and return their integer pixel coordinates as (u, v).

    A weak pixel (magnitude >= low) survives only if its 8-connected chain of
    weak pixels contains a strong one (magnitude >= high).
    """
    if low > high:
        raise ValueError(f"low threshold {low} exceeds high threshold {high}")
    smoothed = ndimage.gaussian_filter(
        image.pixels.astype(np.float64), sigma=sigma, mode="nearest"
    )
    gx, gy = _sobel_gradients(smoothed)
    magnitude = np.hypot(gx, gy)
    thin = _nonmax_suppress(magnitude, gx, gy)

    weak = thin & (magnitude >= low)
    strong = thin & (magnitude >= high)
    labels, count = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if count == 0:
        raise InsufficientPixels("no edge pixels above the low threshold")
    strong_labels = np.unique(labels[strong])
    strong_labels = strong_labels[strong_labels > 0]
    if strong_labels.size == 0:
        raise InsufficientPixels("no edge chain reaches the high threshold")
    edges = np.isin(labels, strong_labels)

    rows, cols = np.nonzero(edges)
    pixels = np.stack([cols, rows], axis=1).astype(float)
    return EdgePixelSet.from_points(pixels)


def to_grayscale(rgb: np.ndarray) -> GrayImage:
    """Convert an (H, W, 3) uint8 RGB array with ITU-R BT.601 weights.

    Rounds half away from zero (floor(x + 0.5)), which keeps the mapping
    reproducible across platforms.
    """
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        return GrayImage(rgb)
    luma = (
        0.299 * rgb[..., 0].astype(np.float64)
        + 0.587 * rgb[..., 1].astype(np.float64)
        + 0.114 * rgb[..., 2].astype(np.float64)
    )
    return GrayImage(np.floor(luma + 0.5).astype(np.uint8))
