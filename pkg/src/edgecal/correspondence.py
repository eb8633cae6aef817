"""Matching projected 3-D edge samples to local image edge lines.

Every extracted 3-D edge is sampled at a fixed spacing; each sample is
projected through the current extrinsic and camera model, its kappa nearest
edge pixels are fetched, and a straight line is fitted to that neighborhood
(centroid plus dominant scatter direction). A sample becomes a correspondence
only if it passes three gates:

- point-to-line distance within max_pixel_dist,
- projected 3-D edge direction within acos(min_direction_cos) of the fitted
  line direction (equivalently, nearly orthogonal to its normal),
- neighborhood straightness: eigenvalue ratio of the 2x2 scatter matrix at
  most max_eigen_ratio (rejects corners and clutter).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import (
    CameraIntrinsics,
    Z_MIN,
    in_frame,
    project_batch,
    project_point,
)
from .errors import (
    BehindCamera,
    DegeneratePoints,
    InsufficientPixels,
    OutOfFrame,
    TooFewCorrespondences,
)
from .geometry import RigidTransform
from .image_edge import EdgePixelSet
from .lidar_edge import Edge3D, sample_edge_points

# Offset (meters) of the two probe points used to compute the projected
# direction of a 3-D edge at a sample.
_DIRECTION_PROBE = 0.01


@dataclass(frozen=True)
class MatchGates:
    """Acceptance gates for sample-to-line matching."""

    kappa: int = 5
    max_pixel_dist: float = 12.0
    min_direction_cos: float = float(np.cos(np.radians(30.0)))
    max_eigen_ratio: float = 0.25
    min_correspondences: int = 30

    def tightened(self, max_pixel_dist: float = 5.0) -> "MatchGates":
        return MatchGates(
            kappa=self.kappa,
            max_pixel_dist=max_pixel_dist,
            min_direction_cos=self.min_direction_cos,
            max_eigen_ratio=self.max_eigen_ratio,
            min_correspondences=self.min_correspondences,
        )


@dataclass(frozen=True)
class LineFit2D:
    """Local straight-line model of an edge-pixel neighborhood.

    q is the neighborhood centroid, n the unit line normal, direction the
    unit line direction, and eigen_ratio = lambda_min / lambda_max of the
    scatter matrix (0 for perfectly collinear points).
    """

    q: np.ndarray
    n: np.ndarray
    direction: np.ndarray
    eigen_ratio: float


@dataclass(frozen=True)
class Correspondence:
    """One accepted pairing of a 3-D edge sample with a local image line."""

    lidar_point: np.ndarray
    bearing: np.ndarray
    depth: float
    line: LineFit2D
    edge_dir_3d: np.ndarray


def _canonical_sign_rows(vecs: np.ndarray) -> np.ndarray:
    """Flip rows of (N, 2) unit vectors so the first non-zero entry is positive."""
    first = vecs[:, 0]
    second = vecs[:, 1]
    sign = np.where(
        np.abs(first) > 1e-12, np.sign(first), np.where(second < 0.0, -1.0, 1.0)
    )
    sign = np.where(sign == 0.0, 1.0, sign)
    return vecs * sign[:, None]


def _fit_lines_batch(neighborhoods: np.ndarray) -> tuple[np.ndarray, ...]:
    """Fit a line to each (kappa, 2) neighborhood of an (M, kappa, 2) stack.

    Returns (q, n, direction, eigen_ratio) with the same sign conventions as
    :func:`fit_local_line`. Uses the closed form for 2x2 symmetric
    eigendecomposition.
    """
    q = neighborhoods.mean(axis=1)
    centered = neighborhoods - q[:, None, :]
    sxx = np.einsum("mk,mk->m", centered[:, :, 0], centered[:, :, 0])
    sxy = np.einsum("mk,mk->m", centered[:, :, 0], centered[:, :, 1])
    syy = np.einsum("mk,mk->m", centered[:, :, 1], centered[:, :, 1])
    mean_diag = 0.5 * (sxx + syy)
    radius = np.sqrt(0.25 * (sxx - syy) ** 2 + sxy * sxy)
    lam_max = mean_diag + radius
    lam_min = np.clip(mean_diag - radius, 0.0, None)
    with np.errstate(invalid="ignore", divide="ignore"):
        eigen_ratio = np.where(lam_max > 0.0, lam_min / lam_max, 1.0)

    # Eigenvector of lam_max: two algebraic candidates; pick the larger one
    # per row for stability, fall back to the axes when the matrix is
    # already diagonal.
    cand_a = np.stack([sxy, lam_max - sxx], axis=1)
    cand_b = np.stack([lam_max - syy, sxy], axis=1)
    norm_a = np.linalg.norm(cand_a, axis=1)
    norm_b = np.linalg.norm(cand_b, axis=1)
    direction = np.where((norm_a >= norm_b)[:, None], cand_a, cand_b)
    norms = np.linalg.norm(direction, axis=1)
    tiny = norms < 1e-12
    if np.any(tiny):
        axis_dir = np.where(
            (sxx >= syy)[:, None],
            np.tile([1.0, 0.0], (len(norms), 1)),
            np.tile([0.0, 1.0], (len(norms), 1)),
        )
        direction = np.where(tiny[:, None], axis_dir, direction)
        norms = np.where(tiny, 1.0, norms)
    direction = direction / norms[:, None]
    normal = np.stack([-direction[:, 1], direction[:, 0]], axis=1)
    direction = _canonical_sign_rows(direction)
    normal = _canonical_sign_rows(normal)
    return q, normal, direction, eigen_ratio


def fit_local_line(neighbors: np.ndarray) -> LineFit2D:
    """Fit a straight line to a pixel neighborhood.

    The line direction is the dominant eigenvector of the centered scatter
    matrix and the normal its perpendicular; both are sign-canonicalized
    (first non-zero component positive). Raises InsufficientPixels for fewer
    than 2 points and DegeneratePoints when every point coincides.
    """
    neighbors = np.asarray(neighbors, dtype=float).reshape(-1, 2)
    if neighbors.shape[0] < 2:
        raise InsufficientPixels("line fit needs at least 2 pixels")
    if np.max(np.abs(neighbors - neighbors[0])) < 1e-12:
        raise DegeneratePoints("all neighborhood pixels coincide")
    q, normal, direction, ratio = _fit_lines_batch(neighbors[None, :, :])
    return LineFit2D(
        q=q[0], n=normal[0], direction=direction[0], eigen_ratio=float(ratio[0])
    )


def project_lidar_point(
    point: np.ndarray, transform: RigidTransform, intr: CameraIntrinsics
) -> np.ndarray:
    """Project one LiDAR-frame point to a pixel, enforcing visibility.

    Raises BehindCamera past the near plane and OutOfFrame outside the image.
    """
    point_cam = transform.apply(np.asarray(point, dtype=float).reshape(3))
    pixel = project_point(point_cam, intr)
    if not bool(in_frame(pixel[None, :], intr)[0]):
        raise OutOfFrame(f"pixel {pixel} outside {intr.width}x{intr.height}")
    return pixel


@dataclass(frozen=True)
class CorrespondenceBatch:
    """Vectorized correspondence set (the optimizer's working format).

    total_samples counts every sample drawn from every edge, matched or not;
    it is the denominator of the matched-fraction statistic.
    """

    lidar_points: np.ndarray
    bearings: np.ndarray
    depths: np.ndarray
    line_q: np.ndarray
    line_n: np.ndarray
    line_dir: np.ndarray
    eigen_ratio: np.ndarray
    edge_dirs: np.ndarray
    total_samples: int

    def __len__(self) -> int:
        return self.lidar_points.shape[0]

    def to_list(self) -> list[Correspondence]:
        out = []
        for i in range(len(self)):
            out.append(
                Correspondence(
                    lidar_point=self.lidar_points[i],
                    bearing=self.bearings[i],
                    depth=float(self.depths[i]),
                    line=LineFit2D(
                        q=self.line_q[i],
                        n=self.line_n[i],
                        direction=self.line_dir[i],
                        eigen_ratio=float(self.eigen_ratio[i]),
                    ),
                    edge_dir_3d=self.edge_dirs[i],
                )
            )
        return out


@dataclass(frozen=True)
class SampledEdges:
    """Arc-length samples of a 3-D edge list, reusable across poses.

    Sampling depends only on the edges and the spacing, so callers that
    score many candidate extrinsics against the same scene build this once
    and pass it to :func:`match_sampled` for every pose.
    """

    points: np.ndarray
    dirs: np.ndarray


def sample_edges(edges: list[Edge3D], spacing: float) -> SampledEdges:
    """Sample every edge at the given spacing, keeping per-sample directions."""
    sample_blocks = []
    dir_blocks = []
    for edge in edges:
        samples = sample_edge_points(edge, spacing)
        sample_blocks.append(samples)
        dir_blocks.append(np.broadcast_to(edge.direction, samples.shape))
    if not sample_blocks:
        return SampledEdges(points=np.empty((0, 3)), dirs=np.empty((0, 3)))
    return SampledEdges(
        points=np.ascontiguousarray(np.concatenate(sample_blocks, axis=0)),
        dirs=np.ascontiguousarray(np.concatenate(dir_blocks, axis=0)),
    )


def match_edges(
    edges: list[Edge3D],
    spacing: float,
    edge_set: EdgePixelSet,
    transform: RigidTransform,
    intr: CameraIntrinsics,
    gates: MatchGates,
) -> CorrespondenceBatch:
    """Sample every edge and match the samples against the image edge set.

    Never raises on a low match count; callers that need a minimum apply it
    themselves (the matched fraction is legitimately near zero far from the
    true extrinsic).
    """
    return match_sampled(
        sample_edges(edges, spacing), edge_set, transform, intr, gates
    )


def match_sampled(
    sampled: SampledEdges,
    edge_set: EdgePixelSet,
    transform: RigidTransform,
    intr: CameraIntrinsics,
    gates: MatchGates,
) -> CorrespondenceBatch:
    """Match precomputed edge samples against the image edge set."""
    points = sampled.points
    edge_dirs = sampled.dirs
    total = points.shape[0]
    if total == 0:
        return _empty_batch(0)

    points_cam = transform.apply(points)
    pixels, valid = project_batch(points_cam, intr)
    visible = valid & in_frame(pixels, intr)
    if not np.any(visible):
        return _empty_batch(total)

    # Projected edge direction from two probe points along the 3-D line,
    # evaluated only for the in-frame samples.
    idx = np.nonzero(visible)[0]
    probe_fwd, fwd_ok = project_batch(
        transform.apply(points[idx] + _DIRECTION_PROBE * edge_dirs[idx]), intr
    )
    probe_bwd, bwd_ok = project_batch(
        transform.apply(points[idx] - _DIRECTION_PROBE * edge_dirs[idx]), intr
    )
    probes_ok = fwd_ok & bwd_ok
    if not np.any(probes_ok):
        return _empty_batch(total)
    idx = idx[probes_ok]
    probe_fwd = probe_fwd[probes_ok]
    probe_bwd = probe_bwd[probes_ok]

    neighbor_idx = edge_set.knn_query_batch(pixels[idx], gates.kappa)
    neighborhoods = edge_set.pixels[neighbor_idx]
    q, normal, line_dir, eigen_ratio = _fit_lines_batch(neighborhoods)

    proj_dir = probe_fwd - probe_bwd
    proj_norm = np.linalg.norm(proj_dir, axis=1)
    proj_ok = proj_norm > 1e-12
    proj_dir = np.where(proj_ok[:, None], proj_dir, [1.0, 0.0]) / np.where(
        proj_ok, proj_norm, 1.0
    )[:, None]

    point_line_dist = np.abs(np.einsum("md,md->m", normal, pixels[idx] - q))
    direction_cos = np.abs(np.einsum("md,md->m", proj_dir, line_dir))
    accept = (
        proj_ok
        & (point_line_dist <= gates.max_pixel_dist)
        & (direction_cos >= gates.min_direction_cos)
        & (eigen_ratio <= gates.max_eigen_ratio)
    )

    keep = idx[accept]
    depths = np.linalg.norm(points[keep], axis=1)
    positive = depths > 1e-9
    keep = keep[positive]
    sel = accept.copy()
    sel[np.nonzero(accept)[0][~positive]] = False
    depths = depths[positive]
    return CorrespondenceBatch(
        lidar_points=points[keep],
        bearings=points[keep] / depths[:, None],
        depths=depths,
        line_q=q[sel],
        line_n=normal[sel],
        line_dir=line_dir[sel],
        eigen_ratio=eigen_ratio[sel],
        edge_dirs=edge_dirs[keep],
        total_samples=total,
    )


def _empty_batch(total: int) -> CorrespondenceBatch:
    return CorrespondenceBatch(
        lidar_points=np.empty((0, 3)),
        bearings=np.empty((0, 3)),
        depths=np.empty(0),
        line_q=np.empty((0, 2)),
        line_n=np.empty((0, 2)),
        line_dir=np.empty((0, 2)),
        eigen_ratio=np.empty(0),
        edge_dirs=np.empty((0, 3)),
        total_samples=total,
    )


def build_correspondences(
    edges: list[Edge3D],
    spacing: float,
    edge_set: EdgePixelSet,
    transform: RigidTransform,
    intr: CameraIntrinsics,
    gates: MatchGates,
) -> list[Correspondence]:
    """Matched correspondences as objects; raises when too few survive."""
    batch = match_edges(edges, spacing, edge_set, transform, intr, gates)
    if len(batch) < gates.min_correspondences:
        raise TooFewCorrespondences(
            f"{len(batch)} correspondences < required {gates.min_correspondences}"
        )
    return batch.to_list()
