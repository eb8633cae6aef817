"""Depth-continuous 3-D edge extraction from a point cloud.

The cloud is cut into axis-aligned cubic voxels; inside each voxel planes are
pulled out greedily with RANSAC and refined by least squares; plane pairs
whose dihedral angle is plausible and that actually share points near their
intersection produce an edge segment, clipped to the extent both planes
observed. Edges of the same physical line recovered in adjacent voxels are
merged afterwards.

Only depth-CONTINUOUS edges (plane/plane folds) are produced. Object
silhouettes against a background are deliberately not edges here: real
scanners smear returns across such depth jumps (foreground inflation and
bleeding points), which makes silhouette points geometrically untrustworthy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, NearParallel, NoEdgesFound

VOXEL_SIZE_OUTDOOR = 1.0
VOXEL_SIZE_INDOOR = 0.5


@dataclass(frozen=True)
class PointCloud:
    """Point positions in the LiDAR frame, plus optional per-point intensity."""

    points: np.ndarray
    intensity: np.ndarray | None = None
    nan_dropped: int = 0

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if points.shape[0] == 0:
            raise EmptyCloud("point cloud has no points")
        if not np.all(np.isfinite(points)):
            raise ValueError("point cloud contains non-finite values; drop them on load")
        object.__setattr__(self, "points", points)
        if self.intensity is not None:
            intensity = np.asarray(self.intensity, dtype=float).reshape(-1)
            if intensity.shape[0] != points.shape[0]:
                raise ValueError("intensity length does not match point count")
            object.__setattr__(self, "intensity", intensity)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class VoxelGrid:
    """Partition of point indices into cubic cells of side voxel_size."""

    voxel_size: float
    cells: dict
    min_points_per_voxel: int

    def plane_cells(self) -> list[tuple[int, int, int]]:
        """Cell keys dense enough for plane fitting, in sorted (deterministic) order."""
        return [
            key
            for key in sorted(self.cells)
            if self.cells[key].size >= self.min_points_per_voxel
        ]


@dataclass(frozen=True)
class FittedPlane:
    """Plane n . x = offset with the indices of its supporting points."""

    normal: np.ndarray
    offset: float
    inlier_indices: np.ndarray
    rms: float


@dataclass(frozen=True)
class Edge3D:
    """Line segment point_on_line + t * direction for t in [t_min, t_max].

    point_on_line is the minimum-norm point of the infinite line and the
    direction sign makes its first non-zero component positive, so equal
    lines always compare equal. ``source`` records provenance (voxel cell and
    plane pair) for diagnostics.
    """

    point_on_line: np.ndarray
    direction: np.ndarray
    t_min: float
    t_max: float
    source: tuple = ()

    def __post_init__(self):
        direction = np.asarray(self.direction, dtype=float).reshape(3)
        point = np.asarray(self.point_on_line, dtype=float).reshape(3)
        if not self.t_min < self.t_max:
            raise ValueError("edge extent is empty")
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "point_on_line", point)

    @property
    def length(self) -> float:
        return self.t_max - self.t_min

    def endpoints(self) -> np.ndarray:
        return np.stack(
            [
                self.point_on_line + self.t_min * self.direction,
                self.point_on_line + self.t_max * self.direction,
            ]
        )


@dataclass(frozen=True)
class RansacParams:
    dist_threshold: float = 0.02
    max_planes: int = 5
    min_inliers: int = 30
    max_iterations: int = 200
    # Early-stop confidence for the adaptive iteration bound; affects speed
    # only, never which plane wins a given draw sequence.
    confidence: float = 0.999
    # Minimum standard deviation of the inliers along the plane's NARROW
    # in-plane axis. A fit supported by a thin sliver of points (a face
    # cut a few centimeters from its edge by the voxel grid) has a normal
    # dominated by noise; such planes produce edges tilted by degrees.
    min_patch_std: float = 0.04
    # A maximal-consensus fit can thread narrow strips of several distinct
    # surfaces (two parallel box faces, or a wall and the floor near their
    # corner) and still be perfectly planar. Its in-plane support is then
    # fragmented: low fill of the support bounding box, or a wide empty
    # hole across the narrow axis. Fragmented-looking support triggers a
    # physical test: the local surface normal around each inlier must agree
    # with the plane normal, which strips of foreign surfaces never do.
    min_support_fill: float = 0.4
    max_support_hole: float = 0.12
    support_cell: float = 0.06
    normal_agreement_radius: float = 0.15
    normal_agreement_min_cos: float = 0.9


@dataclass(frozen=True)
class EdgeExtractionConfig:
    voxel_size: float = VOXEL_SIZE_OUTDOOR
    min_points_per_voxel: int = 30
    ransac: RansacParams = field(default_factory=RansacParams)
    angle_range_deg: tuple[float, float] = (30.0, 150.0)
    conn_radius: float = 0.10
    conn_min_points: int = 10
    edge_margin: float = 0.05
    merge_angle_deg: float = 1.0
    merge_lateral: float = 0.02
    # Post-merge length floor. A segment this short was fit from a sliver of
    # support inside one voxel and its direction is dominated by noise.
    min_edge_length: float = 0.25
    # Largest unsupported stretch the merge may bridge. Occluder shadows on
    # a long edge are wider than this; a single skipped voxel is not.
    max_support_gap: float = 0.6


def voxelize(
    cloud: PointCloud, voxel_size: float, min_points_per_voxel: int = 30
) -> VoxelGrid:
    """Assign every point to the cell floor(coordinate / voxel_size)."""
    if voxel_size <= 0.0:
        raise ValueError("voxel_size must be positive")
    keys = np.floor(cloud.points / voxel_size).astype(np.int64)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    sorted_keys = keys[order]
    boundaries = np.nonzero(np.any(np.diff(sorted_keys, axis=0) != 0, axis=1))[0] + 1
    cells = {}
    for chunk in np.split(order, boundaries):
        key = tuple(int(c) for c in keys[chunk[0]])
        cells[key] = np.sort(chunk)
    return VoxelGrid(
        voxel_size=voxel_size, cells=cells, min_points_per_voxel=min_points_per_voxel
    )


def _canonical_normal(normal: np.ndarray, offset: float) -> tuple[np.ndarray, float]:
    """Flip the normal so its first non-negligible component is positive."""
    for component in normal:
        if abs(component) > 1e-12:
            if component < 0.0:
                return -normal, -offset
            break
    return normal, offset


def _least_squares_plane(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Best-fit plane through a point set (normal, offset)."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered
    eigvals, eigvecs = np.linalg.eigh(cov)
    normal = eigvecs[:, 0]
    return _canonical_normal(normal, float(normal @ centroid))


def _support_fragmented(inlier_pts: np.ndarray, params: RansacParams) -> bool:
    """True when the in-plane support looks like disjoint strips, not a patch."""
    centered = inlier_pts - inlier_pts.mean(axis=0)
    _, eigvecs = np.linalg.eigh(centered.T @ centered)
    uv = centered @ eigvecs[:, 1:]
    cell = params.support_cell
    occupied = np.unique(np.floor(uv / cell).astype(np.int64), axis=0)
    span = np.maximum(np.floor(np.ptp(uv, axis=0) / cell) + 1.0, 1.0)
    fill = occupied.shape[0] / float(span[0] * span[1])
    narrow = np.sort(uv[:, 0])
    hole = float(np.diff(narrow).max()) if narrow.size > 1 else 0.0
    return fill < params.min_support_fill or hole > params.max_support_hole


def _normals_agree(
    tree, voxel_pts: np.ndarray, inlier_pts: np.ndarray,
    plane_normal: np.ndarray, params: RansacParams,
) -> bool:
    """Median agreement between the plane normal and local surface normals.

    Evaluated at evenly spaced inliers against neighborhoods drawn from the
    whole voxel. Sparse support (too few usable neighborhoods) passes: the
    test exists to veto dense fits that stitch strips of foreign surfaces,
    not to punish distant patches with wide scan-line spacing.
    """
    n = inlier_pts.shape[0]
    probes = inlier_pts[np.unique(np.linspace(0, n - 1, min(n, 80)).astype(int))]
    neighborhoods = tree.query_ball_point(probes, params.normal_agreement_radius)
    cosines = []
    for nb_idx in neighborhoods:
        if len(nb_idx) < 12:
            continue
        nb = voxel_pts[nb_idx]
        nb = nb - nb.mean(axis=0)
        _, eigvecs = np.linalg.eigh(nb.T @ nb)
        cosines.append(abs(float(eigvecs[:, 0] @ plane_normal)))
    if len(cosines) < 10:
        return True
    return float(np.median(cosines)) >= params.normal_agreement_min_cos


def ransac_extract_planes(
    points: np.ndarray, params: RansacParams, seed
) -> list[FittedPlane]:
    """Greedy sequential RANSAC plane extraction within one voxel.

    ``seed`` may be anything numpy's SeedSequence accepts. Identical
    (points, params, seed) give an identical plane list. Inlier indices refer
    to rows of ``points``.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    remaining = np.arange(points.shape[0])
    planes: list[FittedPlane] = []
    tree = None

    while len(planes) < params.max_planes and remaining.size >= params.min_inliers:
        subset = points[remaining]
        n_pts = subset.shape[0]
        best_count = 0
        best_mask = None
        iteration = 0
        needed = params.max_iterations
        while iteration < min(needed, params.max_iterations):
            iteration += 1
            pick = rng.choice(n_pts, size=3, replace=False)
            p0, p1, p2 = subset[pick]
            normal = np.cross(p1 - p0, p2 - p0)
            norm = np.linalg.norm(normal)
            if norm < 1e-12:
                continue
            normal = normal / norm
            dist = np.abs(subset @ normal - normal @ p0)
            mask = dist <= params.dist_threshold
            count = int(mask.sum())
            if count > best_count:
                best_count = count
                best_mask = mask
                ratio = count / n_pts
                denom = np.log1p(-min(ratio**3, 1.0 - 1e-12))
                needed = int(np.ceil(np.log(1.0 - params.confidence) / denom))
        if best_count < params.min_inliers or best_mask is None:
            break

        # Least-squares refinement, re-selecting inliers against the refined
        # plane so the threshold invariant holds for the final set. Iterating
        # to a fixed point matters when the residual spread is comparable to
        # the band (grazing incidence): two rounds still carry the tilt of
        # whatever three points seeded the hypothesis.
        mask = best_mask
        normal, offset = None, None
        for _ in range(10):
            normal, offset = _least_squares_plane(subset[mask])
            dist = np.abs(subset @ normal - offset)
            new_mask = dist <= params.dist_threshold
            if np.array_equal(new_mask, mask):
                break
            mask = new_mask
        if int(mask.sum()) < params.min_inliers:
            break
        inliers = remaining[mask]
        inlier_pts = points[inliers]
        rms = float(np.sqrt(np.mean((inlier_pts @ normal - offset) ** 2)))
        centered = inlier_pts - inlier_pts.mean(axis=0)
        scatter_eigvals = np.linalg.eigvalsh(centered.T @ centered)
        patch_std = float(np.sqrt(scatter_eigvals[1] / inlier_pts.shape[0]))
        keep = patch_std >= params.min_patch_std
        if keep and _support_fragmented(inlier_pts, params):
            if tree is None:
                tree = cKDTree(points)
            keep = _normals_agree(tree, points, inlier_pts, normal, params)
        if keep:
            planes.append(
                FittedPlane(
                    normal=normal, offset=float(offset), inlier_indices=inliers, rms=rms
                )
            )
        # Remove the plane's points from the pool whether or not the patch
        # was kept: the inliers plus their noise tails. Leaving points just
        # beyond the inlier band would let a plane's own measurement noise
        # masquerade as a second, parallel plane a few centimeters away,
        # and leaving a rejected sliver in the pool would loop forever.
        removal = dist <= 3.0 * params.dist_threshold
        remaining = remaining[~removal]

    return _refit_excluding_junctions(points, planes, params)


def _refit_excluding_junctions(
    points: np.ndarray, planes: list[FittedPlane], params: RansacParams
) -> list[FittedPlane]:
    """Refit each plane without points that sit on another plane in the cell.

    Near a dihedral junction the other surface's points fall inside this
    plane's inlier band and lever its fit by millimeters to centimeters at
    the corner. Dropping every inlier that lies within the other plane's
    noise tail (3x the band) before the final fit removes that pull; the
    published inlier set is left untouched so extent and connectivity still
    see the full support.
    """
    if len(planes) < 2:
        return planes
    refitted = []
    for idx, plane in enumerate(planes):
        pts = points[plane.inlier_indices]
        keep = np.ones(pts.shape[0], dtype=bool)
        for jdx, other in enumerate(planes):
            if jdx == idx:
                continue
            dist = np.abs(pts @ other.normal - other.offset)
            keep &= dist > 3.0 * params.dist_threshold
        if int(keep.sum()) < params.min_inliers:
            refitted.append(plane)
            continue
        normal, offset = _least_squares_plane(pts[keep])
        rms = float(np.sqrt(np.mean((pts[keep] @ normal - offset) ** 2)))
        refitted.append(replace(plane, normal=normal, offset=offset, rms=rms))
    return refitted


def intersect_planes(
    plane_a: FittedPlane,
    plane_b: FittedPlane,
    points: np.ndarray,
    edge_margin: float = 0.05,
    min_sin_angle: float = 0.017,
    source: tuple = (),
) -> Edge3D | None:
    """Edge segment where two fitted planes meet.

    The infinite line is the minimum-norm solution of the two plane
    equations; its usable extent is the overlap of both planes' inlier spans
    along the line, shrunk by ``edge_margin`` at each end. Returns None when
    that overlap is empty. Raises NearParallel when the planes' normals are
    within asin(min_sin_angle) of parallel.
    """
    na, nb = plane_a.normal, plane_b.normal
    cross = np.cross(na, nb)
    cross_norm = float(np.linalg.norm(cross))
    if cross_norm < min_sin_angle:
        raise NearParallel(f"|n_a x n_b| = {cross_norm:.2e}")
    direction = cross / cross_norm
    # Minimum-norm point of {n_a.x = d_a, n_b.x = d_b}: a combination of the
    # normals, with the Gram matrix inverted in closed form.
    dot = float(na @ nb)
    denom = 1.0 - dot * dot
    ca = (plane_a.offset - plane_b.offset * dot) / denom
    cb = (plane_b.offset - plane_a.offset * dot) / denom
    point = ca * na + cb * nb

    t_a = (points[plane_a.inlier_indices] - point) @ direction
    t_b = (points[plane_b.inlier_indices] - point) @ direction
    t_min = max(t_a.min(), t_b.min()) + edge_margin
    t_max = min(t_a.max(), t_b.max()) - edge_margin
    if not t_min < t_max:
        return None

    # Canonicalize: min-norm point stays min-norm, but the direction sign
    # convention may flip the parameterization.
    for component in direction:
        if abs(component) > 1e-12:
            if component < 0.0:
                direction = -direction
                t_min, t_max = -t_max, -t_min
            break
    return Edge3D(
        point_on_line=point,
        direction=direction,
        t_min=float(t_min),
        t_max=float(t_max),
        source=source,
    )


def plane_pair_candidates(
    planes: list[FittedPlane],
    angle_range_deg: tuple[float, float],
    points: np.ndarray,
    conn_radius: float = 0.10,
    conn_min_points: int = 10,
    excl_band: float = 0.04,
) -> list[tuple[int, int]]:
    """Index pairs of planes that can form a physical dihedral edge.

    A pair passes when the angle between normals lies inside
    ``angle_range_deg`` and each plane has at least ``conn_min_points``
    inliers within ``conn_radius`` of the candidate intersection line that
    are NOT also within ``excl_band`` of the other plane. The exclusivity
    matters: one plane's infinite extension can slice through the other's
    physical surface, and the stripe of surface points along the slice is
    an inlier of both planes. Counting those points as support would
    certify an intersection where only one surface exists; demanding
    support each plane can call its own discards such pairs, while a real
    dihedral keeps a band of exclusive points right up to the corner.
    """
    lo = np.radians(angle_range_deg[0])
    hi = np.radians(angle_range_deg[1])
    pairs = []
    for i in range(len(planes)):
        for j in range(i + 1, len(planes)):
            pa, pb = planes[i], planes[j]
            cos_angle = np.clip(pa.normal @ pb.normal, -1.0, 1.0)
            angle = np.arccos(cos_angle)
            if not lo <= angle <= hi:
                continue
            try:
                line = intersect_planes(pa, pb, points, edge_margin=0.0)
            except NearParallel:
                continue
            if line is None:
                continue
            connected = True
            for plane, other in ((pa, pb), (pb, pa)):
                own = points[plane.inlier_indices]
                rel = own - line.point_on_line
                along = rel @ line.direction
                perp = rel - np.outer(along, line.direction)
                close = np.linalg.norm(perp, axis=1) <= conn_radius
                exclusive = (
                    np.abs(own @ other.normal - other.offset) > excl_band
                )
                if int((close & exclusive).sum()) < conn_min_points:
                    connected = False
                    break
            if connected:
                pairs.append((i, j))
    return pairs


def _merge_colinear(
    edges: list[Edge3D], angle_deg: float, lateral: float, max_gap: float
) -> list[Edge3D]:
    """Merge near-duplicate segments of one physical line across voxels.

    Groups are built with union-find on pairwise colinearity (directions
    within ``angle_deg``, mutual lateral offset within ``lateral``); each
    group is refit to one line, but its extent is the union of the member
    extents, split wherever consecutive members leave a gap longer than
    ``max_gap``. An occluder in front of a long edge removes a stretch of
    support from both sensors; bridging that stretch would manufacture
    samples on a section of line no sensor observed.
    """
    if len(edges) <= 1:
        return list(edges)
    cos_tol = np.cos(np.radians(angle_deg))
    parent = list(range(len(edges)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def lateral_offset(edge: Edge3D, other: Edge3D) -> float:
        rel = other.point_on_line - edge.point_on_line
        perp = rel - (rel @ edge.direction) * edge.direction
        return float(np.linalg.norm(perp))

    for i in range(len(edges)):
        for j in range(i + 1, len(edges)):
            a, b = edges[i], edges[j]
            if abs(float(a.direction @ b.direction)) < cos_tol:
                continue
            if lateral_offset(a, b) > lateral or lateral_offset(b, a) > lateral:
                continue
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, list[int]] = {}
    for i in range(len(edges)):
        groups.setdefault(find(i), []).append(i)

    merged = []
    for root in sorted(groups):
        members = [edges[i] for i in groups[root]]
        if len(members) == 1:
            merged.append(members[0])
            continue
        # Refit one line through every member, endpoints weighted by member
        # length. A single voxel determines its segment's direction from a
        # patch a few decimeters across, so each member carries a small
        # random tilt; inheriting any one member's line would stretch that
        # tilt over the whole merged extent, while the weighted fit averages
        # the tilts away.
        base = max(members, key=lambda e: e.length)
        endpoints = np.concatenate([m.endpoints() for m in members])
        weights = np.repeat([m.length for m in members], 2)
        centroid = (weights[:, None] * endpoints).sum(axis=0) / weights.sum()
        centered = endpoints - centroid
        scatter = np.einsum("n,ni,nj->ij", weights, centered, centered)
        eigvals, eigvecs = np.linalg.eigh(scatter)
        direction = eigvecs[:, 2]
        for component in direction:
            if abs(component) > 1e-12:
                if component < 0.0:
                    direction = -direction
                break
        point = centroid - (centroid @ direction) * direction
        intervals = sorted(
            (min(t0, t1), max(t0, t1))
            for t0, t1 in ((m.endpoints() - point) @ direction for m in members)
        )
        runs = [list(intervals[0])]
        for t0, t1 in intervals[1:]:
            if t0 - runs[-1][1] <= max_gap:
                runs[-1][1] = max(runs[-1][1], t1)
            else:
                runs.append([t0, t1])
        for t0, t1 in runs:
            merged.append(
                Edge3D(
                    point_on_line=point,
                    direction=direction,
                    t_min=float(t0),
                    t_max=float(t1),
                    source=base.source,
                )
            )
    return merged


def extract_depth_continuous_edges(
    cloud: PointCloud, config: EdgeExtractionConfig, seed: int = 0
) -> list[Edge3D]:
    """Full voxel -> planes -> pairs -> intersection pipeline.

    Each dense voxel is processed with an independent RNG stream derived
    from (seed, cell index), so the per-voxel work may be farmed out in any
    order (or in parallel) with identical results; output edges follow
    sorted cell order. Raises NoEdgesFound when nothing survives.
    """
    grid = voxelize(cloud, config.voxel_size, config.min_points_per_voxel)
    edges: list[Edge3D] = []
    for cell in grid.plane_cells():
        indices = grid.cells[cell]
        pts = cloud.points[indices]
        cell_seed = (seed, cell[0] + 2**20, cell[1] + 2**20, cell[2] + 2**20)
        planes = ransac_extract_planes(pts, config.ransac, cell_seed)
        if len(planes) < 2:
            continue
        pairs = plane_pair_candidates(
            planes,
            config.angle_range_deg,
            pts,
            conn_radius=config.conn_radius,
            conn_min_points=config.conn_min_points,
            excl_band=2.0 * config.ransac.dist_threshold,
        )
        for i, j in pairs:
            edge = intersect_planes(
                planes[i],
                planes[j],
                pts,
                edge_margin=config.edge_margin,
                source=(cell, i, j),
            )
            if edge is not None:
                edges.append(edge)
    edges = _merge_colinear(
        edges, config.merge_angle_deg, config.merge_lateral, config.max_support_gap
    )
    edges = [edge for edge in edges if edge.length >= config.min_edge_length]
    if not edges:
        raise NoEdgesFound("no depth-continuous edges extracted")
    return edges


def sample_edge_points(edge: Edge3D, spacing: float) -> np.ndarray:
    """Uniform 3-D samples along the edge, spacing apart, starting at t_min.

    Sample count is floor(length / spacing) + 1, so a segment shorter than
    one spacing still contributes its t_min point.
    """
    if spacing <= 0.0:
        raise ValueError("spacing must be positive")
    count = int(np.floor((edge.t_max - edge.t_min) / spacing)) + 1
    t = edge.t_min + spacing * np.arange(count)
    return edge.point_on_line + t[:, None] * edge.direction
