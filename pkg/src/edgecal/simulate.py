"""Synthetic scenes with exact ground truth, for validation and testing.

Scenes are collections of bounded rectangles. Ground-truth 3-D edges are the
analytic dihedral intersection segments of touching rectangle pairs, so the
whole extraction/matching/optimization stack can be checked against known
answers. A simulated scan ray-casts a regular angular grid from the LiDAR
origin and corrupts each return with exactly the estimator's measurement
model, inverted: the emitted measurement is d = d_true - delta_d along
bearing w = w_true boxplus (-delta_w), so the true point is recovered by the
model's forward perturbation to first order.

Optionally the scan reproduces the failure mode of real scanners at depth
discontinuities: a beam has finite divergence, so rays passing within the
divergence half-angle of a foreground silhouette return a foreground-depth
point (inflating the object outward by about depth x half-angle) plus a few
pulses smeared between foreground and background ("bleeding points"). Depth-
continuous dihedral edges are unaffected, which is the reason this package
calibrates against them and not against silhouettes.

Image-side ground truth comes in three flavors:

- render_edge_image: edge pixels with a smooth perpendicular jitter field
  (marginally N(0, sigma_i^2) per pixel, correlation length jitter_corr_px
  along the edge) rounded to the integer grid, plus a shaded grayscale
  rendering for exercising the real Canny path,
- exact_edge_pixels: sub-pixel, noise-free projections used as the oracle
  when a test needs exactness beyond pixel quantization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .camera import CameraIntrinsics, Z_MIN, in_frame, project_batch
from .errors import NoVisibleEdges
from .geometry import RigidTransform, TwistIncrement, euler_zyx_to_rotation, se3_boxplus, tangent_basis_batch
from .image_edge import EdgePixelSet, GrayImage
from .lidar_edge import Edge3D, PointCloud
from .noise import LidarNoiseParams

# Half of a Livox-class 0.28 deg vertical beam divergence, in radians.
DIVERGENCE_HALF_ANGLE = 0.0024


def default_intrinsics() -> CameraIntrinsics:
    """Camera used by simulated scenes (VGA, mild barrel distortion)."""
    return CameraIntrinsics(
        fx=460.0, fy=460.0, cx=320.0, cy=240.0, width=640, height=480, k1=-0.05
    )


def nominal_extrinsic() -> RigidTransform:
    """x-forward LiDAR viewed by a z-forward camera, co-located."""
    return RigidTransform(
        euler_zyx_to_rotation(0.0, -np.pi / 2.0, np.pi / 2.0), np.zeros(3)
    )


@dataclass(frozen=True)
class Rectangle:
    """Bounded plane patch: corner + s*edge_u + t*edge_v, s,t in [0,1]."""

    corner: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    albedo: float = 0.7

    def __post_init__(self):
        object.__setattr__(self, "corner", np.asarray(self.corner, dtype=float))
        object.__setattr__(self, "edge_u", np.asarray(self.edge_u, dtype=float))
        object.__setattr__(self, "edge_v", np.asarray(self.edge_v, dtype=float))

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)

    @property
    def offset(self) -> float:
        return float(self.normal @ self.corner)

    def boundary_segments(self) -> list[tuple[np.ndarray, np.ndarray]]:
        c = self.corner
        u, v = self.edge_u, self.edge_v
        return [(c, c + u), (c + u, c + u + v), (c + u + v, c + v), (c + v, c)]


@dataclass(frozen=True)
class BleedingParams:
    enabled: bool = False
    divergence_half_angle: float = DIVERGENCE_HALF_ANGLE
    depth_gap: float = 0.3
    bridge_points: int = 3


@dataclass(frozen=True)
class ScanParams:
    """Regular az/el angular grid centered on the LiDAR x axis."""

    angular_step_deg: float = 0.1
    az_range_deg: float = 36.0
    el_range_deg: float = 29.0
    noise: LidarNoiseParams | None = field(default_factory=LidarNoiseParams)
    bleeding: BleedingParams = field(default_factory=BleedingParams)
    min_range: float = 0.3


@dataclass(frozen=True)
class SyntheticScene:
    rectangles: list[Rectangle]
    gt_edges: list[Edge3D]
    gt_extrinsic: RigidTransform
    kind: str
    seed: int


def make_edge(p0: np.ndarray, p1: np.ndarray, source: tuple = ()) -> Edge3D:
    """Edge3D through two points with the canonical parameterization."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    direction = p1 - p0
    direction = direction / np.linalg.norm(direction)
    for component in direction:
        if abs(component) > 1e-12:
            if component < 0.0:
                direction = -direction
            break
    anchor = p0 - (p0 @ direction) * direction
    t0 = float((p0 - anchor) @ direction)
    t1 = float((p1 - anchor) @ direction)
    return Edge3D(
        point_on_line=anchor,
        direction=direction,
        t_min=min(t0, t1),
        t_max=max(t0, t1),
        source=source,
    )


def _line_rect_interval(
    point: np.ndarray, direction: np.ndarray, rect: Rectangle, tol: float = 1e-9
) -> tuple[float, float] | None:
    """Parameter interval of a line lying in the rect's plane, inside its bounds."""
    lo, hi = -np.inf, np.inf
    for axis_vec in (rect.edge_u, rect.edge_v):
        length = float(np.linalg.norm(axis_vec))
        unit = axis_vec / length
        a0 = float((point - rect.corner) @ unit)
        da = float(direction @ unit)
        if abs(da) < 1e-12:
            if a0 < -tol or a0 > length + tol:
                return None
            continue
        t0 = (-a0) / da
        t1 = (length - a0) / da
        lo = max(lo, min(t0, t1))
        hi = min(hi, max(t0, t1))
    if not lo < hi:
        return None
    return lo, hi


def _dihedral_edges(rectangles: list[Rectangle]) -> list[Edge3D]:
    """Analytic fold edges: segments shared by two non-parallel rectangles."""
    edges = []
    for i in range(len(rectangles)):
        for j in range(i + 1, len(rectangles)):
            ra, rb = rectangles[i], rectangles[j]
            na, nb = ra.normal, rb.normal
            cross = np.cross(na, nb)
            cross_norm = float(np.linalg.norm(cross))
            if cross_norm < np.sin(np.radians(5.0)):
                continue
            direction = cross / cross_norm
            dot = float(na @ nb)
            denom = 1.0 - dot * dot
            ca = (ra.offset - rb.offset * dot) / denom
            cb = (rb.offset - ra.offset * dot) / denom
            point = ca * na + cb * nb
            span_a = _line_rect_interval(point, direction, ra)
            span_b = _line_rect_interval(point, direction, rb)
            if span_a is None or span_b is None:
                continue
            t0 = max(span_a[0], span_b[0])
            t1 = min(span_a[1], span_b[1])
            if t1 - t0 < 0.05:
                continue
            edges.append(
                make_edge(
                    point + t0 * direction, point + t1 * direction, source=("gt", i, j)
                )
            )
    return edges


def _box_rectangles(
    center_xy: tuple[float, float],
    half_x: float,
    half_y: float,
    z_bottom: float,
    height: float,
    yaw: float,
    albedo_base: float,
) -> list[Rectangle]:
    """Four vertical sides and the top of an upright box."""
    cx, cy = center_xy
    cos_y, sin_y = np.cos(yaw), np.sin(yaw)
    rot = np.array([[cos_y, -sin_y], [sin_y, cos_y]])
    corners2d = np.array(
        [[-half_x, -half_y], [half_x, -half_y], [half_x, half_y], [-half_x, half_y]]
    ) @ rot.T + np.array([cx, cy])
    up = np.array([0.0, 0.0, height])
    rects = []
    for k in range(4):
        a = np.array([*corners2d[k], z_bottom])
        b = np.array([*corners2d[(k + 1) % 4], z_bottom])
        rects.append(
            Rectangle(corner=a, edge_u=b - a, edge_v=up, albedo=albedo_base + 0.08 * k)
        )
    top_corner = np.array([*corners2d[0], z_bottom + height])
    rects.append(
        Rectangle(
            corner=top_corner,
            edge_u=np.array([*(corners2d[1] - corners2d[0]), 0.0]),
            edge_v=np.array([*(corners2d[3] - corners2d[0]), 0.0]),
            albedo=albedo_base + 0.32,
        )
    )
    return rects


def _gt_offset() -> TwistIncrement:
    # Fixed true deviation from the nominal mounting; large enough that a
    # lazy "just use nominal" implementation cannot pass the recovery tests.
    return TwistIncrement(
        delta_theta=np.array([0.010, -0.008, 0.012]),
        delta_t=np.array([0.04, -0.03, 0.05]),
    )


def generate_scene(kind: str, seed: int = 0) -> SyntheticScene:
    """Deterministic scene of the requested kind.

    Kinds: "room" (floor, three walls, five furniture boxes; edges in
    several directions all over the image), "room_bare" (floor and two
    walls only, exactly three dihedral edges), "facade" (large wall with
    protruding boxes, outdoor scale), "degenerate_one_direction" (grooved
    wall, every edge vertical), "degenerate_top_heavy" (edges confined to
    the top third of the image).
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 5)))
    if kind in ("room", "room_bare"):
        # Plane offsets deliberately sit ~0.2 m away from multiples of the
        # usual voxel sizes. A surface hugging a cell boundary has its noise
        # distribution truncated by the grid (a half-normal bias of roughly
        # 0.8 sigma), and a dihedral corner close to a boundary leaves the
        # second plane only a thin sliver of support in the corner cells;
        # no real room aligns itself with our grid, so the synthetic ones
        # should not either. Side walls are pulled inward far enough that
        # the scan's azimuth window covers a good stretch of each. Wall
        # tops sit above both the scan elevation cone and the image frame,
        # so no sensor sees the top rim (a rim inside the grid leaves a
        # centimeters-thin slab of points in the topmost cells, which fits
        # as a spurious horizontal plane).
        x_wall, y_left, y_right, z_floor = 4.77, 1.79, -1.71, -1.29
        wall_h = 3.8
        rects = [
            Rectangle(
                [1.2, y_right, z_floor],
                [x_wall - 1.2, 0.0, 0.0],
                [0.0, y_left - y_right, 0.0],
                0.55,
            ),
            Rectangle(
                [x_wall, y_right, z_floor],
                [0.0, y_left - y_right, 0.0],
                [0.0, 0.0, wall_h],
                0.85,
            ),
            Rectangle(
                [1.2, y_left, z_floor],
                [x_wall - 1.2, 0.0, 0.0],
                [0.0, 0.0, wall_h],
                0.40,
            ),
        ]
        if kind == "room":
            rects.append(
                Rectangle(
                    [1.2, y_right, z_floor],
                    [x_wall - 1.2, 0.0, 0.0],
                    [0.0, 0.0, wall_h],
                    0.70,
                )
            )
            # Five pieces of furniture spread in depth, width, and height.
            # Every box adds vertical and horizontal dihedral edges at its
            # own depth; the depth spread decouples translation from
            # rotation in the calibration information matrix, and the
            # height spread (chest to cabinet) distributes edges over the
            # full image. Base placements keep every box inside both
            # sensors' fields of view and leave generous clearance between
            # boxes and from the walls, so no two near-parallel faces come
            # close enough for the plane extractor to bridge them; the
            # seeded jitter is small against those margins.
            slots = [
                (2.05, 0.62, 0.30, 0.22, 0.65),
                (2.75, -0.80, 0.28, 0.35, 1.05),
                (3.45, 0.75, 0.33, 0.26, 0.80),
                (4.05, -0.30, 0.25, 0.30, 1.35),
                (4.35, 1.15, 0.22, 0.35, 2.20),
            ]
            for b, (bx, by, hx, hy, hz) in enumerate(slots):
                rects.extend(
                    _box_rectangles(
                        (
                            bx + float(rng.uniform(-0.1, 0.1)),
                            by + float(rng.uniform(-0.1, 0.1)),
                        ),
                        half_x=hx,
                        half_y=hy,
                        z_bottom=z_floor,
                        height=hz + float(rng.uniform(-0.1, 0.1)),
                        yaw=float(rng.uniform(-0.35, 0.35)),
                        albedo_base=0.22 + 0.06 * b,
                    )
                )
    elif kind == "facade":
        rects = [
            Rectangle([7.79, -5.0, -2.21], [0.0, 10.0, 0.0], [0.0, 0.0, 5.0], 0.75),
            Rectangle([4.47, -5.0, -2.21], [3.32, 0.0, 0.0], [0.0, 10.0, 0.0], 0.5),
        ]
        for b in range(3):
            y = -3.0 + 2.8 * b + float(rng.uniform(-0.3, 0.3))
            z = float(rng.uniform(-0.8, 1.2))
            rects.extend(
                _box_rectangles(
                    (7.24, y),
                    half_x=0.4,
                    half_y=float(rng.uniform(0.5, 0.8)),
                    z_bottom=z,
                    height=float(rng.uniform(0.8, 1.4)),
                    yaw=0.0,
                    albedo_base=0.3 + 0.1 * b,
                )
            )
    elif kind == "degenerate_one_direction":
        # Grooved wall: front/recessed panels joined by side returns, so
        # every dihedral line is vertical.
        rects = []
        z0, z1 = -1.5, 2.0
        width = 1.0
        depth = 0.42
        n_panels = 6
        y_left = -3.29
        for p in range(n_panels):
            y = y_left + p * width
            x = 6.29 if p % 2 == 0 else 6.29 + depth
            rects.append(
                Rectangle(
                    [x, y, z0],
                    [0.0, width, 0.0],
                    [0.0, 0.0, z1 - z0],
                    0.35 + 0.1 * (p % 3),
                )
            )
            if p + 1 < n_panels:
                rects.append(
                    Rectangle(
                        [6.29, y + width, z0],
                        [depth, 0.0, 0.0],
                        [0.0, 0.0, z1 - z0],
                        0.8,
                    )
                )
    elif kind == "degenerate_top_heavy":
        rects = [
            Rectangle([6.79, -3.0, 1.3], [0.0, 6.0, 0.0], [0.0, 0.0, 1.3], 0.7),
        ]
        for b in range(2):
            y = -1.6 + 2.6 * b + float(rng.uniform(-0.2, 0.2))
            rects.extend(
                _box_rectangles(
                    (6.35, y),
                    half_x=0.4,
                    half_y=0.6,
                    z_bottom=1.5,
                    height=0.8,
                    yaw=0.0,
                    albedo_base=0.3 + 0.15 * b,
                )
            )
    else:
        raise ValueError(f"unknown scene kind {kind!r}")

    gt_edges = _dihedral_edges(rects)
    gt = se3_boxplus(nominal_extrinsic(), _gt_offset())
    return SyntheticScene(
        rectangles=rects, gt_edges=gt_edges, gt_extrinsic=gt, kind=kind, seed=seed
    )


def _ray_depths(
    origin: np.ndarray,
    dirs: np.ndarray,
    rectangles: list[Rectangle],
    t_min: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-hit distance and rectangle index per ray (inf / -1 if none)."""
    n_rays = dirs.shape[0]
    depths = np.full(n_rays, np.inf)
    hit = np.full(n_rays, -1, dtype=np.int64)
    for k, rect in enumerate(rectangles):
        normal = rect.normal
        denom = dirs @ normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (rect.offset - origin @ normal) / denom
        valid = (np.abs(denom) > 1e-12) & (t > t_min) & (t < depths)
        if not np.any(valid):
            continue
        pts = origin + t[valid, None] * dirs[valid]
        rel = pts - rect.corner
        for axis_vec in (rect.edge_u, rect.edge_v):
            length = np.linalg.norm(axis_vec)
            coord = rel @ (axis_vec / length)
            inside = (coord >= -1e-9) & (coord <= length + 1e-9)
            sub = np.nonzero(valid)[0][~inside]
            valid[sub] = False
            rel = rel[inside]
        idx = np.nonzero(valid)[0]
        depths[idx] = t[idx]
        hit[idx] = k
    return depths, hit


def _scan_grid(params: ScanParams) -> tuple[np.ndarray, int, int]:
    step = np.radians(params.angular_step_deg)
    az_half = np.radians(params.az_range_deg)
    el_half = np.radians(params.el_range_deg)
    n_az = int(np.floor(az_half / step + 1e-9))
    n_el = int(np.floor(el_half / step + 1e-9))
    az = step * np.arange(-n_az, n_az + 1)
    el = step * np.arange(-n_el, n_el + 1)
    el_grid, az_grid = np.meshgrid(el, az, indexing="ij")
    dirs = np.stack(
        [
            np.cos(el_grid) * np.cos(az_grid),
            np.cos(el_grid) * np.sin(az_grid),
            np.sin(el_grid),
        ],
        axis=-1,
    ).reshape(-1, 3)
    return dirs, el.size, az.size


def _perturb_bearings(bearings: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Rotate unit bearings by tangent-plane perturbations (exact Rodrigues).

    The rotation axis N(w) @ delta is orthogonal to w, which collapses the
    Rodrigues formula to cos(a) w + sin(a) (axis_hat x w).
    """
    basis = tangent_basis_batch(bearings)
    axes = np.einsum("nij,nj->ni", basis, deltas)
    angles = np.linalg.norm(axes, axis=1)
    small = angles < 1e-15
    safe = np.where(small, 1.0, angles)
    axis_hat = axes / safe[:, None]
    rotated = (
        np.cos(angles)[:, None] * bearings
        + np.sin(angles)[:, None] * np.cross(axis_hat, bearings)
    )
    rotated[small] = bearings[small]
    return rotated / np.linalg.norm(rotated, axis=1, keepdims=True)


def _bleeding_returns(
    depth_grid: np.ndarray,
    hit_grid: np.ndarray,
    params: ScanParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Extra returns near depth discontinuities.

    For every ray within the divergence half-angle of a strictly closer
    surface, emit one return at that foreground depth (the dominant first
    pulse, which is what inflates object silhouettes outward) plus
    bridge_points returns linearly smeared toward the ray's own depth when
    it has one. Returns (ray_flat_index, depth, foreground_hit_index).
    """
    bp = params.bleeding
    step = np.radians(params.angular_step_deg)
    reach = int(np.floor(bp.divergence_half_angle / step + 1e-12))
    if reach == 0:
        return np.empty(0, dtype=np.int64), np.empty(0), np.empty(0, dtype=np.int64)
    n_el, n_az = depth_grid.shape
    fg_depth = np.full_like(depth_grid, np.inf)
    fg_hit = np.full(depth_grid.shape, -1, dtype=np.int64)
    for de in range(-reach, reach + 1):
        for da in range(-reach, reach + 1):
            if de == 0 and da == 0:
                continue
            if np.hypot(de * step, da * step) > bp.divergence_half_angle:
                continue
            src_el = slice(max(0, -de), n_el - max(0, de))
            src_az = slice(max(0, -da), n_az - max(0, da))
            dst_el = slice(max(0, de), n_el - max(0, -de))
            dst_az = slice(max(0, da), n_az - max(0, -da))
            neighbor = depth_grid[src_el, src_az]
            closer = neighbor < fg_depth[dst_el, dst_az]
            fg_block = fg_depth[dst_el, dst_az]
            fg_block[closer] = neighbor[closer]
            fg_depth[dst_el, dst_az] = fg_block
            hit_block = fg_hit[dst_el, dst_az]
            hit_block[closer] = hit_grid[src_el, src_az][closer]
            fg_hit[dst_el, dst_az] = hit_block

    own = depth_grid
    with np.errstate(invalid="ignore"):
        affected = np.isfinite(fg_depth) & ((own - fg_depth) > bp.depth_gap)
    flat = np.nonzero(affected.reshape(-1))[0]
    if flat.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0), np.empty(0, dtype=np.int64)
    fg = fg_depth.reshape(-1)[flat]
    own_flat = own.reshape(-1)[flat]
    hits = fg_hit.reshape(-1)[flat]

    idx_out = [flat]
    depth_out = [fg]
    hit_out = [hits]
    bridged = np.isfinite(own_flat)
    for k in range(1, bp.bridge_points + 1):
        frac = k / (bp.bridge_points + 1.0)
        idx_out.append(flat[bridged])
        depth_out.append(fg[bridged] + frac * (own_flat[bridged] - fg[bridged]))
        hit_out.append(hits[bridged])
    return np.concatenate(idx_out), np.concatenate(depth_out), np.concatenate(hit_out)


def simulate_lidar_scan(
    scene: SyntheticScene, params: ScanParams | None = None, seed: int = 0
) -> PointCloud:
    """Ray-cast scan of the scene from the LiDAR origin.

    All randomness comes from (seed, ray order): noise is drawn in flat ray
    order for the full grid, so the same (scene, params, seed) reproduces
    the cloud bit for bit regardless of how the casting itself is batched.
    """
    params = params or ScanParams()
    dirs, n_el, n_az = _scan_grid(params)
    depths, hits = _ray_depths(np.zeros(3), dirs, scene.rectangles, params.min_range)

    ray_index = [np.nonzero(np.isfinite(depths))[0]]
    ray_depth = [depths[ray_index[0]]]
    ray_hit = [hits[ray_index[0]]]
    if params.bleeding.enabled:
        b_idx, b_depth, b_hit = _bleeding_returns(
            depths.reshape(n_el, n_az), hits.reshape(n_el, n_az), params
        )
        ray_index.append(b_idx)
        ray_depth.append(b_depth)
        ray_hit.append(b_hit)
    ray_index = np.concatenate(ray_index)
    ray_depth = np.concatenate(ray_depth)
    ray_hit = np.concatenate(ray_hit)

    bearings = dirs[ray_index]
    if params.noise is not None:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 11)))
        delta_d = rng.normal(0.0, params.noise.sigma_d, ray_depth.size)
        delta_w = rng.normal(0.0, params.noise.sigma_omega, (ray_depth.size, 2))
        ray_depth = ray_depth - delta_d
        bearings = _perturb_bearings(bearings, -delta_w)

    points = ray_depth[:, None] * bearings
    normals = np.stack([r.normal for r in scene.rectangles])
    albedos = np.array([r.albedo for r in scene.rectangles])
    cos_inc = np.abs(np.einsum("nd,nd->n", dirs[ray_index], normals[ray_hit]))
    intensity = 255.0 * albedos[ray_hit] * (0.35 + 0.65 * cos_inc)
    return PointCloud(points=points, intensity=intensity)


def _occlusion_visible(
    scene: SyntheticScene, points: np.ndarray, camera_origin: np.ndarray
) -> np.ndarray:
    """True where the segment camera->point is not blocked by any rectangle."""
    rel = points - camera_origin
    dist = np.linalg.norm(rel, axis=1)
    dirs = rel / dist[:, None]
    depths, _ = _ray_depths(camera_origin, dirs, scene.rectangles, 1e-6)
    return depths >= dist * (1.0 - 1e-9) - 1e-9


def _smooth_unit_noise(n: int, corr: float, rng: np.random.Generator) -> np.ndarray:
    """White noise smoothed to correlation length ``corr`` samples, unit marginal var."""
    white = rng.normal(0.0, 1.0, n)
    if corr <= 0.0:
        return white
    smoothed = ndimage.gaussian_filter1d(white, sigma=corr, mode="reflect")
    impulse = np.zeros(min(n, int(8 * corr) * 2 + 1))
    impulse[impulse.size // 2] = 1.0
    kernel = ndimage.gaussian_filter1d(impulse, sigma=corr, mode="constant")
    scale = np.sqrt(np.sum(kernel**2))
    return smoothed / scale


def _project_segments(
    segments: list[tuple[np.ndarray, np.ndarray]],
    scene: SyntheticScene,
    intr: CameraIntrinsics,
    transform: RigidTransform,
    step_px: float,
    sigma_i: float,
    jitter_corr_px: float,
    rng: np.random.Generator | None,
) -> np.ndarray:
    """Visible projected samples of 3-D segments, optionally jittered."""
    camera_origin = transform.inverse().translation
    out = []
    for p0, p1 in segments:
        p0 = np.asarray(p0, dtype=float)
        p1 = np.asarray(p1, dtype=float)
        t_probe = np.linspace(0.0, 1.0, 65)
        probe = p0 + t_probe[:, None] * (p1 - p0)
        probe_px, probe_ok = project_batch(transform.apply(probe), intr)
        probe_ok &= in_frame(probe_px, intr, margin=-50.0)
        pair_ok = probe_ok[:-1] & probe_ok[1:]
        approx_len = float(
            np.sum(np.linalg.norm(np.diff(probe_px, axis=0), axis=1)[pair_ok])
        )
        if approx_len == 0.0:
            continue
        n = max(int(np.ceil(approx_len / step_px)) + 1, 2)
        t = np.linspace(0.0, 1.0, n)
        pts3d = p0 + t[:, None] * (p1 - p0)
        pixels, ok = project_batch(transform.apply(pts3d), intr)
        ok &= in_frame(pixels, intr)
        if not np.any(ok):
            continue
        ok &= _occlusion_visible(scene, pts3d, camera_origin) if len(scene.rectangles) else ok
        if not np.any(ok):
            continue
        pix = pixels[ok]
        if rng is not None and sigma_i > 0.0 and pix.shape[0] >= 2:
            arclen = np.concatenate(
                [[0.0], np.cumsum(np.linalg.norm(np.diff(pix, axis=0), axis=1))]
            )
            grid = np.arange(0.0, arclen[-1] + 1.0)
            # Detector localization error: smooth along the contour, with
            # marginal std below sigma_i and hard-capped excursions.  The
            # weighting model's sigma_i absorbs this plus the pixel-grid
            # rounding applied by the caller.
            sig_vis = 0.8 * sigma_i
            offsets_grid = sig_vis * _smooth_unit_noise(
                grid.size, jitter_corr_px, rng
            )
            offsets_grid = np.clip(offsets_grid, -1.9 * sig_vis, 1.9 * sig_vis)
            offsets = np.interp(arclen, grid, offsets_grid)
            tangents = np.gradient(pix, axis=0)
            norms = np.linalg.norm(tangents, axis=1)
            norms[norms < 1e-12] = 1.0
            tangents /= norms[:, None]
            normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
            pix = pix + offsets[:, None] * normals
        out.append(pix)
    if not out:
        return np.empty((0, 2))
    return np.concatenate(out, axis=0)


def exact_edge_pixels(
    scene: SyntheticScene,
    intr: CameraIntrinsics,
    transform: RigidTransform,
    step_px: float = 0.5,
) -> EdgePixelSet:
    """Sub-pixel, noise-free projections of the ground-truth edges.

    This is the oracle edge set: measurements with zero detector noise and
    no pixel quantization, for tests that need exactness the rasterized
    rendering cannot offer.
    """
    segments = [tuple(e.endpoints()) for e in scene.gt_edges]
    pixels = _project_segments(
        segments, scene, intr, transform, step_px, 0.0, 0.0, None
    )
    if pixels.shape[0] == 0:
        raise NoVisibleEdges("no ground-truth edge projects into the image")
    return EdgePixelSet.from_points(pixels)


def render_edge_image(
    scene: SyntheticScene,
    intr: CameraIntrinsics,
    transform: RigidTransform | None = None,
    sigma_i: float = 1.5,
    seed: int = 0,
    jitter_corr_px: float = 4.0,
    render_gray: bool = True,
) -> tuple[EdgePixelSet, GrayImage | None]:
    """Measured view of the ground-truth edges plus a shaded image.

    Edge pixels: dense samples of each visible edge, displaced by a
    smooth perpendicular localization-error field (std 0.8 sigma_i,
    correlation length jitter_corr_px along the contour, excursions
    capped at 1.9x the field std) and then rounded to the integer pixel
    grid, matching a detector that reports whole-pixel edge chains.
    sigma_i in the measurement model absorbs both the localization error
    and the grid rounding. The gray image is a flat-shaded rendering of
    the rectangles (for the real edge-detector path); it shares geometry
    but not pixels with the returned edge set.
    """
    transform = transform or scene.gt_extrinsic
    rng = np.random.default_rng(np.random.SeedSequence((seed, 23)))
    segments = [tuple(e.endpoints()) for e in scene.gt_edges]
    pixels = _project_segments(
        segments, scene, intr, transform, 0.6, sigma_i, jitter_corr_px, rng
    )
    pixels = np.unique(np.rint(pixels), axis=0)
    pixels = pixels[in_frame(pixels, intr)]
    if pixels.shape[0] == 0:
        raise NoVisibleEdges("no ground-truth edge projects into the image")
    edge_set = EdgePixelSet.from_points(pixels)

    gray = render_gray_image(scene, intr, transform) if render_gray else None
    return edge_set, gray


def render_gray_image(
    scene: SyntheticScene,
    intr: CameraIntrinsics,
    transform: RigidTransform | None = None,
    background: int = 18,
) -> GrayImage:
    """Flat-shaded rendering of the scene through the (distorted) camera."""
    transform = transform or scene.gt_extrinsic
    u, v = np.meshgrid(
        np.arange(intr.width, dtype=float), np.arange(intr.height, dtype=float)
    )
    # Invert the distortion on the pixel grid, then lift to rays.
    xd = (u.reshape(-1) - intr.cx) / intr.fx
    yd = (v.reshape(-1) - intr.cy) / intr.fy
    xn, yn = xd.copy(), yd.copy()
    from .camera import _distort_normalized  # local import to reuse the exact map

    for _ in range(10):
        fx, fy = _distort_normalized(xn, yn, intr)
        xn -= fx - xd
        yn -= fy - yd
    dirs_cam = np.stack([xn, yn, np.ones_like(xn)], axis=1)
    dirs_cam /= np.linalg.norm(dirs_cam, axis=1, keepdims=True)

    inv = transform.inverse()
    origin = inv.translation
    dirs = dirs_cam @ inv.rotation.T
    depths, hits = _ray_depths(origin, dirs, scene.rectangles, Z_MIN)
    shade = np.full(depths.shape, float(background))
    hit_mask = hits >= 0
    if np.any(hit_mask):
        normals = np.stack([r.normal for r in scene.rectangles])
        albedos = np.array([r.albedo for r in scene.rectangles])
        cos_inc = np.abs(
            np.einsum("nd,nd->n", dirs[hit_mask], normals[hits[hit_mask]])
        )
        shade[hit_mask] = 255.0 * albedos[hits[hit_mask]] * (0.35 + 0.65 * cos_inc)
    img = np.clip(np.floor(shade + 0.5), 0, 255).astype(np.uint8)
    return GrayImage(img.reshape(intr.height, intr.width))


def reference_edge_pixels(
    scene: SyntheticScene,
    intr: CameraIntrinsics,
    transform: RigidTransform | None = None,
    step_px: float = 0.5,
) -> np.ndarray:
    """All pixels where the rendered image can legitimately contain an edge.

    Every shading discontinuity of the flat-shaded rendering lies either on
    a dihedral ground-truth edge or on a rectangle boundary (silhouettes and
    junctions); this returns sub-pixel samples of both, for validating edge
    detectors against the rendering.
    """
    transform = transform or scene.gt_extrinsic
    segments = [tuple(e.endpoints()) for e in scene.gt_edges]
    for rect in scene.rectangles:
        segments.extend(rect.boundary_segments())
    return _project_segments(
        segments, scene, intr, transform, step_px, 0.0, 0.0, None
    )
