"""Extrinsic estimation from edge correspondences.

The measurement model: a 3-D edge sample p transforms into the camera frame,
projects through the distorted pinhole, and its signed distance to the local
image edge line is the scalar residual

    r = n . (project(T(p)) - q).

Each residual's noise variance s = J_w Sigma J_w^T combines the LiDAR range/
bearing covariance (pushed through the projection) with the image pixel
covariance; because correspondences are independent, the weighted normal
equations assemble row by row and never materialize a dense N x N matrix.
The pose update solves H dT = -g with H = sum J^T J / s, applied with the
left boxplus; on convergence H^{-1} is the extrinsic covariance estimate.

The matched set is rebuilt from scratch every iteration (matching depends on
the pose), with the pixel-distance gate tightened once steps become small.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .camera import CameraIntrinsics, project_batch, projection_chain_jacobians
from .correspondence import (
    Correspondence,
    CorrespondenceBatch,
    MatchGates,
    SampledEdges,
    match_edges,
    match_sampled,
    sample_edges,
)
from .errors import (
    BehindCamera,
    NotConverged,
    RankDeficient,
    TooFewCorrespondences,
)
from .geometry import (
    RigidTransform,
    TwistIncrement,
    rotation_distance,
    se3_boxplus,
    so3_exp,
)
from .image_edge import EdgePixelSet
from .lidar_edge import Edge3D
from .noise import SensorNoise, lidar_point_cov_batch

# Above this condition number of the normal matrix the scene does not
# constrain all six axes and results would be meaningless.
RANK_DEFICIENT_COND = 1e10

_AXES = np.eye(3)


@dataclass(frozen=True)
class CalibrationConfig:
    convergence_eps: float = 1e-6
    max_iterations: int = 50
    rough_rot_grid_deg: float = 0.5
    rough_trans_grid: float = 0.02
    rough_rot_range_deg: float = 6.0
    rough_trans_range: float = 0.12
    damping: float = 1e-4
    sample_spacing: float = 0.02
    gates: MatchGates = field(default_factory=MatchGates)
    fine_pixel_dist: float = 5.0

    def fine_gates(self) -> MatchGates:
        return self.gates.tightened(self.fine_pixel_dist)


@dataclass(frozen=True)
class ScenePair:
    """One scene's inputs to the estimator: 3-D edges plus the image edge set."""

    edges: list
    edge_pixels: EdgePixelSet


@dataclass(frozen=True)
class CalibrationResult:
    extrinsic: RigidTransform
    covariance: np.ndarray
    sigma: np.ndarray
    normalized_cost: float
    iterations: int
    residuals: np.ndarray
    pc_before: float
    pc_after: float
    cost_history: list[float]
    n_correspondences: int


@dataclass(frozen=True)
class SceneQualityReport:
    """Constraint analysis of a correspondence set, before any solving.

    per_axis_information and eigenvalues describe the undistorted-projection
    normal matrix (unweighted); occupancy is the fraction of matched pixels
    in each third-of-image cell (rows top to bottom, columns left to right).
    """

    per_axis_information: np.ndarray
    eigenvalues: np.ndarray
    condition_number: float
    occupancy: np.ndarray
    flags: tuple[str, ...]


def residual(
    corr: Correspondence, transform: RigidTransform, intr: CameraIntrinsics
) -> float:
    """Signed point-to-line distance of one projected correspondence."""
    pixels, valid = project_batch(transform.apply(corr.lidar_point)[None, :], intr)
    if not bool(valid[0]):
        raise BehindCamera("correspondence point behind the near plane")
    return float(corr.line.n @ (pixels[0] - corr.line.q))


def pose_jacobian(
    corr: Correspondence, transform: RigidTransform, intr: CameraIntrinsics
) -> np.ndarray:
    """d(residual)/d(dtheta, dt) for one correspondence, a 6-vector."""
    _, valid, jac_pose, _ = projection_chain_jacobians(
        corr.lidar_point[None, :], transform, intr
    )
    if not bool(valid[0]):
        raise BehindCamera("correspondence point behind the near plane")
    return corr.line.n @ jac_pose[0]


def noise_jacobian(
    corr: Correspondence, transform: RigidTransform, intr: CameraIntrinsics
) -> np.ndarray:
    """d(residual)/d(lidar point, image point) for one correspondence (5-vector).

    The first three entries push LiDAR-frame point noise through the
    projection; the last two are -n because the image point enters the
    residual directly.
    """
    _, valid, _, jac_point = projection_chain_jacobians(
        corr.lidar_point[None, :], transform, intr
    )
    if not bool(valid[0]):
        raise BehindCamera("correspondence point behind the near plane")
    return np.concatenate([corr.line.n @ jac_point[0], -corr.line.n])


def batch_residuals(
    batch: CorrespondenceBatch, transform: RigidTransform, intr: CameraIntrinsics
) -> np.ndarray:
    """Signed residuals of a matched batch at a transform.

    Points that fall behind the near plane at this transform are silently
    omitted, so the result may be shorter than the batch.
    """
    if len(batch) == 0:
        return np.empty(0)
    pixels, valid = project_batch(transform.apply(batch.lidar_points), intr)
    diff = pixels[valid] - batch.line_q[valid]
    return np.einsum("nd,nd->n", batch.line_n[valid], diff)


def row_variances(jac_noise: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """Per-row residual noise variance s = J_w Sigma J_w^T (block-diagonal)."""
    return np.einsum("ni,nij,nj->n", jac_noise, covs, jac_noise)


def _normal_matrix(
    jac_pose: np.ndarray, jac_noise: np.ndarray, covs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    s = row_variances(jac_noise, covs)
    if np.any(s <= 0.0):
        raise ValueError("non-positive residual variance; check noise parameters")
    hmat = np.einsum("ni,n,nj->ij", jac_pose, 1.0 / s, jac_pose)
    return hmat, s


def _check_conditioning(hmat: np.ndarray) -> float:
    eigvals = np.linalg.eigvalsh(hmat)
    if eigvals[-1] <= 0.0:
        raise RankDeficient("normal matrix has no positive eigenvalue")
    cond = np.inf if eigvals[0] <= 0.0 else float(eigvals[-1] / eigvals[0])
    if cond > RANK_DEFICIENT_COND:
        raise RankDeficient(
            f"normal matrix condition number {cond:.3e} > {RANK_DEFICIENT_COND:.0e}"
        )
    return cond


def solve_delta(
    jac_pose: np.ndarray,
    jac_noise: np.ndarray,
    residuals: np.ndarray,
    covs: np.ndarray,
    damping: float = 0.0,
) -> TwistIncrement:
    """Weighted Gauss-Newton step from stacked correspondence rows.

    Raises RankDeficient when the (undamped) normal matrix condition number
    exceeds RANK_DEFICIENT_COND; damping only stabilizes the solve, it must
    not mask a degenerate scene.
    """
    hmat, s = _normal_matrix(jac_pose, jac_noise, covs)
    _check_conditioning(hmat)
    grad = jac_pose.T @ (np.asarray(residuals, dtype=float) / s)
    damped = hmat + damping * np.diag(np.diag(hmat))
    return TwistIncrement.from_vector(-np.linalg.solve(damped, grad))


def covariance_matrix(
    jac_pose: np.ndarray, jac_noise: np.ndarray, covs: np.ndarray
) -> np.ndarray:
    """Extrinsic covariance H^{-1} from stacked rows (symmetrized)."""
    hmat, _ = _normal_matrix(jac_pose, jac_noise, covs)
    _check_conditioning(hmat)
    cov = np.linalg.inv(hmat)
    return 0.5 * (cov + cov.T)


def sigma_per_axis(covariance: np.ndarray) -> np.ndarray:
    """Per-axis standard deviations (3 rotation rad, 3 translation m)."""
    return np.sqrt(np.diag(np.asarray(covariance, dtype=float)))


def _noise_covs(batch: CorrespondenceBatch, noise: SensorNoise) -> np.ndarray:
    covs = np.zeros((len(batch), 5, 5))
    covs[:, :3, :3] = lidar_point_cov_batch(batch.bearings, batch.depths, noise.lidar)
    covs[:, 3, 3] = noise.image.sigma_i**2
    covs[:, 4, 4] = noise.image.sigma_i**2
    return covs


def _assemble_rows(
    batch: CorrespondenceBatch,
    transform: RigidTransform,
    intr: CameraIntrinsics,
    noise: SensorNoise,
):
    """Residuals, pose rows, and noise scalars for one matched batch."""
    pixels, valid, jac_pose, jac_point = projection_chain_jacobians(
        batch.lidar_points, transform, intr
    )
    if not np.all(valid):
        raise BehindCamera("matched point fell behind the near plane")
    res = np.einsum("nd,nd->n", batch.line_n, pixels - batch.line_q)
    rows_pose = np.einsum("nd,ndk->nk", batch.line_n, jac_pose)
    rows_point = np.einsum("nd,ndk->nk", batch.line_n, jac_point)
    rows_noise = np.concatenate([rows_point, -batch.line_n], axis=1)
    covs = _noise_covs(batch, noise)
    return res, rows_pose, rows_noise, covs


def _residuals_at(
    batch: CorrespondenceBatch, transform: RigidTransform, intr: CameraIntrinsics
) -> tuple[np.ndarray, bool]:
    pixels, valid = project_batch(transform.apply(batch.lidar_points), intr)
    if not np.all(valid):
        return np.empty(0), False
    return np.einsum("nd,nd->n", batch.line_n, pixels - batch.line_q), True


def _match_scenes(
    scenes: list[ScenePair],
    transform: RigidTransform,
    intr: CameraIntrinsics,
    gates: MatchGates,
    spacing: float,
) -> list[CorrespondenceBatch]:
    return [
        match_edges(s.edges, spacing, s.edge_pixels, transform, intr, gates)
        for s in scenes
    ]


def _stack_rows(parts: list[tuple]) -> tuple:
    res = np.concatenate([p[0] for p in parts])
    jac_pose = np.concatenate([p[1] for p in parts])
    jac_noise = np.concatenate([p[2] for p in parts])
    covs = np.concatenate([p[3] for p in parts])
    return res, jac_pose, jac_noise, covs


def percent_correspondence(
    edges: list[Edge3D],
    edge_set: EdgePixelSet,
    transform: RigidTransform,
    intr: CameraIntrinsics,
    gates: MatchGates | None = None,
    spacing: float = 0.02,
) -> float:
    """Fraction of edge samples that match an image line under the gates."""
    gates = gates or MatchGates()
    batch = match_edges(edges, spacing, edge_set, transform, intr, gates)
    if batch.total_samples == 0:
        return 0.0
    return len(batch) / batch.total_samples


def percent_correspondence_scenes(
    scenes: list[ScenePair],
    transform: RigidTransform,
    intr: CameraIntrinsics,
    gates: MatchGates | None = None,
    spacing: float = 0.02,
) -> float:
    """Matched fraction pooled over several scenes (shared denominator)."""
    return _pc_scenes(scenes, transform, intr, gates or MatchGates(), spacing)


def _pc_scenes(
    scenes: list[ScenePair],
    transform: RigidTransform,
    intr: CameraIntrinsics,
    gates: MatchGates,
    spacing: float,
) -> float:
    batches = _match_scenes(scenes, transform, intr, gates, spacing)
    total = sum(b.total_samples for b in batches)
    if total == 0:
        return 0.0
    return sum(len(b) for b in batches) / total


def rough_calibrate(
    edges_or_scenes,
    edge_set: EdgePixelSet | None = None,
    initial: RigidTransform | None = None,
    intr: CameraIntrinsics | None = None,
    config: CalibrationConfig | None = None,
) -> RigidTransform:
    """Maximize the matched fraction with an alternating per-axis grid search.

    A single joint pass over a coarse six-axis offset grid runs first: the
    matched fraction has a diagonal valley where a rotation offset
    compensates a translation offset, and pure per-axis descent started far
    from the optimum can stall on such a compensated pair. Per-axis sweeps
    then refine: rotation offsets are applied as left-multiplied rotations
    about the camera z, y, x axes in turn (the yaw offset is exactly a
    ZYX-Euler yaw offset; the other two cover the equivalent neighborhood
    without the Euler gimbal hazard at the nominal mounting), then
    translation offsets per axis; sweeps repeat until no single grid move
    improves the score. Because the matched fraction saturates near the
    optimum (every sample already inside the pixel gate), the per-axis
    refinement repeats with the gate tightened to 5 then 3 px, which
    restores a usable peak without changing the objective's meaning. The
    zero offset is always a candidate at every stage, so the output never
    scores below the input.
    """
    scenes = _as_scenes(edges_or_scenes, edge_set)
    config = config or CalibrationConfig()
    if initial is None or intr is None:
        raise ValueError("initial transform and intrinsics are required")

    # Edge sampling depends only on the scene and the spacing, never on the
    # candidate pose, so sample once per spacing and reuse across the many
    # thousands of score evaluations below.
    sampled_cache: dict[float, list[SampledEdges]] = {}

    def sampled_for(spacing: float) -> list[SampledEdges]:
        if spacing not in sampled_cache:
            sampled_cache[spacing] = [
                sample_edges(s.edges, spacing) for s in scenes
            ]
        return sampled_cache[spacing]

    def score(
        candidate: RigidTransform, gates: MatchGates, spacing: float
    ) -> float:
        matched = 0
        total = 0
        for samp, scene in zip(sampled_for(spacing), scenes):
            batch = match_sampled(samp, scene.edge_pixels, candidate, intr, gates)
            matched += len(batch)
            total += batch.total_samples
        return matched / total if total else 0.0

    def sweep(
        current: RigidTransform,
        gates: MatchGates,
        rot_steps: np.ndarray,
        trans_steps: np.ndarray,
        spacing: float,
    ) -> RigidTransform:
        best = score(current, gates, spacing)
        improved = True
        while improved:
            improved = False
            for axis in (2, 1, 0):  # camera z, y, x rotation offsets
                for off in rot_steps:
                    cand = RigidTransform(
                        so3_exp(off * _AXES[axis]) @ current.rotation,
                        so3_exp(off * _AXES[axis]) @ current.translation,
                    )
                    val = score(cand, gates, spacing)
                    if val > best:
                        best, current, improved = val, cand, True
            for axis in (0, 1, 2):
                for off in trans_steps:
                    cand = RigidTransform(
                        current.rotation, current.translation + off * _AXES[axis]
                    )
                    val = score(cand, gates, spacing)
                    if val > best:
                        best, current, improved = val, cand, True
        return current

    def sweep_pair(
        current: RigidTransform,
        gates: MatchGates,
        rot_axis: int,
        trans_axis: int,
        rot_steps: np.ndarray,
        trans_steps: np.ndarray,
        spacing: float,
    ) -> RigidTransform:
        # Joint 2-D grid over one coupled rotation/translation pair. A
        # rotation about one camera axis shifts the image much like a
        # translation along the perpendicular axis; only their different
        # depth dependence separates them, which per-axis moves cannot see.
        best = score(current, gates, spacing)
        base = current
        for r_off in np.concatenate([[0.0], rot_steps]):
            rot = so3_exp(r_off * _AXES[rot_axis])
            rotated = RigidTransform(rot @ base.rotation, rot @ base.translation)
            for t_off in np.concatenate([[0.0], trans_steps]):
                cand = RigidTransform(
                    rotated.rotation,
                    rotated.translation + t_off * _AXES[trans_axis],
                )
                val = score(cand, gates, spacing)
                if val > best:
                    best, current = val, cand
        return current

    gates = config.gates
    coarse_spacing = max(config.sample_spacing, 0.12)

    # Parallel scene edges alias the matched fraction: a pose shifted by
    # one inter-edge image spacing re-matches whole edge families, so the
    # coarse landscape has several competing peaks. Refining only the
    # single best coarse cell walks into an aliased peak on some scenes;
    # instead the coarse grid keeps its best few well-separated cells and
    # each is refined under progressively tighter pixel gates. Only correct
    # associations survive a tight gate across all edge directions, so the
    # refined candidate with the best tight-gate score is the answer.
    rot_levels = np.radians(
        config.rough_rot_range_deg * 0.8 * np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    )
    rot_levels_small = np.radians(
        config.rough_rot_range_deg * 0.8 * np.array([-1.0, 0.0, 1.0])
    )
    tr_levels = config.rough_trans_range * 0.9 * np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    tr_levels_small = config.rough_trans_range * 0.9 * np.array([-1.0, 0.0, 1.0])

    scored_cells: list[tuple[float, RigidTransform]] = []
    for rx in rot_levels_small:
        for ry in rot_levels:
            for rz in rot_levels_small:
                rot_off = (
                    so3_exp(rx * _AXES[0])
                    @ so3_exp(ry * _AXES[1])
                    @ so3_exp(rz * _AXES[2])
                )
                rotated = RigidTransform(
                    rot_off @ initial.rotation, rot_off @ initial.translation
                )
                for tx in tr_levels:
                    for ty in tr_levels_small:
                        for tz in tr_levels_small:
                            shift = np.array([tx, ty, tz])
                            cand = RigidTransform(
                                rotated.rotation, rotated.translation + shift
                            )
                            scored_cells.append((score(cand, gates, coarse_spacing), cand))

    scored_cells.append((score(initial, gates, coarse_spacing), initial))
    scored_cells.sort(key=lambda sc: -sc[0])
    candidates: list[tuple[RigidTransform, float]] = []
    for val, cand in scored_cells:
        if len(candidates) >= 5:
            break
        separated = all(
            rotation_distance(cand.rotation, kept.rotation) >= np.radians(2.5)
            or np.linalg.norm(cand.translation - kept.translation) >= 0.06
            for kept, _ in candidates
        )
        if separated:
            candidates.append((cand, val))

    stages = (
        # (gate, rot step/range deg, trans step/range m)
        (gates.tightened(config.fine_pixel_dist), 0.25, 1.2, 0.01, 0.06),
        (gates.tightened(3.0), 0.1, 0.5, 0.004, 0.024),
    )

    def refine(start: RigidTransform, spacing: float) -> RigidTransform:
        current = start
        for stage_gates, r_step, r_range, t_step, t_range in stages:
            pair_rot = _offset_grid(np.radians(r_step), np.radians(r_range))
            pair_tr = _offset_grid(t_step, t_range)
            # Image-horizontal pair, image-vertical pair, then per-axis for
            # the two axes without a coupled partner (roll and forward
            # translation); repeat while the stage score improves, because
            # each pair's peak is only clean once the other pair is close.
            for _ in range(3):
                stage_before = score(current, stage_gates, spacing)
                current = sweep_pair(
                    current, stage_gates, 1, 0, pair_rot, pair_tr, spacing
                )
                current = sweep_pair(
                    current, stage_gates, 0, 1, pair_rot, pair_tr, spacing
                )
                current = sweep(current, stage_gates, pair_rot, pair_tr, spacing)
                if score(current, stage_gates, spacing) <= stage_before + 1e-12:
                    break
        return current

    tight = gates.tightened(3.0)
    mid_spacing = max(config.sample_spacing, 0.09)
    best_val, best_pose = -1.0, initial
    top_coarse = max(sc[0] for sc in scored_cells)
    for cand, cand_coarse in candidates:
        if cand_coarse < top_coarse - 0.25:
            continue
        current = refine(cand, mid_spacing)
        val = score(current, tight, mid_spacing)
        if val > best_val:
            best_val, best_pose = val, current
    if mid_spacing > config.sample_spacing:
        best_pose = refine(best_pose, config.sample_spacing)
    return best_pose


def _offset_grid(step: float, half_range: float) -> np.ndarray:
    n = int(np.floor(half_range / step + 1e-9))
    offsets = step * np.arange(-n, n + 1)
    return offsets[offsets != 0.0]


def _as_scenes(edges_or_scenes, edge_set) -> list[ScenePair]:
    if edge_set is not None:
        return [ScenePair(edges=list(edges_or_scenes), edge_pixels=edge_set)]
    return list(edges_or_scenes)


def calibrate_scenes(
    scenes: list[ScenePair],
    initial: RigidTransform,
    intr: CameraIntrinsics,
    config: CalibrationConfig | None = None,
    noise: SensorNoise | None = None,
) -> CalibrationResult:
    """Iterative MLE over one or more scenes sharing the same extrinsic.

    Outer rounds rebuild the correspondences at the current pose; an inner
    damped Gauss-Newton loop then converges on that frozen matching (a step
    is accepted only if it does not increase the normalized cost; damping
    x10 on refusal, /10 on acceptance). Rebuilding re-picks nearest pixels,
    so the pose each matching asks for differs by a small discrete jump;
    convergence is therefore judged on the FIRST step after a rebuild, which
    shrinks below the threshold exactly when the matching has become
    self-consistent with the pose. Once that first step falls below 10x the
    convergence threshold the pixel gate tightens; convergence is declared
    only under the tight gate.

    Because the matching is a deterministic function of the pose, the outer
    iteration is a deterministic map on matchings; revisiting a matching
    proves the iteration has entered a limit cycle it can never leave. The
    orbit's poses differ only at the granularity of single nearest-pixel
    flips, so the minimum-cost pose on the orbit is taken: in the coarse
    phase that triggers the switch to the tight gate (a different map), in
    the tight phase it is accepted as the solution.
    """
    config = config or CalibrationConfig()
    noise = noise or SensorNoise()
    gates = config.gates
    fine_gates = config.fine_gates()
    spacing = config.sample_spacing

    pc_before = _pc_scenes(scenes, initial, intr, config.gates, spacing)

    current = initial
    fine_phase = False
    lam = config.damping
    cost_history: list[float] = []
    iterations = 0
    converged = False
    # (fingerprint, pose after inner convergence, cost) per outer round of
    # the current phase; fingerprints identify the matching exactly.
    round_history: list[tuple[int, RigidTransform, float]] = []

    for _ in range(config.max_iterations):
        active_gates = fine_gates if fine_phase else gates
        batches = _match_scenes(scenes, current, intr, active_gates, spacing)
        n_matched = sum(len(b) for b in batches)
        if n_matched < active_gates.min_correspondences:
            raise TooFewCorrespondences(
                f"{n_matched} correspondences < {active_gates.min_correspondences}"
            )
        fingerprint = hash(
            (n_matched,) + tuple(b.line_q.tobytes() for b in batches)
        )

        first_step = None
        for _inner in range(30):
            iterations += 1
            parts = [_assemble_rows(b, current, intr, noise) for b in batches]
            res, jac_pose, jac_noise, covs = _stack_rows(parts)
            hmat, s = _normal_matrix(jac_pose, jac_noise, covs)
            if _inner == 0:
                _check_conditioning(hmat)
            grad = jac_pose.T @ (res / s)
            cost = float(np.mean(res * res / s))
            if not cost_history:
                cost_history.append(cost)

            # Damped step on the frozen matching.
            while True:
                damped = hmat + lam * np.diag(np.diag(hmat))
                delta = TwistIncrement.from_vector(-np.linalg.solve(damped, grad))
                candidate = se3_boxplus(current, delta)
                new_cost = np.inf
                ok_all = True
                offset = 0
                new_res = np.empty(len(res))
                for b in batches:
                    r_b, ok = _residuals_at(b, candidate, intr)
                    if not ok:
                        ok_all = False
                        break
                    new_res[offset : offset + len(b)] = r_b
                    offset += len(b)
                if ok_all:
                    new_cost = float(np.mean(new_res * new_res / s))
                if config.damping == 0.0 or new_cost <= cost:
                    break
                lam *= 10.0
                if lam > 1e10:
                    raise NotConverged("damping exploded without reducing the cost")
            if config.damping > 0.0:
                lam = max(lam / 10.0, 1e-12)

            current = candidate
            cost_history.append(new_cost if np.isfinite(new_cost) else cost)

            step = delta.norm()
            if first_step is None:
                first_step = step
            if step < 0.1 * config.convergence_eps:
                break

        round_history.append((fingerprint, current, cost_history[-1]))
        cycle_start = next(
            (
                i
                for i, rec in enumerate(round_history[:-1])
                if rec[0] == fingerprint
            ),
            None,
        )
        if cycle_start is not None:
            orbit = round_history[cycle_start:]
            current = min(orbit, key=lambda rec: rec[2])[1]
            if fine_phase:
                converged = True
                break
            fine_phase = True
            round_history = []
            continue
        if not fine_phase:
            if first_step < 10.0 * config.convergence_eps:
                fine_phase = True
                round_history = []
            continue
        if first_step < config.convergence_eps:
            converged = True
            break

    if not converged:
        raise NotConverged(
            f"step norm above {config.convergence_eps} after {iterations} iterations"
        )

    # Final statistics on a fresh tight-gate matching at the solution.
    batches = _match_scenes(scenes, current, intr, fine_gates, spacing)
    n_matched = sum(len(b) for b in batches)
    if n_matched < fine_gates.min_correspondences:
        raise TooFewCorrespondences(
            f"{n_matched} correspondences < {fine_gates.min_correspondences}"
        )
    parts = [_assemble_rows(b, current, intr, noise) for b in batches]
    res, jac_pose, jac_noise, covs = _stack_rows(parts)
    cov = covariance_matrix(jac_pose, jac_noise, covs)
    s = row_variances(jac_noise, covs)
    normalized_cost = float(np.mean(res * res / s))
    pc_after = _pc_scenes(scenes, current, intr, config.gates, spacing)

    return CalibrationResult(
        extrinsic=current,
        covariance=cov,
        sigma=sigma_per_axis(cov),
        normalized_cost=normalized_cost,
        iterations=iterations,
        residuals=res,
        pc_before=pc_before,
        pc_after=pc_after,
        cost_history=cost_history,
        n_correspondences=n_matched,
    )


def iterate_mle(
    edges: list[Edge3D],
    edge_set: EdgePixelSet,
    initial: RigidTransform,
    intr: CameraIntrinsics,
    config: CalibrationConfig | None = None,
    noise: SensorNoise | None = None,
) -> CalibrationResult:
    """Single-scene convenience wrapper around :func:`calibrate_scenes`."""
    return calibrate_scenes(
        [ScenePair(edges=list(edges), edge_pixels=edge_set)],
        initial,
        intr,
        config=config,
        noise=noise,
    )


def scene_quality(
    correspondences,
    transform: RigidTransform,
    intr: CameraIntrinsics,
) -> SceneQualityReport:
    """Quick constraint analysis of a matched correspondence set.

    Works on the undistorted projection model so the information content is
    a property of edge geometry alone. Accepts a CorrespondenceBatch or a
    list of Correspondence objects.
    """
    if isinstance(correspondences, CorrespondenceBatch):
        points = correspondences.lidar_points
        normals = correspondences.line_n
    else:
        points = np.stack([c.lidar_point for c in correspondences])
        normals = np.stack([c.line.n for c in correspondences])

    undistorted = replace(intr, k1=0.0, k2=0.0, k3=0.0, p1=0.0, p2=0.0)
    pixels, valid, jac_pose, _ = projection_chain_jacobians(
        points, transform, undistorted
    )
    points = points[valid]
    normals = normals[valid]
    rows = np.einsum("nd,ndk->nk", normals, jac_pose[valid])
    hmat = rows.T @ rows
    eigvals = np.linalg.eigvalsh(hmat)
    cond = np.inf if eigvals[0] <= 0.0 else float(eigvals[-1] / eigvals[0])

    pixels_real, valid_real = project_batch(transform.apply(points), intr)
    occupancy = np.zeros((3, 3))
    px = pixels_real[valid_real]
    if px.shape[0]:
        col = np.clip((px[:, 0] / intr.width * 3).astype(int), 0, 2)
        row = np.clip((px[:, 1] / intr.height * 3).astype(int), 0, 2)
        np.add.at(occupancy, (row, col), 1.0)
        occupancy /= px.shape[0]

    flags = []
    if cond > RANK_DEFICIENT_COND:
        flags.append("single_direction")
    band_shares = np.concatenate([occupancy.sum(axis=1), occupancy.sum(axis=0)])
    if np.any(band_shares >= 0.8):
        flags.append("uneven_distribution")

    return SceneQualityReport(
        per_axis_information=np.diag(hmat).copy(),
        eigenvalues=eigvals,
        condition_number=cond,
        occupancy=occupancy,
        flags=tuple(flags),
    )
