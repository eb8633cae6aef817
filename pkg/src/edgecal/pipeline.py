"""End-to-end runs: load inputs, extract, calibrate, write report artifacts.

Scenes are independent up to the stacking step, so edge extraction (both
domains) runs in a thread pool capped by the config, the EDGECAL_THREADS
environment variable, or the CPU count, whichever is given first. Report
assembly is single-threaded and everything written is a pure function of
(inputs, config, seed): reports carry no timestamps and overlays draw in a
deterministic order, so identical runs produce identical bytes.

A degenerate or non-converging calibration still writes a report (with
converged = false, the scene-quality flags, and the failure name) before
the error propagates to the caller.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._version import __version__
from .calibrate import (
    CalibrationResult,
    ScenePair,
    SceneQualityReport,
    batch_residuals,
    calibrate_scenes,
    percent_correspondence_scenes,
    rough_calibrate,
    scene_quality,
)
from .camera import CameraIntrinsics
from .config import RunConfig
from .correspondence import CorrespondenceBatch, match_edges
from .errors import ConfigError, NotConverged, RankDeficient, TooFewCorrespondences
from .geometry import RigidTransform, rotation_to_euler_zyx
from .image_edge import GrayImage, canny_edges
from .io import load_image, load_intrinsics, load_point_cloud, render_overlay, save_image
from .lidar_edge import PointCloud, extract_depth_continuous_edges
from .report import (
    CalibrationReport,
    CrossValidationReport,
    ResidualStats,
    serialize_cross_validation,
    serialize_report,
)


@dataclass(frozen=True)
class LoadedScene:
    cloud: PointCloud
    image: GrayImage


@dataclass(frozen=True)
class PipelineOutput:
    report: CalibrationReport
    result: CalibrationResult | None
    report_path: str
    overlay_paths: tuple[str, ...]
    edge_counts: tuple[tuple[int, int], ...]


def worker_count(cfg: RunConfig, n_scenes: int) -> int:
    if cfg.threads is not None:
        limit = cfg.threads
    else:
        env = os.environ.get("EDGECAL_THREADS", "").strip()
        if env:
            try:
                limit = int(env)
            except ValueError as exc:
                raise ConfigError(f"EDGECAL_THREADS={env!r} is not an integer") from exc
            if limit < 1:
                raise ConfigError("EDGECAL_THREADS must be >= 1")
        else:
            limit = os.cpu_count() or 1
    return max(1, min(limit, n_scenes))


def load_scenes(cfg: RunConfig) -> tuple[CameraIntrinsics, list[LoadedScene]]:
    intr = load_intrinsics(cfg.intrinsics)
    scenes = [
        LoadedScene(cloud=load_point_cloud(c), image=load_image(i))
        for c, i in zip(cfg.clouds, cfg.images)
    ]
    return intr, scenes


def extract_scenes(cfg: RunConfig, loaded: list[LoadedScene]) -> list[ScenePair]:
    def one(scene: LoadedScene) -> ScenePair:
        edges = extract_depth_continuous_edges(scene.cloud, cfg.extraction, cfg.seed)
        edge_set = canny_edges(
            scene.image, low=cfg.canny_low, high=cfg.canny_high, sigma=cfg.canny_sigma
        )
        return ScenePair(edges=edges, edge_pixels=edge_set)

    workers = worker_count(cfg, len(loaded))
    if workers == 1:
        return [one(s) for s in loaded]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, loaded))


def _final_batches(
    scenes: list[ScenePair],
    transform: RigidTransform,
    intr: CameraIntrinsics,
    cfg: RunConfig,
) -> list[CorrespondenceBatch]:
    gates = cfg.calibration.fine_gates()
    return [
        match_edges(
            s.edges, cfg.calibration.sample_spacing, s.edge_pixels, transform, intr, gates
        )
        for s in scenes
    ]


def _concat_batches(batches: list[CorrespondenceBatch]) -> CorrespondenceBatch:
    return CorrespondenceBatch(
        lidar_points=np.concatenate([b.lidar_points for b in batches]),
        bearings=np.concatenate([b.bearings for b in batches]),
        depths=np.concatenate([b.depths for b in batches]),
        line_q=np.concatenate([b.line_q for b in batches]),
        line_n=np.concatenate([b.line_n for b in batches]),
        line_dir=np.concatenate([b.line_dir for b in batches]),
        eigen_ratio=np.concatenate([b.eigen_ratio for b in batches]),
        edge_dirs=np.concatenate([b.edge_dirs for b in batches]),
        total_samples=sum(b.total_samples for b in batches),
    )


def _build_report(
    cfg: RunConfig,
    transform: RigidTransform,
    result: CalibrationResult | None,
    quality: SceneQualityReport,
    stats: list[ResidualStats],
    n_correspondences: int,
    pc_value: float,
    failure: Exception | None,
) -> CalibrationReport:
    yaw, pitch, roll = rotation_to_euler_zyx(transform.rotation)
    flags = tuple(quality.flags)
    if failure is not None:
        flags = flags + (type(failure).__name__,)
    if result is not None:
        sigma = tuple(float(v) for v in result.sigma)
        covariance = tuple(float(v) for v in result.covariance.reshape(-1))
        fit = dict(
            converged=True,
            iterations=result.iterations,
            correspondences=result.n_correspondences,
            normalized_cost=result.normalized_cost,
            pc_before=result.pc_before,
            pc_after=result.pc_after,
            cost_history=tuple(float(c) for c in result.cost_history),
        )
    else:
        sigma = (float("inf"),) * 6
        covariance = (0.0,) * 36
        fit = dict(
            converged=False,
            iterations=0,
            correspondences=n_correspondences,
            normalized_cost=0.0,
            pc_before=pc_value,
            pc_after=pc_value,
            cost_history=(),
        )
    return CalibrationReport(
        version=__version__,
        scenes=len(cfg.clouds),
        config_echo=cfg.echo,
        rotation=tuple(float(v) for v in transform.rotation.reshape(-1)),
        translation=tuple(float(v) for v in transform.translation),
        euler_zyx_deg=tuple(float(np.degrees(a)) for a in (yaw, pitch, roll)),
        sigma=sigma,
        covariance=covariance,
        information=tuple(float(v) for v in quality.per_axis_information),
        eigenvalues=tuple(float(v) for v in quality.eigenvalues),
        condition_number=float(quality.condition_number),
        occupancy=tuple(float(v) for v in np.asarray(quality.occupancy).reshape(-1)),
        flags=flags,
        residual_stats=tuple(stats),
        **fit,
    )


def _write_outputs(
    cfg: RunConfig,
    report: CalibrationReport,
    loaded: list[LoadedScene],
    transform: RigidTransform,
    intr: CameraIntrinsics,
) -> tuple[str, tuple[str, ...]]:
    os.makedirs(cfg.output_dir, exist_ok=True)
    report_path = os.path.join(cfg.output_dir, "report.txt")
    with open(report_path, "w") as fh:
        fh.write(serialize_report(report))
    overlay_paths = []
    for k, scene in enumerate(loaded):
        path = os.path.join(cfg.output_dir, f"overlay_scene{k}.png")
        save_image(render_overlay(scene.image, scene.cloud, transform, intr), path)
        overlay_paths.append(path)
    return report_path, tuple(overlay_paths)


def run_pipeline(cfg: RunConfig, write_outputs: bool = True) -> PipelineOutput:
    """Load, extract, calibrate, and write report + overlays.

    RankDeficient / TooFewCorrespondences / NotConverged still produce a
    report (flagged, converged = false) before the exception re-raises.
    """
    intr, loaded = load_scenes(cfg)
    pairs = extract_scenes(cfg, loaded)
    edge_counts = tuple((len(p.edges), len(p.edge_pixels)) for p in pairs)

    initial = cfg.initial
    if cfg.rough:
        initial = rough_calibrate(pairs, initial=initial, intr=intr, config=cfg.calibration)

    failure: Exception | None = None
    result: CalibrationResult | None = None
    try:
        result = calibrate_scenes(pairs, initial, intr, cfg.calibration, cfg.noise)
    except (RankDeficient, TooFewCorrespondences, NotConverged) as exc:
        failure = exc

    final = result.extrinsic if result is not None else initial
    batches = _final_batches(pairs, final, intr, cfg)
    stats = [
        ResidualStats.from_residuals(batch_residuals(b, final, intr)) for b in batches
    ]
    quality = scene_quality(_concat_batches(batches), final, intr)
    pc_value = percent_correspondence_scenes(
        pairs,
        final,
        intr,
        gates=cfg.calibration.gates,
        spacing=cfg.calibration.sample_spacing,
    )
    report = _build_report(
        cfg,
        final,
        result,
        quality,
        stats,
        sum(len(b) for b in batches),
        pc_value,
        failure,
    )

    report_path = ""
    overlay_paths: tuple[str, ...] = ()
    if write_outputs:
        report_path, overlay_paths = _write_outputs(cfg, report, loaded, final, intr)

    if failure is not None:
        raise failure
    return PipelineOutput(
        report=report,
        result=result,
        report_path=report_path,
        overlay_paths=overlay_paths,
        edge_counts=edge_counts,
    )


def cross_validate(cfg: RunConfig, write_outputs: bool = True) -> tuple[CrossValidationReport, str]:
    """Calibrate each scene alone, evaluate its extrinsic on every scene."""
    if len(cfg.clouds) < 2:
        raise ConfigError("cross-validation needs at least 2 scenes")
    intr, loaded = load_scenes(cfg)
    pairs = extract_scenes(cfg, loaded)

    extrinsics: list[RigidTransform] = []
    for pair in pairs:
        initial = cfg.initial
        if cfg.rough:
            initial = rough_calibrate(
                [pair], initial=initial, intr=intr, config=cfg.calibration
            )
        result = calibrate_scenes([pair], initial, intr, cfg.calibration, cfg.noise)
        extrinsics.append(result.extrinsic)

    eulers = []
    translations = []
    for transform in extrinsics:
        yaw, pitch, roll = rotation_to_euler_zyx(transform.rotation)
        eulers.append(tuple(float(np.degrees(a)) for a in (yaw, pitch, roll)))
        translations.append(tuple(float(v) for v in transform.translation))

    cells = []
    for transform in extrinsics:
        row = []
        for pair in pairs:
            batch = match_edges(
                pair.edges,
                cfg.calibration.sample_spacing,
                pair.edge_pixels,
                transform,
                intr,
                cfg.calibration.fine_gates(),
            )
            row.append(ResidualStats.from_residuals(batch_residuals(batch, transform, intr)))
        cells.append(tuple(row))

    report = CrossValidationReport(
        version=__version__,
        scenes=len(pairs),
        euler_zyx_deg=tuple(eulers),
        translations=tuple(translations),
        cells=tuple(cells),
    )
    path = ""
    if write_outputs:
        os.makedirs(cfg.output_dir, exist_ok=True)
        path = os.path.join(cfg.output_dir, "cross_validation.txt")
        with open(path, "w") as fh:
            fh.write(serialize_cross_validation(report))
    return report, path
