"""Command-line front end.

Exit codes: 0 success, 2 configuration or input-format problems, 3 the data
is degenerate (no edges, too few matches, rank-deficient geometry), 4 the
optimizer ran out of iterations. Angles are degrees at this boundary.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
import yaml

from ._version import __version__
from .calibrate import percent_correspondence_scenes, rough_calibrate
from .config import RunConfig, load_run_config
from .errors import (
    BehindCamera,
    ConfigError,
    DegeneratePoints,
    EmptyCloud,
    EmptyImage,
    InsufficientPixels,
    MissingKey,
    NearParallel,
    NoEdgesFound,
    NotConverged,
    NoVisibleEdges,
    OutOfFrame,
    ParseError,
    RankDeficient,
    TooFewCorrespondences,
    UnsupportedFormat,
)
from .geometry import rotation_to_euler_zyx
from .io import (
    load_intrinsics,
    render_overlay,
    save_extrinsic_text,
    save_image,
    save_intrinsics,
    save_point_cloud,
)
from .noise import LidarNoiseParams
from .pipeline import cross_validate, extract_scenes, load_scenes, run_pipeline
from .report import parse_report
from .simulate import (
    BleedingParams,
    ScanParams,
    default_intrinsics,
    generate_scene,
    render_gray_image,
    simulate_lidar_scan,
)

_DEGENERATE_ERRORS = (
    RankDeficient,
    NoEdgesFound,
    NoVisibleEdges,
    TooFewCorrespondences,
    InsufficientPixels,
    EmptyCloud,
    EmptyImage,
    NearParallel,
    DegeneratePoints,
    BehindCamera,
    OutOfFrame,
)
_CONFIG_ERRORS = (ConfigError, MissingKey, ParseError, UnsupportedFormat)


def _fmt_transform(transform) -> str:
    yaw, pitch, roll = (np.degrees(a) for a in rotation_to_euler_zyx(transform.rotation))
    t = transform.translation
    return (
        f"euler_zyx_deg: {yaw:.4f} {pitch:.4f} {roll:.4f}\n"
        f"translation_m: {t[0]:.5f} {t[1]:.5f} {t[2]:.5f}"
    )


def _load_cfg(args) -> RunConfig:
    return load_run_config(args.config, args.set)


def cmd_calibrate(args) -> int:
    cfg = _load_cfg(args)
    out = run_pipeline(cfg)
    result = out.result
    counts3d = " ".join(str(n3) for n3, _ in out.edge_counts)
    counts2d = " ".join(str(n2) for _, n2 in out.edge_counts)
    print(f"scenes: {len(out.edge_counts)}  edges3d: {counts3d}  edge_pixels: {counts2d}")
    print(
        f"converged in {result.iterations} iterations, "
        f"{result.n_correspondences} correspondences"
    )
    print(_fmt_transform(result.extrinsic))
    sigma = result.sigma
    print(
        "sigma_rot_deg: "
        + " ".join(f"{np.degrees(s):.5f}" for s in sigma[:3])
        + "\nsigma_trans_mm: "
        + " ".join(f"{1e3 * s:.3f}" for s in sigma[3:])
    )
    print(
        f"normalized_cost: {result.normalized_cost:.4f}  "
        f"pc: {result.pc_before:.4f} -> {result.pc_after:.4f}"
    )
    print(f"report: {out.report_path}")
    return 0


def cmd_rough(args) -> int:
    cfg = _load_cfg(args)
    intr, loaded = load_scenes(cfg)
    pairs = extract_scenes(cfg, loaded)
    gates = cfg.calibration.gates
    spacing = cfg.calibration.sample_spacing
    pc0 = percent_correspondence_scenes(pairs, cfg.initial, intr, gates, spacing)
    refined = rough_calibrate(pairs, initial=cfg.initial, intr=intr, config=cfg.calibration)
    pc1 = percent_correspondence_scenes(pairs, refined, intr, gates, spacing)
    os.makedirs(cfg.output_dir, exist_ok=True)
    path = os.path.join(cfg.output_dir, "rough_extrinsic.txt")
    save_extrinsic_text(refined, path)
    print(f"pc: {pc0:.4f} -> {pc1:.4f}")
    print(_fmt_transform(refined))
    print(f"extrinsic: {path}")
    return 0


def cmd_extract_edges(args) -> int:
    cfg = _load_cfg(args)
    _, loaded = load_scenes(cfg)
    pairs = extract_scenes(cfg, loaded)
    os.makedirs(cfg.output_dir, exist_ok=True)
    for k, (scene, pair) in enumerate(zip(loaded, pairs)):
        path3d = os.path.join(cfg.output_dir, f"edges3d_scene{k}.txt")
        with open(path3d, "w") as fh:
            fh.write("# point(xyz) direction(xyz) t_min t_max\n")
            for e in pair.edges:
                row = [*e.point_on_line, *e.direction, e.t_min, e.t_max]
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        mask = np.zeros(scene.image.pixels.shape, dtype=np.uint8)
        px = np.rint(pair.edge_pixels.pixels).astype(int)
        inside = (
            (px[:, 0] >= 0)
            & (px[:, 0] < mask.shape[1])
            & (px[:, 1] >= 0)
            & (px[:, 1] < mask.shape[0])
        )
        mask[px[inside, 1], px[inside, 0]] = 255
        path2d = os.path.join(cfg.output_dir, f"edge_pixels_scene{k}.png")
        save_image(mask, path2d)
        print(
            f"scene {k}: {len(pair.edges)} 3d edges -> {path3d}; "
            f"{len(pair.edge_pixels)} edge pixels -> {path2d}"
        )
    return 0


def cmd_simulate(args) -> int:
    scene = generate_scene(args.kind, args.seed)
    params = ScanParams(
        angular_step_deg=args.angular_step,
        noise=None if args.no_noise else LidarNoiseParams(),
        bleeding=BleedingParams(enabled=args.bleeding),
    )
    cloud = simulate_lidar_scan(scene, params, args.seed)
    intr = default_intrinsics()
    image = render_gray_image(scene, intr)

    os.makedirs(args.out, exist_ok=True)
    save_point_cloud(cloud, os.path.join(args.out, "cloud.pcd"), binary=True)
    save_image(image, os.path.join(args.out, "image.png"))
    save_intrinsics(intr, os.path.join(args.out, "intrinsics.txt"))
    save_extrinsic_text(scene.gt_extrinsic, os.path.join(args.out, "gt_extrinsic.txt"))
    with open(os.path.join(args.out, "edges_gt.txt"), "w") as fh:
        fh.write("# endpoint_a(xyz) endpoint_b(xyz)\n")
        for edge in scene.gt_edges:
            a, b = edge.endpoints()
            fh.write(" ".join(f"{v:.17g}" for v in (*a, *b)) + "\n")
    cfg_tree = {
        "clouds": ["cloud.pcd"],
        "images": ["image.png"],
        "intrinsics": "intrinsics.txt",
        "output_dir": "out",
        "voxel_size": 1.0 if args.kind == "facade" else 0.5,
        "seed": args.seed,
        "calibration": {"sample_spacing": 0.12},
    }
    with open(os.path.join(args.out, "config.yaml"), "w") as fh:
        yaml.safe_dump(cfg_tree, fh, sort_keys=True)
    print(
        f"{args.kind} scene (seed {args.seed}): {cloud.points.shape[0]} points, "
        f"{len(scene.gt_edges)} ground-truth edges -> {args.out}"
    )
    return 0


def cmd_cross_validate(args) -> int:
    cfg = _load_cfg(args)
    report, path = cross_validate(cfg)
    n = report.scenes
    print("median residual (px), rows = calibration scene, cols = evaluation scene")
    for i in range(n):
        print("  ".join(f"{report.cells[i][j].median:8.4f}" for j in range(n)))
    print(f"report: {path}")
    return 0


def cmd_overlay(args) -> int:
    cfg = _load_cfg(args)
    if args.report:
        with open(args.report) as fh:
            transform = parse_report(fh.read()).extrinsic()
    else:
        transform = cfg.initial
    intr = load_intrinsics(cfg.intrinsics)
    _, loaded = load_scenes(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    for k, scene in enumerate(loaded):
        path = os.path.join(cfg.output_dir, f"overlay_scene{k}.png")
        save_image(render_overlay(scene.image, scene.cloud, transform, intr), path)
        print(f"overlay: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgecal",
        description="Targetless LiDAR-camera extrinsic calibration from scene edges",
    )
    parser.add_argument("--version", action="version", version=f"edgecal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (dotted path), repeatable",
        )

    p = sub.add_parser("calibrate", help="full pipeline: extract, optimize, report")
    with_config(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("rough", help="grid search refining the initial extrinsic")
    with_config(p)
    p.set_defaults(func=cmd_rough)

    p = sub.add_parser("extract-edges", help="dump 3-D edges and image edge pixels")
    with_config(p)
    p.set_defaults(func=cmd_extract_edges)

    p = sub.add_parser("simulate", help="generate a synthetic scene bundle")
    p.add_argument(
        "--kind",
        default="room",
        choices=["room", "facade", "degenerate_one_direction", "degenerate_top_heavy"],
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--angular-step", type=float, default=0.05, help="scan grid, degrees")
    p.add_argument("--no-noise", action="store_true", help="noise-free scan")
    p.add_argument("--bleeding", action="store_true", help="simulate beam-divergence bleeding")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cross-validate", help="N x N residual statistics across scenes")
    with_config(p)
    p.set_defaults(func=cmd_cross_validate)

    p = sub.add_parser("overlay", help="project a cloud over its image")
    with_config(p)
    p.add_argument("--report", default="", help="take the extrinsic from this report")
    p.set_defaults(func=cmd_overlay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except _DEGENERATE_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
