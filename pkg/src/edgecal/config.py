"""Run configuration: YAML file, strict key checking, dotted overrides.

The YAML schema mirrors the parameter blocks of the pipeline stages. All
keys are optional except the input paths; unknown keys are rejected so a
typo cannot silently fall back to a default. Angles cross this boundary in
degrees and are converted to radians/cosines on the way in. Relative paths
are resolved against the config file's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import yaml

from .calibrate import CalibrationConfig
from .correspondence import MatchGates
from .errors import ConfigError
from .geometry import RigidTransform, euler_zyx_to_rotation
from .image_edge import CANNY_HIGH, CANNY_LOW, CANNY_SIGMA
from .lidar_edge import EdgeExtractionConfig, RansacParams
from .noise import ImageNoiseParams, LidarNoiseParams, SensorNoise

_DEFAULTS: dict = {
    "clouds": [],
    "images": [],
    "intrinsics": "",
    "output_dir": "edgecal_out",
    "voxel_size": 0.5,
    "seed": 0,
    "threads": None,
    "rough": True,
    "initial_extrinsic": {
        "euler_zyx_deg": [0.0, -90.0, 90.0],
        "translation": [0.0, 0.0, 0.0],
    },
    "extraction": {
        "min_points_per_voxel": 30,
        "ransac_dist_threshold": 0.02,
        "ransac_max_planes": 5,
        "ransac_min_inliers": 30,
        "ransac_max_iterations": 200,
        "ransac_confidence": 0.999,
        "ransac_min_patch_std": 0.04,
        "min_dihedral_deg": 30.0,
        "max_dihedral_deg": 150.0,
        "conn_radius": 0.1,
        "conn_min_points": 10,
        "edge_margin": 0.05,
        "merge_angle_deg": 1.0,
        "merge_lateral": 0.02,
        "min_edge_length": 0.25,
        "max_support_gap": 0.6,
    },
    "gates": {
        "kappa": 5,
        "max_pixel_dist": 12.0,
        "max_direction_angle_deg": 30.0,
        "max_eigen_ratio": 0.25,
        "min_correspondences": 30,
    },
    "canny": {"sigma": CANNY_SIGMA, "low": CANNY_LOW, "high": CANNY_HIGH},
    "noise": {"sigma_i": 1.5, "sigma_d": 0.02, "sigma_omega": 0.0015},
    "calibration": {
        "convergence_eps": 1e-6,
        "max_iterations": 50,
        "damping": 1e-4,
        "sample_spacing": 0.02,
        "fine_pixel_dist": 5.0,
        "rough_rot_grid_deg": 0.5,
        "rough_trans_grid": 0.02,
        "rough_rot_range_deg": 6.0,
        "rough_trans_range": 0.12,
    },
}


@dataclass(frozen=True)
class RunConfig:
    clouds: tuple[str, ...]
    images: tuple[str, ...]
    intrinsics: str
    output_dir: str
    seed: int
    threads: int | None
    rough: bool
    initial: RigidTransform
    extraction: EdgeExtractionConfig
    calibration: CalibrationConfig
    noise: SensorNoise
    canny_sigma: float
    canny_low: float
    canny_high: float
    echo: tuple[tuple[str, str], ...]


def _merge(defaults: dict, user: dict, prefix: str = "") -> dict:
    out = {}
    for key, default in defaults.items():
        if key in user:
            value = user[key]
            if isinstance(default, dict) and default:
                if not isinstance(value, dict):
                    raise ConfigError(f"config key '{prefix}{key}' must be a mapping")
                out[key] = _merge(default, value, f"{prefix}{key}.")
            else:
                out[key] = value
        else:
            out[key] = (
                _merge(default, {}, f"{prefix}{key}.")
                if isinstance(default, dict) and default
                else default
            )
    unknown = set(user) - set(defaults)
    if unknown:
        names = ", ".join(sorted(f"{prefix}{k}" for k in unknown))
        raise ConfigError(f"unknown config key(s): {names}")
    return out


def _flatten(tree: dict, prefix: str = "") -> list[tuple[str, str]]:
    items: list[tuple[str, str]] = []
    for key in sorted(tree):
        value = tree[key]
        if isinstance(value, dict):
            items.extend(_flatten(value, f"{prefix}{key}."))
        else:
            text = yaml.safe_dump(value, default_flow_style=True).strip()
            if text.endswith("\n..."):
                text = text[:-4].strip()
            items.append((f"{prefix}{key}", text))
    return items


def _number(tree: dict, key: str, kind=float):
    value = tree[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"config key '{key}' must be a number, got {value!r}")
    return kind(value)


def _triple(value, key: str) -> np.ndarray:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ConfigError(f"config key '{key}' must be a list of 3 numbers")
    try:
        return np.array([float(v) for v in value])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key '{key}': {exc}") from exc


def apply_overrides(tree: dict, overrides: list[str]) -> dict:
    """Apply 'dotted.key=value' strings; values parse as YAML scalars."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw_value = item.partition("=")
        key = key.strip()
        try:
            value = yaml.safe_load(raw_value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: bad value: {exc}") from exc
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: '{part}' is not a mapping")
        node[parts[-1]] = value
    return tree


def config_from_dict(tree: dict, base_dir: str = ".") -> RunConfig:
    merged = _merge(_DEFAULTS, tree)

    def resolve(path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(base_dir, path)

    clouds = tuple(resolve(str(p)) for p in merged["clouds"])
    images = tuple(resolve(str(p)) for p in merged["images"])
    intrinsics = resolve(str(merged["intrinsics"])) if merged["intrinsics"] else ""
    if not clouds or not images:
        raise ConfigError("config needs at least one cloud and one image")
    if len(clouds) != len(images):
        raise ConfigError(
            f"{len(clouds)} clouds but {len(images)} images; need one image per cloud"
        )
    if not intrinsics:
        raise ConfigError("config key 'intrinsics' is required")
    for path in (*clouds, *images, intrinsics):
        if not os.path.isfile(path):
            raise ConfigError(f"referenced file does not exist: {path}")

    voxel_size = _number(merged, "voxel_size")
    if voxel_size <= 0.0:
        raise ConfigError("voxel_size must be positive")

    ext = merged["extraction"]
    extraction = EdgeExtractionConfig(
        voxel_size=voxel_size,
        min_points_per_voxel=int(ext["min_points_per_voxel"]),
        ransac=RansacParams(
            dist_threshold=float(ext["ransac_dist_threshold"]),
            max_planes=int(ext["ransac_max_planes"]),
            min_inliers=int(ext["ransac_min_inliers"]),
            max_iterations=int(ext["ransac_max_iterations"]),
            confidence=float(ext["ransac_confidence"]),
            min_patch_std=float(ext["ransac_min_patch_std"]),
        ),
        angle_range_deg=(float(ext["min_dihedral_deg"]), float(ext["max_dihedral_deg"])),
        conn_radius=float(ext["conn_radius"]),
        conn_min_points=int(ext["conn_min_points"]),
        edge_margin=float(ext["edge_margin"]),
        merge_angle_deg=float(ext["merge_angle_deg"]),
        merge_lateral=float(ext["merge_lateral"]),
        min_edge_length=float(ext["min_edge_length"]),
        max_support_gap=float(ext["max_support_gap"]),
    )

    g = merged["gates"]
    gates = MatchGates(
        kappa=int(g["kappa"]),
        max_pixel_dist=float(g["max_pixel_dist"]),
        min_direction_cos=float(np.cos(np.radians(float(g["max_direction_angle_deg"])))),
        max_eigen_ratio=float(g["max_eigen_ratio"]),
        min_correspondences=int(g["min_correspondences"]),
    )

    cal = merged["calibration"]
    calibration = CalibrationConfig(
        convergence_eps=float(cal["convergence_eps"]),
        max_iterations=int(cal["max_iterations"]),
        damping=float(cal["damping"]),
        sample_spacing=float(cal["sample_spacing"]),
        fine_pixel_dist=float(cal["fine_pixel_dist"]),
        rough_rot_grid_deg=float(cal["rough_rot_grid_deg"]),
        rough_trans_grid=float(cal["rough_trans_grid"]),
        rough_rot_range_deg=float(cal["rough_rot_range_deg"]),
        rough_trans_range=float(cal["rough_trans_range"]),
        gates=gates,
    )

    nz = merged["noise"]
    noise = SensorNoise(
        image=ImageNoiseParams(sigma_i=float(nz["sigma_i"])),
        lidar=LidarNoiseParams(
            sigma_d=float(nz["sigma_d"]), sigma_omega=float(nz["sigma_omega"])
        ),
    )

    init = merged["initial_extrinsic"]
    euler = np.radians(_triple(init["euler_zyx_deg"], "initial_extrinsic.euler_zyx_deg"))
    translation = _triple(init["translation"], "initial_extrinsic.translation")
    initial = RigidTransform(euler_zyx_to_rotation(*euler), translation)

    threads = merged["threads"]
    if threads is not None:
        threads = int(threads)
        if threads < 1:
            raise ConfigError("threads must be >= 1 when given")

    echo_tree = dict(merged)
    return RunConfig(
        clouds=clouds,
        images=images,
        intrinsics=intrinsics,
        output_dir=resolve(str(merged["output_dir"])),
        seed=int(merged["seed"]),
        threads=threads,
        rough=bool(merged["rough"]),
        initial=initial,
        extraction=extraction,
        calibration=calibration,
        noise=noise,
        canny_sigma=float(merged["canny"]["sigma"]),
        canny_low=float(merged["canny"]["low"]),
        canny_high=float(merged["canny"]["high"]),
        echo=tuple(_flatten(echo_tree)),
    )


def load_run_config(path: str, overrides: list[str] | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            tree = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"config {path} must be a YAML mapping")
    tree = apply_overrides(tree, list(overrides or []))
    return config_from_dict(tree, base_dir=os.path.dirname(os.path.abspath(path)))


def default_config_tree() -> dict:
    """Deep copy of the full default config tree (for generated configs)."""
    return yaml.safe_load(yaml.safe_dump(_DEFAULTS))
