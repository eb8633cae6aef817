"""Targetless LiDAR-camera extrinsic calibration from scene edges.

The estimator aligns depth-continuous 3-D edges (intersections of fitted
planes in the point cloud) with 2-D image edges, solving for the rigid
LiDAR-to-camera transform by maximum-likelihood estimation under a
physically derived per-point noise model, and reports the covariance of
the result. A synthetic-scene oracle makes every numerical claim testable
without sensors.
"""

from ._version import __version__
from .calibrate import (
    CalibrationConfig,
    CalibrationResult,
    ScenePair,
    SceneQualityReport,
    batch_residuals,
    calibrate_scenes,
    covariance_matrix,
    iterate_mle,
    noise_jacobian,
    percent_correspondence,
    percent_correspondence_scenes,
    pose_jacobian,
    residual,
    rough_calibrate,
    scene_quality,
    sigma_per_axis,
    solve_delta,
)
from .camera import (
    CameraIntrinsics,
    Z_MIN,
    apply_distortion,
    distortion_jacobian,
    in_frame,
    project_batch,
    project_pinhole,
    project_point,
    projection_chain_jacobians,
    projection_jacobian,
    undistort_pixel,
)
from .config import RunConfig, config_from_dict, load_run_config
from .correspondence import (
    Correspondence,
    CorrespondenceBatch,
    LineFit2D,
    MatchGates,
    build_correspondences,
    fit_local_line,
    match_edges,
    project_lidar_point,
)
from .errors import (
    BehindCamera,
    ConfigError,
    DegeneratePoints,
    EdgecalError,
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
from .geometry import (
    BearingVector,
    RigidTransform,
    TwistIncrement,
    euler_zyx_to_rotation,
    rotation_angle,
    rotation_distance,
    rotation_to_euler_zyx,
    s2_boxplus,
    se3_boxplus,
    skew,
    so3_exp,
    so3_log,
    tangent_basis,
)
from .image_edge import EdgePixelSet, GrayImage, canny_edges, to_grayscale
from .io import (
    load_extrinsic_text,
    load_image,
    load_intrinsics,
    load_point_cloud,
    render_overlay,
    save_extrinsic_text,
    save_image,
    save_intrinsics,
    save_point_cloud,
)
from .lidar_edge import (
    Edge3D,
    EdgeExtractionConfig,
    FittedPlane,
    PointCloud,
    RansacParams,
    VoxelGrid,
    extract_depth_continuous_edges,
    intersect_planes,
    plane_pair_candidates,
    ransac_extract_planes,
    sample_edge_points,
    voxelize,
)
from .noise import (
    ImageNoiseParams,
    LidarNoiseParams,
    SensorNoise,
    correspondence_noise_cov,
    lidar_point_cov,
    lidar_point_cov_batch,
)
from .pipeline import PipelineOutput, cross_validate, run_pipeline
from .report import (
    CalibrationReport,
    CrossValidationReport,
    ResidualStats,
    parse_cross_validation,
    parse_report,
    serialize_cross_validation,
    serialize_report,
    trim_residuals,
)
from .simulate import (
    BleedingParams,
    Rectangle,
    ScanParams,
    SyntheticScene,
    default_intrinsics,
    exact_edge_pixels,
    generate_scene,
    nominal_extrinsic,
    render_edge_image,
    render_gray_image,
    simulate_lidar_scan,
)
