"""Multi-resolution elevation mapping with mixture-of-Gaussians fusion and
safe landing site detection."""

from .fusion import (
    EMPTY_STATE,
    CellState,
    GaussianMeasurement,
    KalmanState,
    fuse_states,
    inflate,
    kalman_update,
    omg_batch,
    omg_update,
    omg_update_overflow_safe,
)
from .pyramid import (
    CameraModel,
    Measurement,
    PooledPyramid,
    PyramidConfig,
    PyramidMap,
    measurement_variance,
    select_layer,
)
from .segmentation import (
    SafetyMaps,
    SegConfig,
    compute_roughness_naive,
    compute_roughness_rolling,
    compute_slope_top,
    segment,
)
from .detection import (
    DetectConfig,
    DetectionResult,
    LandingCandidate,
    detect_peaks,
    distance_transform,
    euclidean_distance_exact,
    mean_shift,
    run_detection,
    select_site,
)
from .synth import (
    FrameData,
    Ramp,
    Rock,
    Terrain,
    TerrainSpec,
    TrajectorySpec,
    generate_terrain,
    render_pointcloud,
)
from .config import ConfigError, RunConfig, load_run_config, resolve_run_config
from .pipeline import RunSummary, run_stream

__version__ = "0.1.0"
