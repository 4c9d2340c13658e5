"""Multi-camera RGBD tracking: simulation, depth correction, filtering and fusion."""

from .config import ConfigError, ScenarioConfig, config_from_dict, load_config
from .correction import CorrectionModel, apply_correction, filter_unreliable, fit_correction
from .fusion import SensorEstimate, ci_fuse, ci_weights, fuse_frame, to_world
from .geometry import CameraModel, Extrinsics, Intrinsics, backproject, project, register_frame
from .harness import benchmark, compute_rms, observe_scenario, run_scenario, standard_config
from .markers import HsvRange, compute_pose, extract_centroids, morph_open, rgb_to_hsv, threshold_mask
from .pixel_kalman import DepthNoiseModel, filter_frame, pk_update
from .simulator import CameraSimulator, Scene, SensorProfile, SubcircularTrajectory
from .tracker import (
    InfeasibleAlpha,
    InfeasibleTheta,
    MarkerTracker,
    kf_step,
    make_motion_model,
    rf_step,
    track_marker,
)

__version__ = "0.1.0"
