"""
UWB-only SLAM: radar point features and AOA-tracked tags fused in an EKF,
with a seeded simulator and an evaluation harness.
"""

from .driver import Driver, DriverConfig, RunLog, replay
from .ekf import RangeBearingObs, SlamState
from .evaluation import MetricsReport, align_trajectories, landmark_error, rms_ate, run_ablation
from .geometry import Pose2D, wrap_angle
from .runner import run_scenario
from .scenario import Scenario, load_scenario

__all__ = [
    "Driver",
    "DriverConfig",
    "MetricsReport",
    "Pose2D",
    "RangeBearingObs",
    "RunLog",
    "Scenario",
    "SlamState",
    "align_trajectories",
    "landmark_error",
    "load_scenario",
    "replay",
    "rms_ate",
    "run_ablation",
    "run_scenario",
    "wrap_angle",
]

__version__ = "0.1.0"
