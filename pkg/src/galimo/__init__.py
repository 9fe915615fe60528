"""Lidar-monocular odometry whose robustness parameters are tuned by a genetic algorithm."""

__version__ = "0.1.0"

from .geometry import CameraIntrinsics, Pose  # noqa: E402
from .ga import ParameterSet, STOCK  # noqa: E402

__all__ = ["CameraIntrinsics", "ParameterSet", "Pose", "STOCK", "__version__"]
