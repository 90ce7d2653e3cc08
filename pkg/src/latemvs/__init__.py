"""Plane-sweep multi-view stereo with early and late (view-preserved) cost aggregation."""
from ._accel import backend, set_backend, use_backend
from .aggregation import AggregationStrategy, reduce_views
from .filtering import FilterConfig, FusedCloud, filter_all, fuse_point_cloud
from .flex_views import run_flexible
from .geometry import Camera, CameraIntrinsics, CameraPose
from .metrics import compare_strategies, depth_accuracy, preservation_ratio
from .pipeline import CascadeConfig, DepthEstimate, run_cascade

__version__ = "0.1.0"

__all__ = [
    "AggregationStrategy",
    "Camera",
    "CameraIntrinsics",
    "CameraPose",
    "CascadeConfig",
    "DepthEstimate",
    "FilterConfig",
    "FusedCloud",
    "backend",
    "compare_strategies",
    "depth_accuracy",
    "filter_all",
    "fuse_point_cloud",
    "preservation_ratio",
    "reduce_views",
    "run_cascade",
    "run_flexible",
    "set_backend",
    "use_backend",
]
