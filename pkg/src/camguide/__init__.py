"""Training-free camera-controlled video guidance: explicit camera trajectories over a
lifted point cloud, diffusion inversion of the rendered frames, and regeneration
through a pluggable denoiser, plus trajectory-accuracy metrics."""

__version__ = "0.1.0"

from .geometry import CameraPose, MotionPrimitive, PinholeCamera, Trajectory, build_primitive, combine, compose  # noqa: E402
from .pointcloud import PointCloud, RenderResult, RgbdFrame, lift, render, stage_one  # noqa: E402

__all__ = [
    "CameraPose",
    "MotionPrimitive",
    "PinholeCamera",
    "PointCloud",
    "RenderResult",
    "RgbdFrame",
    "Trajectory",
    "build_primitive",
    "combine",
    "compose",
    "lift",
    "render",
    "stage_one",
]
