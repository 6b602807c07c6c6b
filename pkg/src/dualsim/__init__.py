"""Dual radiance-field robot sensor simulator: a static scene field plus
articulated human fields driven by a social-force crowd, rendered to
camera, depth and LiDAR streams."""

__version__ = "0.1.0"

from .field import AnalyticField, RadianceSample, VoxelGridField, eval_field, make_synthetic_scene
from .geometry import CameraIntrinsics, Pose, Ray, compose, inverse, pixel_ray, project
from .render import LidarSpec, RaySampling, composite_ray, render_camera, render_depth, render_lidar

__all__ = [
    "AnalyticField", "CameraIntrinsics", "LidarSpec", "Pose", "RadianceSample", "Ray", "RaySampling",
    "VoxelGridField", "compose", "composite_ray", "eval_field", "inverse", "make_synthetic_scene",
    "pixel_ray", "project", "render_camera", "render_depth", "render_lidar",
]
