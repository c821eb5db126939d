"""Forward and backward geometric camera and housing models."""

from refcal.geometry.camera import (
    CameraIntrinsics,
    CameraModel,
    Pose,
    Ray,
    backproject_pinhole,
    distort,
    project_pinhole,
    undistort,
)
from refcal.geometry.housing import (
    DomePort,
    FlatPort,
    Housing,
    backproject_dome,
    backproject_flat,
    backproject_housing,
    project_dome,
    project_flat,
    project_housing,
)
from refcal.geometry.refraction import intersect_ray_plane, intersect_ray_sphere, refract

__all__ = [
    "CameraIntrinsics",
    "CameraModel",
    "DomePort",
    "FlatPort",
    "Housing",
    "Pose",
    "Ray",
    "backproject_dome",
    "backproject_flat",
    "backproject_housing",
    "backproject_pinhole",
    "distort",
    "intersect_ray_plane",
    "intersect_ray_sphere",
    "project_dome",
    "project_flat",
    "project_housing",
    "project_pinhole",
    "refract",
    "undistort",
]
