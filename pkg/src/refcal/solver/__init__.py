"""Levenberg-Marquardt engine and closed-form initializers."""

from refcal.solver.linear import homography_dlt, median_pose, pose_from_homography, zhang_intrinsics
from refcal.solver.lm import (
    LeastSquaresProblem,
    LMConfig,
    Manifold,
    ParameterBlock,
    ResidualBlock,
    SolveResult,
    numeric_jacobian,
    solve_lm,
)

__all__ = [
    "LMConfig",
    "LeastSquaresProblem",
    "Manifold",
    "ParameterBlock",
    "ResidualBlock",
    "SolveResult",
    "homography_dlt",
    "median_pose",
    "numeric_jacobian",
    "pose_from_homography",
    "solve_lm",
    "zhang_intrinsics",
]
