"""Single-camera intrinsics calibration from planar target views."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from refcal.calib.coverage import coverage
from refcal.calib.dataset import ObservationDataset, View
from refcal.calib.report import CalibrationReport
from refcal.calib.residuals import PinholeViewResidual
from refcal.errors import InputError, InsufficientViews, NumericalError
from refcal.geometry.camera import CameraIntrinsics, CameraModel, Pose, pixel_to_normalized
from refcal.geometry.housing import Housing, project_housing
from refcal.solver.linear import (
    IntrinsicsConstraint,
    homography_dlt,
    plane_frame,
    pose_from_homography,
    zhang_intrinsics,
)
from refcal.solver.lm import LeastSquaresProblem, LMConfig, Manifold, ParameterBlock, solve_lm

logger = logging.getLogger(__name__)


def target_frame(view: View) -> Pose:
    """Transform putting the view's (planar) target points onto ``Z = 0``."""
    frame = plane_frame(view.points)
    if frame is None:
        raise InputError(f"view {view.view_id}: target points are not coplanar; a planar target is required")
    return frame


def view_homography(view: View, frame: Pose | None = None) -> np.ndarray:
    """Homography from target-plane coordinates to raw pixels."""
    frame = frame or target_frame(view)
    return homography_dlt(frame.apply(view.points)[:, :2], view.pixels)


def pinhole_pose(K: CameraIntrinsics, view: View) -> Pose:
    """Planar PnP: homography on undistorted normalized coordinates, then decomposition."""
    frame = target_frame(view)
    xn, ok = pixel_to_normalized(K, view.pixels)
    if not np.all(ok):
        raise NumericalError(f"view {view.view_id}: undistortion failed")
    H = homography_dlt(frame.apply(view.points)[:, :2], xn)
    return pose_from_homography(np.eye(3), H).compose(frame)


def pose_blocks(pose: Pose, constant: bool = False, name: str = "") -> tuple[ParameterBlock, ParameterBlock]:
    rot = ParameterBlock(pose.rotvec, manifold=Manifold.ROTATION, name=f"{name}rotation")
    trans = ParameterBlock(pose.translation, name=f"{name}translation")
    if constant:
        rot.set_constant()
        trans.set_constant()
    return rot, trans


def pose_from_result(result, rot: ParameterBlock, trans: ParameterBlock) -> Pose:
    return Pose.from_rotvec(result[rot], result[trans])


def initial_intrinsics(data: ObservationDataset, model: CameraModel) -> tuple[CameraIntrinsics, list[Pose]]:
    """Zhang closed form: per-view homographies, intrinsics, then per-view poses."""
    frames = [target_frame(v) for v in data.views]
    Hs = [view_homography(v, f) for v, f in zip(data.views, frames)]
    constraint = IntrinsicsConstraint.SHARED_FOCAL if model.shared_focal else IntrinsicsConstraint.FULL_K
    K0 = zhang_intrinsics(Hs, constraint, image_size=data.image_size)
    K = CameraIntrinsics(model, K0.fx, K0.fy, K0.cx, K0.cy, (0.0,) * model.n_distortion)
    poses = [pose_from_homography(K, H).compose(f) for H, f in zip(Hs, frames)]
    return K, poses


@dataclass(frozen=True, eq=False)
class ReprojectionStats:
    rms: float
    per_view_rms: tuple[float, ...]
    residuals: tuple[np.ndarray, ...]
    n_excluded: int


def _view_projection(K, housing, pose, view):
    """Projected pixels and a validity mask; failures are evaluated point by point."""
    try:
        return project_housing(K, housing, pose, view.points), np.ones(len(view), dtype=bool)
    except NumericalError:
        pix = np.full((len(view), 2), np.nan)
        ok = np.zeros(len(view), dtype=bool)
        for i, X in enumerate(view.points):
            try:
                pix[i] = project_housing(K, housing, pose, X)
                ok[i] = True
            except NumericalError:
                pass
        return pix, ok


def evaluate_reprojection(
    data: ObservationDataset,
    K: CameraIntrinsics,
    poses: Sequence[Pose],
    housing: Housing | None = None,
) -> ReprojectionStats:
    """Residuals ``observed - projected`` per observation and their RMS values.

    Observations that cannot be projected (behind the camera, behind the
    port) are excluded from the RMS, counted, and reported as NaN residuals.
    """
    if len(poses) != len(data.views):
        raise ValueError("need exactly one pose per view")
    residuals, per_view = [], []
    total_sq, total_n, excluded = 0.0, 0, 0
    for view, pose in zip(data.views, poses):
        if housing is None:
            Xc = pose.apply(view.points)
            ok = Xc[:, 2] > 0
            pix = np.full((len(view), 2), np.nan)
            if np.any(ok):
                pix[ok] = project_housing(K, None, Pose.identity(), Xc[ok])
        else:
            pix, ok = _view_projection(K, housing, pose, view)
        r = view.pixels - pix
        sq = np.sum(r[ok] ** 2)
        n = int(ok.sum())
        excluded += len(view) - n
        total_sq += sq
        total_n += n
        per_view.append(float(np.sqrt(sq / n)) if n else float("nan"))
        residuals.append(r)
    if excluded:
        logger.warning("%d observations could not be projected and were excluded", excluded)
    rms = float(np.sqrt(total_sq / total_n)) if total_n else float("nan")
    return ReprojectionStats(rms, tuple(per_view), tuple(residuals), excluded)


def calibrate_camera(
    data: ObservationDataset,
    model: CameraModel | str = CameraModel.RADIAL,
    config: LMConfig | None = None,
    grid_size: int = 10,
) -> CalibrationReport:
    """Intrinsics and per-view poses minimizing the reprojection error.

    Closed-form initialization (homographies, Zhang intrinsics, pose
    decomposition) with zero distortion, then joint Levenberg-Marquardt over
    intrinsics, distortion and all poses.

    Raises:
        InsufficientViews: fewer than two views.
        DegenerateMotion: the views do not constrain the intrinsics.
    """
    model = CameraModel(model)
    data.validate()
    if len(data.views) < 2:
        raise InsufficientViews(f"{len(data.views)} view(s) given; intrinsics calibration needs at least 2")
    K0, poses0 = initial_intrinsics(data, model)
    logger.info("closed-form init: fx=%.3f fy=%.3f cx=%.3f cy=%.3f", K0.fx, K0.fy, K0.cx, K0.cy)

    kblock = ParameterBlock(K0.params(), name="intrinsics")
    problem = LeastSquaresProblem()
    pblocks = []
    for view, pose in zip(data.views, poses0):
        rot, trans = pose_blocks(pose, name=f"{view.view_id}/")
        pblocks.append((rot, trans))
        res = PinholeViewResidual(model, view.pixels, view.points)
        problem.add(res, [kblock, rot, trans], res.jacobian)
    result = solve_lm(problem, config)

    K = CameraIntrinsics.from_params(model, result[kblock])
    poses = [pose_from_result(result, r, t) for r, t in pblocks]
    stats = evaluate_reprojection(data, K, poses)
    std = dict(zip(model.param_names, (float(s) for s in result.stddev(kblock))))
    return CalibrationReport(
        intrinsics=K,
        view_ids=data.view_ids,
        poses=tuple(poses),
        rms=stats.rms,
        per_view_rms=stats.per_view_rms,
        stddev=std,
        image_size=data.image_size,
        coverage=coverage(data, grid_size),
        metadata={"command": "calibrate-camera", "termination": result.termination, "iterations": result.iterations},
    )

