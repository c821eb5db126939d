"""Relative pose of a rigid two-camera rig from synchronized target views."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from refcal.calib.camera import calibrate_camera, evaluate_reprojection, pinhole_pose, pose_blocks, pose_from_result
from refcal.calib.coverage import coverage
from refcal.calib.dataset import ObservationDataset, StereoDataset
from refcal.calib.report import CalibrationReport, StereoSection
from refcal.calib.residuals import StereoPairResidual
from refcal.errors import InsufficientPairs, NumericalError
from refcal.geometry.camera import CameraIntrinsics, CameraModel, Pose
from refcal.solver.linear import median_pose
from refcal.solver.lm import LeastSquaresProblem, LMConfig, ParameterBlock, solve_lm

logger = logging.getLogger(__name__)


def relative_pose_per_pair(pose1: Pose, pose2: Pose) -> Pose:
    """Pose of camera 2 relative to camera 1: ``R12 = R2 R1^T``, ``t12 = t2 - R12 t1``."""
    R12 = pose2.rotation @ pose1.rotation.T
    return Pose(R12, pose2.translation - R12 @ pose1.translation)


@dataclass(frozen=True, eq=False)
class StereoResult:
    relative_pose: Pose
    initial_relative_pose: Pose
    pair_ids: tuple[str, ...]
    poses1: tuple[Pose, ...]
    K1: CameraIntrinsics
    K2: CameraIntrinsics
    refine_intrinsics: bool
    rms: float
    rms_cam1: float
    rms_cam2: float
    per_pair_rms: tuple[float, ...]
    stddev_relative: dict[str, float]
    stddev_K1: dict[str, float]
    stddev_K2: dict[str, float]
    dropped_pairs: tuple[str, ...]
    termination: str
    iterations: int

    @property
    def poses2(self) -> tuple[Pose, ...]:
        return tuple(self.relative_pose.compose(p) for p in self.poses1)


def _intrinsics(data: StereoDataset, k: int, K, model) -> CameraIntrinsics:
    if K is not None:
        return K
    logger.info("calibrating camera %d individually", k)
    return calibrate_camera(data.camera_dataset(k), model).intrinsics


def _pair_poses(data: StereoDataset, K1, K2):
    kept, dropped = [], []
    for pair in data.pairs:
        try:
            kept.append((pair, pinhole_pose(K1, pair.cam1), pinhole_pose(K2, pair.cam2)))
        except NumericalError as exc:
            logger.warning("dropping pair %s: %s", pair.view_id, exc)
            dropped.append(pair.view_id)
    return kept, dropped


def _subset(data: StereoDataset, pairs, k: int) -> ObservationDataset:
    views = [p.cam1 if k == 1 else p.cam2 for p in pairs]
    return ObservationDataset(tuple(views), data.image_size1 if k == 1 else data.image_size2, data.target)


def calibrate_stereo(
    data: StereoDataset,
    K1: CameraIntrinsics | None = None,
    K2: CameraIntrinsics | None = None,
    refine_intrinsics: bool = False,
    model: CameraModel | str = CameraModel.RADIAL,
    config: LMConfig | None = None,
) -> StereoResult:
    """Joint estimate of camera 1's pair poses and the rig's relative pose.

    Missing intrinsics are calibrated per camera from the same pairs. The
    relative pose starts from the component-wise median over the per-pair
    estimates, which keeps a few bad pairs from spoiling the start.

    Raises:
        InsufficientPairs: fewer than two pairs survive pose estimation.
    """
    model = CameraModel(model)
    data.validate()
    K1 = _intrinsics(data, 1, K1, model)
    K2 = _intrinsics(data, 2, K2, model)
    kept, dropped = _pair_poses(data, K1, K2)
    if len(kept) < 2:
        raise InsufficientPairs(f"{len(kept)} usable pair(s); stereo calibration needs at least 2")
    rel0 = median_pose([relative_pose_per_pair(p1, p2) for _, p1, p2 in kept])

    k1 = ParameterBlock(K1.params(), name="K1")
    k2 = ParameterBlock(K2.params(), name="K2")
    if not refine_intrinsics:
        k1.set_constant()
        k2.set_constant()
    rv12, t12 = pose_blocks(rel0, name="relative/")
    problem = LeastSquaresProblem()
    pblocks = []
    for pair, p1, _ in kept:
        rot, trans = pose_blocks(p1, name=f"{pair.view_id}/")
        pblocks.append((rot, trans))
        res = StereoPairResidual(
            K1.model, K2.model, pair.cam1.pixels, pair.cam1.points, pair.cam2.pixels, pair.cam2.points
        )
        problem.add(res, [k1, k2, rot, trans, rv12, t12], res.jacobian)
    result = solve_lm(problem, config)

    if refine_intrinsics:
        K1 = CameraIntrinsics.from_params(K1.model, result[k1])
        K2 = CameraIntrinsics.from_params(K2.model, result[k2])
    rel = pose_from_result(result, rv12, t12)
    poses1 = [pose_from_result(result, r, t) for r, t in pblocks]
    pairs = [p for p, _, _ in kept]
    s1 = evaluate_reprojection(_subset(data, pairs, 1), K1, poses1)
    s2 = evaluate_reprojection(_subset(data, pairs, 2), K2, [rel.compose(p) for p in poses1])

    def sq(stats):
        return sum(float(np.nansum(r**2)) for r in stats.residuals), sum(len(r) for r in stats.residuals) - stats.n_excluded

    (a1, n1), (a2, n2) = sq(s1), sq(s2)
    per_pair = tuple(
        float(np.sqrt((np.nansum(r1**2) + np.nansum(r2**2)) / (len(r1) + len(r2))))
        for r1, r2 in zip(s1.residuals, s2.residuals)
    )
    srv, st = result.stddev(rv12), result.stddev(t12)
    std_rel = dict(zip(("r_x", "r_y", "r_z", "t_x", "t_y", "t_z"), (float(v) for v in (*srv, *st))))
    std1 = dict(zip(K1.model.param_names, (float(v) for v in result.stddev(k1)))) if refine_intrinsics else {}
    std2 = dict(zip(K2.model.param_names, (float(v) for v in result.stddev(k2)))) if refine_intrinsics else {}
    return StereoResult(
        relative_pose=rel,
        initial_relative_pose=rel0,
        pair_ids=tuple(p.view_id for p in pairs),
        poses1=tuple(poses1),
        K1=K1,
        K2=K2,
        refine_intrinsics=refine_intrinsics,
        rms=float(np.sqrt((a1 + a2) / (n1 + n2))),
        rms_cam1=s1.rms,
        rms_cam2=s2.rms,
        per_pair_rms=per_pair,
        stddev_relative=std_rel,
        stddev_K1=std1,
        stddev_K2=std2,
        dropped_pairs=tuple(dropped),
        termination=result.termination,
        iterations=result.iterations,
    )


def stereo_report(result: StereoResult, data: StereoDataset, grid_size: int = 10) -> CalibrationReport:
    """Report whose camera fields describe camera 1 and whose stereo section holds the rig."""
    kept = set(result.pair_ids)
    pairs = [p for p in data.pairs if p.view_id in kept]
    section = StereoSection(
        relative_pose=result.relative_pose,
        initial_relative_pose=result.initial_relative_pose,
        intrinsics2=result.K2,
        refine_intrinsics=result.refine_intrinsics,
        rms_cam1=result.rms_cam1,
        rms_cam2=result.rms_cam2,
        stddev=result.stddev_relative,
        stddev2=result.stddev_K2,
        image_size2=data.image_size2,
        coverage2=coverage(_subset(data, pairs, 2), grid_size),
        dropped_pairs=result.dropped_pairs,
    )
    return CalibrationReport(
        intrinsics=result.K1,
        view_ids=result.pair_ids,
        poses=result.poses1,
        rms=result.rms,
        per_view_rms=result.per_pair_rms,
        stddev=result.stddev_K1,
        image_size=data.image_size1,
        coverage=coverage(_subset(data, pairs, 1), grid_size),
        stereo=section,
        metadata={"command": "calibrate-stereo", "termination": result.termination, "iterations": result.iterations},
    )
