import math

import numpy as np
import pytest

import refcal.calib.stereo as stereo_mod
from refcal.calib.dataset import StereoDataset, StereoPair, View
from refcal.calib.residuals import StereoPairResidual
from refcal.calib.stereo import calibrate_stereo, relative_pose_per_pair, stereo_report
from refcal.errors import InsufficientPairs
from refcal.geometry.camera import Pose
from refcal.geometry.rotation import log_so3, rotation_about
from refcal.synthetic import table1_camera

from .conftest import random_rotation

K = table1_camera()


def rotation_error(a: Pose, b: Pose) -> float:
    return float(np.linalg.norm(log_so3(a.rotation @ b.rotation.T)))


def subset(data: StereoDataset, n: int) -> StereoDataset:
    return StereoDataset(data.pairs[:n], data.image_size1, data.image_size2, data.target)


def test_relative_pose_of_equal_poses_is_identity(rng):
    p = Pose(random_rotation(rng), rng.normal(size=3))
    rel = relative_pose_per_pair(p, p)
    assert np.allclose(rel.rotation, np.eye(3), atol=1e-15)
    assert np.allclose(rel.translation, 0.0, atol=1e-15)


def test_relative_pose_from_identity_is_second_pose(rng):
    p2 = Pose(random_rotation(rng), rng.normal(size=3))
    rel = relative_pose_per_pair(Pose.identity(), p2)
    assert np.array_equal(rel.rotation, p2.rotation)
    assert np.array_equal(rel.translation, p2.translation)


def test_relative_pose_round_trip(rng):
    for _ in range(100):
        p1 = Pose(random_rotation(rng), rng.normal(size=3))
        p2 = Pose(random_rotation(rng), rng.normal(size=3))
        back = relative_pose_per_pair(p1, p2).compose(p1)
        assert np.max(np.abs(back.rotation - p2.rotation)) < 1e-12
        assert np.max(np.abs(back.translation - p2.translation)) < 1e-12


def test_noise_free_rig_recovered(generated):
    data, truth = generated("stereo_table1")
    res = calibrate_stereo(data, K, K)
    assert rotation_error(res.relative_pose, truth.relative_pose) < 1e-7
    assert np.linalg.norm(res.relative_pose.translation - truth.relative_pose.translation) < 1e-7
    R = res.relative_pose.rotation
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_noisy_rig_within_published_bounds(generated):
    data, truth = generated("stereo_table1", 0, 0.5)
    res = calibrate_stereo(data, refine_intrinsics=True)
    assert math.degrees(rotation_error(res.relative_pose, truth.relative_pose)) <= 0.05
    assert np.linalg.norm(res.relative_pose.translation - truth.relative_pose.translation) <= 0.002
    assert res.rms >= 0 and res.rms_cam1 >= 0 and res.rms_cam2 >= 0


def test_identical_streams_give_identity(generated):
    data, _ = generated("stereo_table1", 1, 0.5)
    same = StereoDataset(
        tuple(StereoPair(p.view_id, p.cam1, p.cam1) for p in data.pairs[:8]),
        data.image_size1,
        data.image_size1,
        data.target,
    )
    res = calibrate_stereo(same, K, K)
    assert rotation_error(res.relative_pose, Pose.identity()) < 1e-9
    assert np.linalg.norm(res.relative_pose.translation) < 1e-9


def test_frozen_intrinsics_bit_identical(generated):
    data, _ = generated("stereo_table1", 0, 0.5)
    res = calibrate_stereo(data, K, K, refine_intrinsics=False)
    assert res.K1.params().tobytes() == K.params().tobytes()
    assert res.K2.params().tobytes() == K.params().tobytes()
    assert res.stddev_K1 == {} and res.stddev_K2 == {}


def test_refined_intrinsics_move(generated):
    data, _ = generated("stereo_table1", 0, 0.5)
    res = calibrate_stereo(data, K, K, refine_intrinsics=True)
    assert not np.array_equal(res.K1.params(), K.params())
    assert set(res.stddev_K1) == set(K.model.param_names)


def test_joint_cost_zero_at_truth(generated):
    data, truth = generated("stereo_table1")
    rel = truth.relative_pose
    cost = 0.0
    for pair, pose in zip(data.pairs, truth.poses):
        res = StereoPairResidual(K.model, K.model, pair.cam1.pixels, pair.cam1.points, pair.cam2.pixels, pair.cam2.points)
        r = res(K.params(), K.params(), pose.rotvec, pose.translation, rel.rotvec, rel.translation)
        cost += 0.5 * float(r @ r)
    assert cost < 1e-12


def test_wrong_absolute_pose_does_not_spoil_result(generated, monkeypatch):
    data, _ = generated("stereo_table1", 3, 0.5)
    data = subset(data, 7)
    clean = calibrate_stereo(data, K, K)

    bad_view = data.pairs[2].cam2
    outlier = rotation_about([0.0, 0.0, 1.0], math.pi / 2)
    magnitude = math.pi / 2
    original = stereo_mod.pinhole_pose
    shift = []

    def corrupted(Kc, view):
        pose = original(Kc, view)
        if view is not bad_view:
            return pose
        shift.append(np.linalg.norm(outlier @ pose.translation - pose.translation))
        return Pose(outlier @ pose.rotation, outlier @ pose.translation)

    monkeypatch.setattr(stereo_mod, "pinhole_pose", corrupted)
    hit = calibrate_stereo(data, K, K)
    assert rotation_error(hit.initial_relative_pose, clean.initial_relative_pose) < magnitude
    assert rotation_error(hit.relative_pose, clean.relative_pose) < 1e-3 * magnitude
    assert np.linalg.norm(hit.relative_pose.translation - clean.relative_pose.translation) < 1e-3 * shift[0]


def unreachable(view: View) -> View:
    # beyond the largest radius the distortion model can produce, so undistortion fails
    return View(view.view_id, view.pixels + [2500.0, 0.0], view.points)


def test_failed_pair_is_dropped(generated, caplog):
    data, _ = generated("stereo_table1", 0, 0.5)
    data = subset(data, 4)
    broken = data.pairs[1]
    pairs = list(data.pairs)
    pairs[1] = StereoPair(broken.view_id, broken.cam1, unreachable(broken.cam2))
    res = calibrate_stereo(StereoDataset(tuple(pairs), data.image_size1, data.image_size2, data.target), K, K)
    assert res.dropped_pairs == (broken.view_id,)
    assert broken.view_id not in res.pair_ids
    assert "dropping pair" in caplog.text


def test_insufficient_pairs(generated):
    data, _ = generated("stereo_table1", 0, 0.5)
    a, b = data.pairs[:2]
    pairs = (a, StereoPair(b.view_id, b.cam1, unreachable(b.cam2)))
    with pytest.raises(InsufficientPairs):
        calibrate_stereo(StereoDataset(pairs, data.image_size1, data.image_size2, data.target), K, K)


def test_stereo_report_sections(generated):
    data, _ = generated("stereo_table1", 0, 0.5)
    res = calibrate_stereo(data, K, K)
    rep = stereo_report(res, data)
    assert rep.stereo.relative_pose is res.relative_pose
    assert rep.view_ids == res.pair_ids
    assert rep.coverage.total == sum(len(p.cam1) for p in data.pairs)
    assert rep.stereo.coverage2.total == sum(len(p.cam2) for p in data.pairs)
    assert rep.metadata["command"] == "calibrate-stereo"

