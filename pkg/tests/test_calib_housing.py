import math
from dataclasses import replace

import numpy as np
import pytest

from refcal.calib.camera import evaluate_reprojection
from refcal.calib.dataset import ObservationDataset, Target, View
from refcal.calib.housing import (
    HousingEstimationConfig,
    calibrate_dome_port,
    calibrate_flat_port,
    calibrate_housing,
    init_dome_decentering,
    virtual_camera_residual,
    virtual_cost,
)
from refcal.errors import DegenerateGeometry
from refcal.geometry.camera import CameraIntrinsics, CameraModel, Pose, project_pinhole
from refcal.geometry.housing import DomePort, FlatPort, backproject_housing, project_flat
from refcal.geometry.rotation import rotation_about
from refcal.synthetic import generate_dataset, preset

K = CameraIntrinsics(CameraModel.PINHOLE, 1297.3655, 1297.3655, 960.0, 540.0)
FLAT_INIT = FlatPort((0, 0, 1), 0.04, 0.014)
DOME_INIT = DomePort((0, 0, 0), 0.05, 0.006)


def angle_deg(a, b):
    return math.degrees(math.atan2(np.linalg.norm(np.cross(a, b)), a @ b))


def scenario(name, housing=None, seed=0, sigma=0.0):
    spec = preset(name, seed=seed, noise_sigma=sigma)
    return generate_dataset(spec if housing is None else replace(spec, housing=housing))


# --- virtual camera residual --------------------------------------------------------


@pytest.mark.parametrize("housing", [FlatPort((0.087, 0, 0.996), 0.02, 0.014), DomePort((0.01, 0.006, 0.002), 0.05, 0.006)])
def test_residual_zero_on_ray(housing, rng):
    for _ in range(20):
        x = np.array([rng.uniform(100, 1800), rng.uniform(100, 1000)])
        ray = backproject_housing(K, housing, x)
        X = ray.origin + rng.uniform(0.3, 3.0) * ray.direction
        assert np.abs(virtual_camera_residual(K, Pose.identity(), housing, X, x)).max() < 1e-9


@pytest.mark.parametrize("housing", [FlatPort((0.087, 0, 0.996), 0.02, 0.014, 1.3, 1.3, 1.3), DomePort((0.01, 0, 0), 0.05, 0.006, 1.4, 1.4, 1.4)])
def test_residual_equals_pinhole_without_index_change(housing, rng):
    pose = Pose(rotation_about([1, 1, 0], 0.2), np.array([0.05, -0.02, 0.8]))
    for _ in range(20):
        X = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 0.0])
        x = project_pinhole(K, pose, X) + rng.normal(0, 2.0, 2)
        expected = x - project_pinhole(K, pose, X)
        assert virtual_camera_residual(K, pose, housing, X, x) == pytest.approx(expected, abs=1e-9)


def test_residual_first_order_sensitivity():
    housing = DomePort((0.01, 0.006, 0.002), 0.05, 0.006)
    x = np.array([1100.0, 600.0])
    ray = backproject_housing(K, housing, x)
    Z = 1.5
    X = ray.origin + Z * ray.direction
    perp = np.cross(ray.direction, [0, 1.0, 0])
    perp /= np.linalg.norm(perp)
    center = ray.origin - (ray.origin @ ray.direction) * ray.direction
    depth = np.linalg.norm(X - center)
    delta = 1e-5
    r = virtual_camera_residual(K, Pose.identity(), housing, X + delta * perp, x)
    # projected onto the image plane the offset shrinks by the obliquity of the ray
    expected = K.fx * delta / depth
    assert np.linalg.norm(r) == pytest.approx(expected, rel=0.05)


@pytest.mark.parametrize("name", ["flat_table1", "dome_table1"])
def testvirtual_cost_zero_at_truth(name, generated):
    data, truth = generated(name)
    assert virtual_cost(data, K, truth.spec.housing, truth.poses) < 1e-12


# --- flat port --------------------------------------------------------------------------


def test_flat_noise_free(generated):
    data, truth = generated("flat_table1")
    rep = calibrate_flat_port(data, K, HousingEstimationConfig(FLAT_INIT), truth.spec.housing)
    est = rep.housing.estimate
    assert angle_deg(est.n, truth.spec.housing.n) < 0.05
    assert abs(est.distance - 0.02) < 1e-4
    assert rep.housing.metrics["epsilon_deg"] < 1e-6
    assert rep.housing.metrics["E_r"] < 1e-7
    assert rep.rms < 1e-6


def test_flat_normal_exactly_unit(generated):
    data, _ = generated("flat_table1", 1, 0.5)
    est = calibrate_flat_port(data, K, HousingEstimationConfig(FLAT_INIT)).housing.estimate
    assert np.linalg.norm(est.n) == pytest.approx(1.0, abs=2e-16)
    assert est.n.tobytes() == np.asarray(est.normal).tobytes()


def test_flat_noisy_within_example_bounds(generated):
    data, truth = generated("flat_table1", 0, 0.5)
    rep = calibrate_flat_port(data, K, HousingEstimationConfig(FLAT_INIT), truth.spec.housing)
    assert rep.housing.metrics["epsilon_deg"] <= 0.2
    assert rep.housing.metrics["E_r"] <= 5e-4


def test_flat_aligned_normal():
    data, truth = scenario("flat_table1", FlatPort((0, 0, 1), 0.02, 0.014), seed=5, sigma=0.5)
    est = calibrate_flat_port(data, K, HousingEstimationConfig(FlatPort((0.05, 0.0, 1.0), 0.03, 0.014))).housing.estimate
    assert angle_deg(est.n, [0, 0, 1]) < 0.3


def test_flat_fronto_parallel_views_are_degenerate():
    port = FlatPort((0, 0, 1), 0.02, 0.014)
    grid = preset("flat_table1").target.grid()
    views = []
    for i, (x, y) in enumerate([(0.0, 0.0), (-0.05, 0.02), (0.03, -0.04)]):
        pose = Pose(np.eye(3), np.array([x - 0.13, y - 0.1, 0.4 + 0.05 * i]))
        views.append(View(f"v{i}", project_flat(K, port, pose, grid), grid))
    data = ObservationDataset(tuple(views), (1920, 1080), preset("flat_table1").target)
    with pytest.raises(DegenerateGeometry):
        calibrate_flat_port(data, K, HousingEstimationConfig(FLAT_INIT))


def test_flat_report_contents(generated):
    data, truth = generated("flat_table1", 2, 0.5)
    rep = calibrate_housing(data, K, HousingEstimationConfig(FLAT_INIT), truth.spec.housing)
    h = rep.housing
    assert h.port == "flat"
    assert h.constants == {"t_glass": 0.014, "mu_a": 1.0, "mu_g": 1.473, "mu_w": 1.334}
    assert set(h.stddev) == {"n_x", "n_y", "n_z", "distance"}
    assert h.initial == FLAT_INIT
    assert h.reference == truth.spec.housing
    assert rep.metadata["refined_reprojection"] is True
    # the final RMS is the refractive reprojection error
    stats = evaluate_reprojection(data, K, rep.poses, h.estimate)
    assert rep.rms == pytest.approx(stats.rms, rel=1e-9)


def test_flat_without_refinement_runs_virtual_stage_only(generated):
    data, _ = generated("flat_table1", 2, 0.5)
    rep = calibrate_flat_port(data, K, HousingEstimationConfig(FLAT_INIT, refine_reprojection=False))
    assert rep.metadata["refined_reprojection"] is False


def test_wrong_initial_type_rejected(generated):
    data, _ = generated("flat_table1")
    with pytest.raises(TypeError):
        calibrate_flat_port(data, K, HousingEstimationConfig(DOME_INIT))
    with pytest.raises(TypeError):
        calibrate_dome_port(data, K, HousingEstimationConfig(FLAT_INIT))


# --- dome port --------------------------------------------------------------------------


def test_dome_noise_free(generated):
    data, truth = generated("dome_table1")
    rep = calibrate_dome_port(data, K, HousingEstimationConfig(DOME_INIT), truth.spec.housing)
    assert np.linalg.norm(rep.housing.estimate.c - truth.spec.housing.c) < 1e-5
    assert rep.housing.metrics["E_c"] < 1e-5
    assert set(rep.housing.stddev) == {"c_x", "c_y", "c_z"}
    assert rep.housing.constants["r_dome"] == 0.05


def test_dome_init_close_to_truth(generated):
    data, truth = generated("dome_table1", 1, 0.5)
    c0 = init_dome_decentering(data, K, HousingEstimationConfig(DOME_INIT))
    assert np.linalg.norm(c0 - truth.spec.housing.c) <= 0.01


def test_dome_zero_decentering():
    data, _ = scenario("dome_table1", DomePort((0, 0, 0), 0.05, 0.006), seed=2)
    assert np.array_equal(init_dome_decentering(data, K, HousingEstimationConfig(DomePort((0.0, 0.0, 0.003), 0.05, 0.006))), np.zeros(3))
    noisy, _ = scenario("dome_table1", DomePort((0, 0, 0), 0.05, 0.006), seed=2, sigma=0.5)
    est = calibrate_dome_port(noisy, K, HousingEstimationConfig(DOME_INIT)).housing.estimate
    assert np.linalg.norm(est.c) < 0.002


def test_dome_user_guess_selected():
    truth = DomePort((0, 0, 0.04), 0.05, 0.006)
    data, _ = scenario("dome_table1", truth, seed=3)
    guess = DomePort((0, 0, 0.04), 0.05, 0.006)
    c0 = init_dome_decentering(data, K, HousingEstimationConfig(guess))
    assert c0 == pytest.approx([0, 0, 0.04])


def test_estimates_invariant_to_world_frame(generated):
    data, _ = generated("dome_table1", 4, 0.5)
    R = rotation_about([0.3, -1, 0.5], 0.7)
    t = np.array([0.3, -0.2, 1.0])
    moved = ObservationDataset(
        tuple(View(v.view_id, v.pixels, v.points @ R.T + t) for v in data.views), data.image_size, Target("generic3d")
    )
    a = calibrate_dome_port(data, K, HousingEstimationConfig(DOME_INIT)).housing.estimate
    b = calibrate_dome_port(moved, K, HousingEstimationConfig(DOME_INIT)).housing.estimate
    assert np.linalg.norm(a.c - b.c) < 1e-8
