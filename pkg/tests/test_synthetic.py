import math
from dataclasses import replace

import numpy as np
import pytest

from refcal.calib.dataset import ObservationDataset, StereoDataset, Target
from refcal.errors import NumericalError, UnknownPreset, ViewSamplingFailed
from refcal.geometry.housing import DomePort, FlatPort, backproject_housing, project_housing
from refcal.io import load_truth, save_truth
from refcal.synthetic import (
    PRESETS,
    PoseSampler,
    ScenarioSpec,
    generate_dataset,
    preset,
    table1_camera,
    with_noise,
)


def test_air_preset_camera():
    spec = preset("air_table1")
    assert spec.camera.fx == 1297.3655
    assert spec.camera.fy == 1297.3655
    assert (spec.camera.cx, spec.camera.cy) == (960.0, 540.0)
    assert spec.image_size == (1920, 1080)
    assert spec.n_views == 25
    assert spec.housing is None


def test_dome_preset_housing():
    h = preset("dome_table1").housing
    assert isinstance(h, DomePort)
    assert tuple(h.c) == (0.01, 0.006, 0.002)
    assert (h.radius, h.thickness) == (0.05, 0.006)
    assert (h.mu_a, h.mu_g, h.mu_w) == (1.0, 1.473, 1.334)


def test_flat_preset_housing():
    h = preset("flat_table1").housing
    assert isinstance(h, FlatPort)
    tilt = math.degrees(math.atan2(h.n[0], h.n[2]))
    assert tilt == pytest.approx(5.0, abs=1e-12)
    assert h.n[1] == 0.0
    assert (h.distance, h.thickness) == (0.02, 0.014)


def test_stereo_preset_is_flagged():
    spec = preset("stereo_table1")
    assert spec.published_values is False
    assert all(preset(n).published_values for n in PRESETS if n != "stereo_table1")
    rel = spec.stereo.relative_pose
    centre2 = -rel.rotation.T @ rel.translation
    assert np.allclose(centre2, [0.1, 0.0, 0.0], atol=1e-15)


def test_published_flag_reaches_sidecar(tmp_path):
    _, truth = generate_dataset(replace(preset("stereo_table1"), n_views=2))
    save_truth(truth, tmp_path / "truth.yaml")
    assert "published_values: false" in (tmp_path / "truth.yaml").read_text()
    assert load_truth(tmp_path / "truth.yaml").spec.published_values is False


def test_unknown_preset():
    with pytest.raises(UnknownPreset, match="air_table1"):
        preset("underwater_table9")


@pytest.mark.parametrize(
    "change, message",
    [
        (dict(n_views=0), "n_views"),
        (dict(noise_sigma=-0.1), "sigma"),
        (dict(target=Target("checkerboard", 3, 3, 0.0)), "spacing"),
        (dict(seed=None), "seed"),
    ],
)
def test_spec_invariants(change, message):
    with pytest.raises(ValueError, match=message):
        replace(preset("air_table1"), **change)


@pytest.mark.parametrize("name", PRESETS)
def test_deterministic(name):
    spec = replace(preset(name, seed=11), n_views=3)
    a, ta = generate_dataset(spec)
    b, tb = generate_dataset(spec)
    assert a == b
    assert all(np.array_equal(p.rotation, q.rotation) for p, q in zip(ta.poses, tb.poses))


def test_dataset_types(generated):
    assert isinstance(generated("air_table1")[0], ObservationDataset)
    assert isinstance(generated("stereo_table1")[0], StereoDataset)
    data, _ = generated("flat_table1")
    assert data.housing == {"port": "flat", "constants": preset("flat_table1").housing.constants}


def test_seeds_differ():
    a, _ = generate_dataset(replace(preset("air_table1", seed=1), n_views=2))
    b, _ = generate_dataset(replace(preset("air_table1", seed=2), n_views=2))
    assert a != b


def test_noise_statistics():
    spec = replace(preset("air_table1", seed=5, noise_sigma=0.0), n_views=40)
    clean, _ = generate_dataset(spec)
    noisy, _ = generate_dataset(with_noise(spec, 0.5))
    d = noisy.all_pixels() - clean.all_pixels()
    assert d.size >= 10_000
    assert abs(d.std() - 0.5) < 0.05 * 0.5
    assert abs(d[:, 0].std() - 0.5) < 0.05 * 0.5
    assert abs(d[:, 1].std() - 0.5) < 0.05 * 0.5


@pytest.mark.parametrize("name", ["air_table1", "flat_table1", "dome_table1"])
def test_observations_back_project_through_points(generated, name):
    data, truth = generated(name)
    worst = 0.0
    for view, pose in zip(data.views, truth.poses):
        ray = backproject_housing(truth.spec.camera, truth.spec.housing, view.pixels)
        Xc = pose.apply(view.points)
        v = Xc - ray.origin
        dist = np.linalg.norm(v - np.sum(v * ray.direction, axis=1)[:, None] * ray.direction, axis=1)
        worst = max(worst, float(dist.max()))
    assert worst <= 1e-8


def test_all_observations_in_image(generated):
    for name in PRESETS:
        data, _ = generated(name)
        pix = data.all_pixels() if isinstance(data, ObservationDataset) else data.camera_dataset(2).all_pixels()
        assert pix[:, 0].min() >= 5 and pix[:, 0].max() <= 1915
        assert pix[:, 1].min() >= 5 and pix[:, 1].max() <= 1075


def sequential_poses(spec: ScenarioSpec):
    """Plain rejection loop, one pose at a time, on the same RNG substreams."""
    points = spec.target.grid()
    center = points.mean(axis=0)
    w, h = spec.image_size
    m = spec.sampler.margin_px
    poses = []
    for ss in np.random.SeedSequence(spec.seed).spawn(spec.n_views):
        rng = np.random.default_rng(ss.spawn(2)[0])
        for _ in range(1000):
            pose = spec.sampler.sample(rng, center)
            try:
                pix = project_housing(spec.camera, spec.housing, pose, points)
            except NumericalError:
                continue
            if np.all((pix[:, 0] >= m) & (pix[:, 0] <= w - m) & (pix[:, 1] >= m) & (pix[:, 1] <= h - m)):
                poses.append(pose)
                break
    return poses


@pytest.mark.parametrize("name", ["air_table1", "flat_table1", "dome_table1"])
def test_batched_sampling_matches_sequential(name):
    spec = replace(preset(name, seed=3), n_views=6)
    _, truth = generate_dataset(spec)
    expected = sequential_poses(spec)
    assert len(expected) == len(truth.poses)
    for a, b in zip(truth.poses, expected):
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)


def test_noise_does_not_move_poses():
    spec = replace(preset("dome_table1", seed=4), n_views=3)
    _, a = generate_dataset(with_noise(spec, 0.0))
    _, b = generate_dataset(with_noise(spec, 2.0))
    assert all(np.array_equal(p.translation, q.translation) for p, q in zip(a.poses, b.poses))


def test_view_sampling_failure():
    spec = ScenarioSpec(
        "huge",
        table1_camera(),
        (1920, 1080),
        Target("checkerboard", 11, 14, 1.0),
        n_views=1,
        seed=0,
        sampler=PoseSampler(distance_range=(0.25, 0.3)),
    )
    with pytest.raises(ViewSamplingFailed, match="1000 attempts"):
        generate_dataset(spec)
