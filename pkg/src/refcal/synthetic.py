"""Exact synthetic correspondence datasets with known ground truth.

Observations are produced by projecting target corners through the true
camera (and housing) model; detector error is modelled by i.i.d. Gaussian
pixel noise. Each view draws from its own RNG substreams derived from the
seed, one for the pose and one for the noise, so the noise level can be
changed without moving the poses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from refcal.calib.dataset import ObservationDataset, StereoDataset, StereoPair, Target, View
from refcal.errors import NumericalError, UnknownPreset, ViewSamplingFailed
from refcal.geometry.camera import CameraIntrinsics, CameraModel, Pose, project_normalized
from refcal.geometry.housing import DomePort, FlatPort, Housing, _dome_newton, flat_air_directions, project_housing
from refcal.geometry.rotation import exp_so3, rotation_about

MAX_ATTEMPTS = 1000

# In-air camera of the rendered validation sets: 73 deg horizontal field of
# view on 1920x1080, principal point at the image center.
TABLE1_FOCAL = 1297.3655
TABLE1_SIZE = (1920, 1080)
WATER_INDICES = (1.0, 1.473, 1.334)


@dataclass(frozen=True)
class PoseSampler:
    """Target center on a spherical cap in front of the camera.

    The cap half-angle is ``max_offaxis_deg``; the target is tilted by up to
    ``max_tilt_deg`` about a random in-plane axis and spun uniformly about
    its normal.
    """

    distance_range: tuple[float, float] = (0.25, 0.5)
    max_tilt_deg: float = 50.0
    max_offaxis_deg: float = 25.0
    margin_px: float = 5.0

    def sample(self, rng: np.random.Generator, target_center: np.ndarray) -> Pose:
        cos_a = math.cos(math.radians(self.max_offaxis_deg))
        cos_t = rng.uniform(cos_a, 1.0)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        sin_t = math.sqrt(1.0 - cos_t * cos_t)
        direction = np.array([sin_t * math.cos(phi), sin_t * math.sin(phi), cos_t])
        dist = rng.uniform(*self.distance_range)
        spin = rng.uniform(-math.pi, math.pi)
        tilt = math.radians(rng.uniform(0.0, self.max_tilt_deg))
        beta = rng.uniform(0.0, 2.0 * math.pi)
        R = exp_so3(tilt * np.array([math.cos(beta), math.sin(beta), 0.0])) @ exp_so3([0.0, 0.0, spin])
        return Pose(R, dist * direction - R @ target_center)


@dataclass(frozen=True)
class StereoRig:
    """Second camera of a rig; ``relative_pose`` maps camera-1 to camera-2 coordinates."""

    relative_pose: Pose
    camera2: CameraIntrinsics
    image_size2: tuple[int, int]


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    camera: CameraIntrinsics
    image_size: tuple[int, int]
    target: Target
    n_views: int
    seed: int
    noise_sigma: float = 0.0
    housing: Housing | None = None
    sampler: PoseSampler = field(default_factory=PoseSampler)
    stereo: StereoRig | None = None
    published_values: bool = True

    def __post_init__(self):
        if self.n_views < 1:
            raise ValueError("n_views must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if not self.target.spacing > 0:
            raise ValueError("target spacing must be > 0")
        if self.seed is None:
            raise ValueError("a seed is required")


@dataclass(frozen=True)
class GroundTruth:
    """Sidecar of a generated dataset: the scenario and the sampled poses."""

    spec: ScenarioSpec
    poses: tuple[Pose, ...]

    @property
    def relative_pose(self) -> Pose | None:
        return self.spec.stereo.relative_pose if self.spec.stereo else None


def _in_image(pix: np.ndarray, size, margin: float) -> bool:
    w, h = size
    return bool(
        np.all(np.isfinite(pix))
        and np.all(pix[:, 0] >= margin)
        and np.all(pix[:, 0] <= w - margin)
        and np.all(pix[:, 1] >= margin)
        and np.all(pix[:, 1] <= h - margin)
    )


def _project_or_none(K, housing, pose, points):
    try:
        return project_housing(K, housing, pose, points)
    except NumericalError:
        return None


def _outline_may_fit(spec: ScenarioSpec, poses: list[Pose], outline: np.ndarray) -> np.ndarray:
    """Vectorized pre-check of the target outline for a batch of candidate poses.

    False only where the exact per-pose check would also reject; dome points
    whose Newton solve does not converge here are left to the exact check.
    """
    R = np.stack([p.rotation for p in poses])
    t = np.stack([p.translation for p in poses])
    Xc = (np.einsum("bij,kj->bki", R, outline) + t[:, None, :]).reshape(-1, 3)
    K, h = spec.camera, spec.housing
    unknown = np.zeros(len(Xc), dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        if h is None:
            ok = Xc[:, 2] > 0
            pix = project_normalized(K, Xc[:, :2] / Xc[:, 2:3])
        elif isinstance(h, FlatPort):
            d, ok = flat_air_directions(h, Xc)
            ok &= Xc @ h.n > h.distance + h.thickness
            pix = project_normalized(K, d[:, :2] / d[:, 2:3])
        else:
            outside = np.linalg.norm(Xc - h.c, axis=-1) > h.radius
            x0 = project_normalized(K, Xc[:, :2] / Xc[:, 2:3])
            pix, err = _dome_newton(K, h, Xc, x0)
            ok = outside & (err <= 1e-13)
            unknown = outside & ~ok
    w, hgt = spec.image_size
    m = spec.sampler.margin_px
    inside = ok & np.isfinite(pix).all(axis=-1)
    inside &= (pix[:, 0] >= m) & (pix[:, 0] <= w - m) & (pix[:, 1] >= m) & (pix[:, 1] <= hgt - m)
    n = len(outline)
    return (inside | unknown).reshape(-1, n).all(axis=1)


def _sample_view(spec: ScenarioSpec, rng: np.random.Generator, points, outline, center):
    """First sampled pose that keeps the whole target in view (in every camera)."""
    margin = spec.sampler.margin_px
    attempts, size = 0, 4
    while attempts < MAX_ATTEMPTS:
        batch = [spec.sampler.sample(rng, center) for _ in range(min(size, MAX_ATTEMPTS - attempts))]
        attempts += len(batch)
        size = min(2 * size, 128)
        for pose, may_fit in zip(batch, _outline_may_fit(spec, batch, outline)):
            if not may_fit:
                continue
            pix = _project_or_none(spec.camera, spec.housing, pose, points)
            if pix is None or not _in_image(pix, spec.image_size, margin):
                continue
            if spec.stereo is None:
                return pose, pix, None
            pose2 = spec.stereo.relative_pose.compose(pose)
            pix2 = _project_or_none(spec.stereo.camera2, None, pose2, points)
            if pix2 is not None and _in_image(pix2, spec.stereo.image_size2, margin):
                return pose, pix, pix2
    return None


def generate_dataset(spec: ScenarioSpec):
    """Sample poses and project the target; returns ``(dataset, truth)``.

    The dataset is a :class:`StereoDataset` when the scenario has a rig.

    Raises:
        ViewSamplingFailed: if a view cannot be placed fully inside the image
            within 1000 attempts.
    """
    points = spec.target.grid()
    t = spec.target
    outline = points[[0, t.cols - 1, len(points) - t.cols, len(points) - 1]]
    center = points.mean(axis=0)
    streams = np.random.SeedSequence(spec.seed).spawn(spec.n_views)
    views, pairs, poses = [], [], []
    for i, ss in enumerate(streams):
        pose_ss, noise_ss = ss.spawn(2)
        pose_rng = np.random.default_rng(pose_ss)
        noise_rng = np.random.default_rng(noise_ss)
        found = _sample_view(spec, pose_rng, points, outline, center)
        if found is None:
            raise ViewSamplingFailed(f"could not place view {i} inside the image after {MAX_ATTEMPTS} attempts")
        pose, pix, pix2 = found
        poses.append(pose)
        noisy = pix + noise_rng.normal(0.0, spec.noise_sigma, pix.shape) if spec.noise_sigma > 0 else pix
        if spec.stereo is None:
            views.append(View(f"view_{i:03d}", noisy, points))
        else:
            noisy2 = pix2 + noise_rng.normal(0.0, spec.noise_sigma, pix2.shape) if spec.noise_sigma > 0 else pix2
            pairs.append(StereoPair(f"pair_{i:03d}", View(f"pair_{i:03d}", noisy, points), View(f"pair_{i:03d}", noisy2, points)))
    truth = GroundTruth(spec, tuple(poses))
    if spec.stereo is not None:
        return StereoDataset(tuple(pairs), spec.image_size, spec.stereo.image_size2, spec.target), truth
    housing_meta = None
    if spec.housing is not None:
        port = "flat" if isinstance(spec.housing, FlatPort) else "dome"
        housing_meta = {"port": port, "constants": dict(spec.housing.constants)}
    return ObservationDataset(tuple(views), spec.image_size, spec.target, housing_meta), truth


def table1_camera(distorted: bool = True) -> CameraIntrinsics:
    cx, cy = TABLE1_SIZE[0] / 2, TABLE1_SIZE[1] / 2
    if distorted:
        return CameraIntrinsics(CameraModel.RADIAL, TABLE1_FOCAL, TABLE1_FOCAL, cx, cy, (-0.1, -0.02))
    return CameraIntrinsics(CameraModel.PINHOLE, TABLE1_FOCAL, TABLE1_FOCAL, cx, cy)


def table1_dome(decentering=(0.01, 0.006, 0.002)) -> DomePort:
    return DomePort(tuple(decentering), 0.05, 0.006, *WATER_INDICES)


def table1_flat(tilt_deg: float = 5.0) -> FlatPort:
    """Flat port whose normal is (0, 0, 1) rotated about the y axis by ``tilt_deg``."""
    normal = rotation_about([0.0, 1.0, 0.0], math.radians(tilt_deg)) @ np.array([0.0, 0.0, 1.0])
    return FlatPort(tuple(normal), 0.02, 0.014, *WATER_INDICES)


def stereo_rig(baseline: float = 0.1, yaw_deg: float = 2.0) -> StereoRig:
    """Camera 2 sits ``baseline`` m along camera 1's x axis, yawed about y."""
    R12 = rotation_about([0.0, 1.0, 0.0], math.radians(yaw_deg))
    c2 = np.array([baseline, 0.0, 0.0])
    return StereoRig(Pose(R12, -R12 @ c2), table1_camera(), TABLE1_SIZE)


DEFAULT_TARGET = Target("checkerboard", rows=11, cols=14, spacing=0.02)
PRESETS = ("air_table1", "dome_table1", "flat_table1", "stereo_table1")
# Water behind a flat port narrows the field of view by roughly mu_w, so the
# target has to stay closer to the optical axis. Close views make the
# interface distance observable.
FLAT_SAMPLER = PoseSampler(distance_range=(0.25, 0.45), max_tilt_deg=50.0, max_offaxis_deg=12.0)


def preset(name: str, seed: int = 0, noise_sigma: float = 0.5) -> ScenarioSpec:
    """Named scenario reproducing the rendered validation setups (25 views each).

    ``stereo_table1`` uses this package's own rig (0.1 m baseline, 2 deg yaw);
    its spec is flagged ``published_values=False``.

    Raises:
        UnknownPreset: for names outside :data:`PRESETS`.
    """
    common = dict(image_size=TABLE1_SIZE, target=DEFAULT_TARGET, n_views=25, seed=seed, noise_sigma=noise_sigma)
    if name == "air_table1":
        return ScenarioSpec(name, table1_camera(), **common)
    if name == "dome_table1":
        return ScenarioSpec(name, table1_camera(distorted=False), housing=table1_dome(), **common)
    if name == "flat_table1":
        return ScenarioSpec(name, table1_camera(distorted=False), housing=table1_flat(), sampler=FLAT_SAMPLER, **common)
    if name == "stereo_table1":
        return ScenarioSpec(name, table1_camera(), stereo=stereo_rig(), published_values=False, **common)
    raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def with_noise(spec: ScenarioSpec, sigma: float) -> ScenarioSpec:
    return replace(spec, noise_sigma=sigma)
