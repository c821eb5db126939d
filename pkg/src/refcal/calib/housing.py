"""Flat and dome port estimation with fixed intrinsics.

The objective is the virtual camera error: every observed pixel is traced
through the housing into the water and compared against its target point in
a pinhole camera built on that ray, so no refractive forward projection is
needed inside the solver. Glass thickness, refractive indices and the dome
radius are constants of the setup and never optimized.

Under pixel noise the virtual camera error carries a bias that grows with
the noise variance, because noisy pixels pass through the nonlinear
refraction before the residual is formed. Its minimizer is therefore
polished by a second solve on the refractive reprojection error
(observed minus refractively projected pixel), which is linear in the
pixel noise. The polish can be switched off.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from refcal.calib.camera import evaluate_reprojection, pinhole_pose, pose_blocks, pose_from_result
from refcal.calib.coverage import coverage
from refcal.calib.dataset import ObservationDataset
from refcal.calib.report import CalibrationReport, HousingSection
from refcal.calib.residuals import _skew_rows, virtual_camera_residuals
from refcal.errors import DegenerateGeometry, NumericalError
from refcal.geometry.camera import CameraIntrinsics, Pose, project_normalized
from refcal.geometry.housing import (
    DomePort,
    FlatPort,
    Housing,
    _dome_newton,
    backproject_housing,
    backproject_rays,
    flat_air_directions,
)
from refcal.geometry.rotation import exp_so3
from refcal.solver.lm import LeastSquaresProblem, LMConfig, Manifold, ParameterBlock, _plus_jacobian, solve_lm

logger = logging.getLogger(__name__)

# Target planes within this angle of the interface plane in every view leave
# the interface tilt unobservable.
DEGENERATE_TILT_DEG = 1.0
DOME_CANDIDATE_OFFSETS = (0.002, 0.005, 0.01)
CANDIDATE_POSE_ITERATIONS = 2


@dataclass(frozen=True)
class HousingEstimationConfig:
    """Initial guess (which also carries the fixed constants) and solver options."""

    initial: Housing
    optimize_poses: bool = True
    refine_reprojection: bool = True
    lm: LMConfig | None = None

    def __post_init__(self):
        if not isinstance(self.initial, (FlatPort, DomePort)):
            raise TypeError("initial guess must be a FlatPort or DomePort")


def _unchecked(cls, **values):
    """Build a housing without validation; solver probes may leave the feasible set."""
    obj = object.__new__(cls)
    for f in fields(cls):
        object.__setattr__(obj, f.name, values[f.name])
    return obj


def _flat_factory(template: FlatPort):
    def make(normal, distance):
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        return _unchecked(
            FlatPort,
            normal=tuple(float(v) for v in n),
            distance=float(distance[0]),
            thickness=template.thickness,
            mu_a=template.mu_a,
            mu_g=template.mu_g,
            mu_w=template.mu_w,
        )

    return make


def _dome_factory(template: DomePort):
    def make(decentering):
        return _unchecked(
            DomePort,
            decentering=tuple(float(v) for v in decentering),
            radius=template.radius,
            thickness=template.thickness,
            mu_a=template.mu_a,
            mu_g=template.mu_g,
            mu_w=template.mu_w,
        )

    return make


def virtual_camera_residual(K: CameraIntrinsics, pose: Pose, housing: Housing | None, X, x_obs) -> np.ndarray:
    """Virtual camera error of one observation, in pixels.

    Raises the back-projection errors (total internal reflection, missed
    interface) when ``x_obs`` cannot be traced into the water.
    """
    ray = backproject_housing(K, housing, np.asarray(x_obs, dtype=float))
    rays = (ray.origin[None], ray.direction[None], np.ones(1, dtype=bool))
    Xc = pose.apply(np.asarray(X, dtype=float))[None]
    return virtual_camera_residuals(K, housing, Xc, None, rays)[0]


class VirtualCameraView:
    """Residuals of one view; blocks are rotation, translation, then housing blocks.

    Traced rays depend only on the housing, so they are cached on its
    parameter values and pose-only evaluations skip the tracing. Pose
    Jacobians are analytic; housing Jacobians are left to finite differences.
    """

    def __init__(self, K: CameraIntrinsics, make_housing, pixels: np.ndarray, points: np.ndarray):
        self.K = K
        self.make_housing = make_housing
        self.pixels = pixels
        self.points = points
        self._key = None
        self._rays = None

    def rays(self, housing_values):
        key = b"".join(np.asarray(v, dtype=float).tobytes() for v in housing_values)
        if key != self._key:
            self._rays = backproject_rays(self.K, self.make_housing(*housing_values), self.pixels)
            self._key = key
        return self._rays

    def __call__(self, rotvec, t, *housing_values):
        rays = self.rays(housing_values)
        Xc = self.points @ exp_so3(rotvec).T + t
        return virtual_camera_residuals(self.K, None, Xc, self.pixels, rays).ravel()

    def jacobian(self, rotvec, t, *housing_values):
        o, d, valid = self.rays(housing_values)
        RX = self.points @ exp_so3(rotvec).T
        center = o - np.sum(o * d, axis=-1, keepdims=True) * d
        v = RX + t - center
        valid = valid & (v[:, 2] > 0) & (d[:, 2] > 0)
        vz = np.where(valid, v[:, 2], 1.0)
        n = len(v)
        dv = np.zeros((n, 2, 3))
        dv[:, 0, 0] = 1.0 / vz
        dv[:, 1, 1] = 1.0 / vz
        dv[:, 0, 2] = -v[:, 0] / vz**2
        dv[:, 1, 2] = -v[:, 1] / vz**2
        dv *= -np.array([self.K.fx, self.K.fy])[None, :, None]
        d_rot = np.einsum("nij,njk->nik", dv, -_skew_rows(RX))
        out = [d_rot, dv]
        for J in out:
            J[~valid] = 0.0
        return [J.reshape(-1, 3) for J in out] + [None] * len(housing_values)


def _ray_mismatch(K, housing, Xc, x):
    """Unit direction from the traced ray's origin to ``Xc`` minus the ray direction."""
    o, w, valid = backproject_rays(K, housing, x)
    L = Xc - o
    u = L / np.linalg.norm(L, axis=-1, keepdims=True)
    return u - w, o, valid


class RefractiveView:
    """Pixel residuals ``observed - projected`` through the housing for one view.

    Dome projections are warm-started at the observed pixels. Points that
    cannot be projected contribute zero. The Jacobian follows from the
    implicit function theorem applied to the ray mismatch that vanishes at
    the projected pixel, so it needs a single projection.
    """

    def __init__(self, K: CameraIntrinsics, make_housing, pixels: np.ndarray, points: np.ndarray, manifolds=()):
        self.K = K
        self.make_housing = make_housing
        self.pixels = pixels
        self.points = points
        self.manifolds = tuple(manifolds)

    def _project(self, housing, Xc):
        if isinstance(housing, FlatPort):
            d, ok = flat_air_directions(housing, Xc)
            ok &= Xc @ housing.n > housing.distance + housing.thickness
            with np.errstate(divide="ignore", invalid="ignore"):
                pix = project_normalized(self.K, d[:, :2] / d[:, 2:3])
        else:
            pix, err = _dome_newton(self.K, housing, Xc, self.pixels.copy())
            ok = err <= 1e-12
        return pix, ok & np.all(np.isfinite(pix), axis=-1)

    def __call__(self, rotvec, t, *housing_values):
        housing = self.make_housing(*housing_values)
        Xc = self.points @ exp_so3(rotvec).T + t
        pix, ok = self._project(housing, Xc)
        r = self.pixels - pix
        r[~ok] = 0.0
        return r.ravel()

    def jacobian(self, rotvec, t, *housing_values, h_pix: float = 1e-3):
        housing = self.make_housing(*housing_values)
        RX = self.points @ exp_so3(rotvec).T
        Xc = RX + t
        pix, ok = self._project(housing, Xc)
        x = np.where(ok[:, None], pix, self.pixels)
        n = len(x)
        Fx = np.empty((n, 3, 2))
        for k in range(2):
            dx = np.zeros(2)
            dx[k] = h_pix
            Fx[..., k] = (
                _ray_mismatch(self.K, housing, Xc, x + dx)[0] - _ray_mismatch(self.K, housing, Xc, x - dx)[0]
            ) / (2 * h_pix)
        _, o, valid = _ray_mismatch(self.K, housing, Xc, x)
        ok &= valid
        L = Xc - o
        nL = np.linalg.norm(L, axis=-1)
        u = L / nL[:, None]
        dU = (np.eye(3)[None] - u[:, :, None] * u[:, None, :]) / nL[:, None, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            G = np.linalg.pinv(Fx)  # (n, 2, 3): dx = -G dF
        G[~ok] = 0.0
        dr_dX = np.einsum("nij,njk->nik", G, dU)
        out = [np.einsum("nij,njk->nik", dr_dX, -_skew_rows(RX)), dr_dX]
        for k, values in enumerate(housing_values):
            values = np.asarray(values, dtype=float)
            steps = np.maximum(1e-8, 1e-8 * np.abs(values))
            dF = np.empty((n, 3, len(values)))
            for j in range(len(values)):
                hv = list(housing_values)
                e = np.zeros(len(values))
                e[j] = steps[j]
                hv[k] = values + e
                fp = _ray_mismatch(self.K, self.make_housing(*hv), Xc, x)[0]
                hv[k] = values - e
                fm = _ray_mismatch(self.K, self.make_housing(*hv), Xc, x)[0]
                dF[..., j] = (fp - fm) / (2 * steps[j])
            P = _plus_jacobian(ParameterBlock(values, manifold=self.manifolds[k]), values)
            out.append(np.einsum("nij,njk->nik", G, dF) @ P)
        for J in out:
            J[~ok] = 0.0
        return [J.reshape(2 * n, -1) for J in out]


def _initial_poses(data: ObservationDataset, K: CameraIntrinsics) -> list[Pose]:
    return [pinhole_pose(K, v) for v in data.views]


def _check_flat_geometry(poses, normal: np.ndarray) -> None:
    cos_lim = math.cos(math.radians(DEGENERATE_TILT_DEG))
    if all(abs(p.rotation[:, 2] @ normal) >= cos_lim for p in poses):
        raise DegenerateGeometry(
            f"every target plane is within {DEGENERATE_TILT_DEG} deg of the interface plane; the port tilt is unobservable"
        )


def virtual_cost(data, K, housing, poses) -> float:
    """Half the summed squared virtual camera errors; untraceable rays cost 1e6 each."""
    total = 0.0
    for view, pose in zip(data.views, poses):
        rays = backproject_rays(K, housing, view.pixels)
        r = virtual_camera_residuals(K, housing, pose.apply(view.points), view.pixels, rays)
        total += float(np.sum(r**2)) + 1e6 * float(np.sum(~rays[2]))
    return 0.5 * total


def _solve_stage(data, K, cfg, housing_blocks, make_housing, poses0, refractive: bool):
    problem = LeastSquaresProblem()
    pblocks = []
    for view, pose in zip(data.views, poses0):
        rot, trans = pose_blocks(pose, constant=not cfg.optimize_poses, name=f"{view.view_id}/")
        pblocks.append((rot, trans))
        if refractive:
            res = RefractiveView(K, make_housing, view.pixels, view.points, [b.manifold for b in housing_blocks])
            problem.add(res, [rot, trans, *housing_blocks], res.jacobian)
        else:
            res = VirtualCameraView(K, make_housing, view.pixels, view.points)
            problem.add(res, [rot, trans, *housing_blocks], res.jacobian)
    result = solve_lm(problem, cfg.lm)
    poses = [pose_from_result(result, r, t) for r, t in pblocks]
    return result, poses


def _solve(data, K, cfg, housing_blocks, make_housing, poses0, check=None):
    """Virtual camera solve, then the optional refractive polish.

    ``check(result, poses)`` runs on the virtual camera solution before the
    polish. Returns the final result, the final poses and the virtual camera
    result.
    """
    virtual, poses = _solve_stage(data, K, cfg, housing_blocks, make_housing, poses0, refractive=False)
    if check is not None:
        check(virtual, poses)
    if not cfg.refine_reprojection:
        return virtual, poses, virtual
    for block in housing_blocks:
        block.values = virtual[block].copy()
    result, poses = _solve_stage(data, K, cfg, housing_blocks, make_housing, poses, refractive=True)
    return result, poses, virtual


def _angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    return math.degrees(math.atan2(np.linalg.norm(np.cross(a, b)), float(np.dot(a, b))))


def _report(data, K, housing, initial, poses, virtual, stddev, metrics, reference, command, grid_size, result):
    stats = evaluate_reprojection(data, K, poses, housing)
    section = HousingSection(
        port="flat" if isinstance(housing, FlatPort) else "dome",
        estimate=housing,
        initial=initial,
        stddev=stddev,
        virtual_rms=float(np.sqrt(2.0 * virtual.final_cost / virtual.n_residuals)),
        metrics=metrics,
        reference=reference,
    )
    return CalibrationReport(
        intrinsics=K,
        view_ids=data.view_ids,
        poses=tuple(poses),
        rms=stats.rms,
        per_view_rms=stats.per_view_rms,
        stddev={},
        image_size=data.image_size,
        coverage=coverage(data, grid_size),
        housing=section,
        metadata={
            "command": command,
            "termination": result.termination,
            "iterations": result.iterations + (virtual.iterations if virtual is not result else 0),
            "refined_reprojection": virtual is not result,
        },
    )


def calibrate_flat_port(
    data: ObservationDataset,
    K: CameraIntrinsics,
    cfg: HousingEstimationConfig,
    reference: FlatPort | None = None,
    grid_size: int = 10,
) -> CalibrationReport:
    """Estimate the interface normal and distance of a flat port.

    Poses start from pinhole PnP on the refracted observations; the normal
    lives on the unit sphere (two degrees of freedom) and the distance is
    kept non-negative.

    Raises:
        DegenerateGeometry: every target plane is nearly parallel to the interface.
    """
    init = cfg.initial
    if not isinstance(init, FlatPort):
        raise TypeError("flat port calibration needs a FlatPort initial guess")
    data.validate()
    poses0 = _initial_poses(data, K)

    normal = ParameterBlock(init.n, manifold=Manifold.UNIT_VECTOR, name="normal")
    distance = ParameterBlock([init.distance], name="distance", projection=lambda v: np.maximum(v, 0.0))
    # Refraction bends pinhole PnP poses by several degrees, so the check uses
    # the virtual camera poses and normal.
    check = lambda res, poses: _check_flat_geometry(poses, res[normal] / np.linalg.norm(res[normal]))
    result, poses, virtual = _solve(data, K, cfg, [normal, distance], _flat_factory(init), poses0, check)

    n = result[normal]
    n = n / np.linalg.norm(n)
    if n[2] < 0:
        n = -n
    estimate = FlatPort(tuple(n), float(result[distance][0]), init.thickness, init.mu_a, init.mu_g, init.mu_w)
    nstd, dstd = result.stddev(normal), result.stddev(distance)
    stddev = {"n_x": float(nstd[0]), "n_y": float(nstd[1]), "n_z": float(nstd[2]), "distance": float(dstd[0])}
    metrics = {"normal_change_deg": _angle_deg(estimate.n, init.n)}
    if reference is not None:
        metrics["epsilon_deg"] = _angle_deg(estimate.n, reference.n)
        metrics["E_r"] = abs(estimate.distance - reference.distance)
    return _report(data, K, estimate, init, poses, virtual, stddev, metrics, reference, "calibrate-housing", grid_size, result)


def dome_candidates(guess=None) -> list[np.ndarray]:
    """Zero, axis-aligned offsets of 2, 5 and 10 mm, and the optional user guess."""
    out = [np.zeros(3)]
    for axis, sign, mag in itertools.product(range(3), (1.0, -1.0), DOME_CANDIDATE_OFFSETS):
        c = np.zeros(3)
        c[axis] = sign * mag
        out.append(c)
    if guess is not None:
        out.append(np.asarray(guess, dtype=float))
    return out


def init_dome_decentering(
    data: ObservationDataset,
    K: CameraIntrinsics,
    cfg: HousingEstimationConfig,
    poses: list[Pose] | None = None,
) -> np.ndarray:
    """Candidate decentering with the lowest virtual camera cost.

    Each candidate is scored after a short pose-only refinement; PnP poses
    on their own absorb much of the decentering and favour zero. Candidates
    outside the inner dome surface are skipped; the zero vector is always
    feasible, so a candidate is always returned.
    """
    init = cfg.initial
    poses = poses if poses is not None else _initial_poses(data, K)
    make = _dome_factory(init)
    score_cfg = replace(cfg, optimize_poses=True, lm=LMConfig(max_iter=CANDIDATE_POSE_ITERATIONS))
    best, best_cost = np.zeros(3), math.inf
    for c in dome_candidates(init.decentering):
        if np.linalg.norm(c) >= init.radius - init.thickness:
            continue
        block = ParameterBlock(c, name="decentering")
        block.set_constant()
        try:
            result, _ = _solve_stage(data, K, score_cfg, [block], make, poses, refractive=False)
        except NumericalError as exc:
            logger.debug("decentering candidate %s skipped: %s", c, exc)
            continue
        logger.debug("decentering candidate %s: cost %.6g", c, result.final_cost)
        if result.final_cost < best_cost:
            best, best_cost = c, result.final_cost
    return best


def _ball_projection(limit: float):
    def project(c):
        norm = np.linalg.norm(c)
        return c if norm < limit else c * (limit / norm)

    return project


def calibrate_dome_port(
    data: ObservationDataset,
    K: CameraIntrinsics,
    cfg: HousingEstimationConfig,
    reference: DomePort | None = None,
    grid_size: int = 10,
) -> CalibrationReport:
    """Estimate the decentering of a dome port (radius and thickness fixed)."""
    init = cfg.initial
    if not isinstance(init, DomePort):
        raise TypeError("dome port calibration needs a DomePort initial guess")
    data.validate()
    poses0 = _initial_poses(data, K)
    c0 = init_dome_decentering(data, K, cfg, poses0)
    logger.info("dome decentering init: %s", c0)

    limit = (init.radius - init.thickness) * (1.0 - 1e-9)
    dec = ParameterBlock(c0, name="decentering", projection=_ball_projection(limit))
    result, poses, virtual = _solve(data, K, cfg, [dec], _dome_factory(init), poses0)

    c = result[dec]
    estimate = DomePort(tuple(c), init.radius, init.thickness, init.mu_a, init.mu_g, init.mu_w)
    std = result.stddev(dec)
    stddev = {"c_x": float(std[0]), "c_y": float(std[1]), "c_z": float(std[2])}
    metrics = {"decentering_change": float(np.linalg.norm(c - init.c))}
    if reference is not None:
        metrics["E_c"] = float(np.linalg.norm(c - reference.c))
    return _report(data, K, estimate, init, poses, virtual, stddev, metrics, reference, "calibrate-housing", grid_size, result)


def calibrate_housing(data, K, cfg, reference=None, grid_size: int = 10) -> CalibrationReport:
    if isinstance(cfg.initial, FlatPort):
        return calibrate_flat_port(data, K, cfg, reference, grid_size)
    return calibrate_dome_port(data, K, cfg, reference, grid_size)
