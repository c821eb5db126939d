"""Pinhole camera with polynomial lens distortion, poses and rays.

Points and pixels are numpy arrays; every function accepts a single point
(shape ``(2,)`` / ``(3,)``) or a stack of them (``(N, 2)`` / ``(N, 3)``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from refcal.errors import BehindCamera, NonConvergence
from refcal.geometry.rotation import exp_so3, log_so3


class CameraModel(str, enum.Enum):
    """Named intrinsics models (COLMAP-style naming)."""

    PINHOLE = "Pinhole"
    SIMPLE_RADIAL = "SimpleRadial"
    RADIAL = "Radial"
    FULL_OPEN = "FullOpenModel"

    @property
    def n_distortion(self) -> int:
        return _N_DISTORTION[self]

    @property
    def shared_focal(self) -> bool:
        return self is CameraModel.SIMPLE_RADIAL

    @property
    def param_names(self) -> tuple[str, ...]:
        focal = ("f",) if self.shared_focal else ("fx", "fy")
        return focal + ("cx", "cy") + _DISTORTION_NAMES[: self.n_distortion]


_N_DISTORTION = {
    CameraModel.PINHOLE: 0,
    CameraModel.SIMPLE_RADIAL: 1,
    CameraModel.RADIAL: 2,
    CameraModel.FULL_OPEN: 4,
}
_DISTORTION_NAMES = ("k1", "k2", "p1", "p2")


@dataclass(frozen=True)
class CameraIntrinsics:
    """Focal lengths and principal point in pixels, zero skew.

    ``distortion`` holds ``(k1, k2)`` radial and, for
    :attr:`CameraModel.FULL_OPEN`, the tangential ``(p1, p2)`` terms.
    """

    model: CameraModel
    fx: float
    fy: float
    cx: float
    cy: float
    distortion: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "model", CameraModel(self.model))
        object.__setattr__(self, "distortion", tuple(float(k) for k in self.distortion))
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if len(self.distortion) != self.model.n_distortion:
            raise ValueError(
                f"{self.model.value} expects {self.model.n_distortion} distortion "
                f"coefficients, got {len(self.distortion)}"
            )
        if self.model.shared_focal and self.fx != self.fy:
            raise ValueError("SimpleRadial requires fx == fy")

    @classmethod
    def from_params(cls, model: CameraModel, params) -> CameraIntrinsics:
        """Inverse of :meth:`params` (the optimizer's parameter layout)."""
        model = CameraModel(model)
        p = [float(v) for v in params]
        if model.shared_focal:
            fx = fy = p[0]
            rest = p[1:]
        else:
            fx, fy = p[0], p[1]
            rest = p[2:]
        return cls(model, fx, fy, rest[0], rest[1], tuple(rest[2:]))

    def params(self) -> np.ndarray:
        focal = [self.fx] if self.model.shared_focal else [self.fx, self.fy]
        return np.array(focal + [self.cx, self.cy, *self.distortion])

    def without_distortion(self) -> CameraIntrinsics:
        model = CameraModel.PINHOLE
        return CameraIntrinsics(model, self.fx, self.fy, self.cx, self.cy)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def coefficients(self) -> np.ndarray:
        """Distortion padded to ``(k1, k2, p1, p2)``."""
        c = np.zeros(4)
        c[: len(self.distortion)] = self.distortion
        return c


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform mapping world points into the camera frame: ``R @ X + t``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-10, rtol=0) or abs(np.linalg.det(R) - 1.0) > 1e-10:
            raise ValueError("rotation must be orthonormal with det +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)

    __hash__ = None

    def __repr__(self):
        return f"Pose(rotvec={self.rotvec.tolist()}, translation={self.translation.tolist()})"

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec, translation) -> Pose:
        return cls(exp_so3(rotvec), translation)

    @property
    def rotvec(self) -> np.ndarray:
        return log_so3(self.rotation)

    @property
    def center(self) -> np.ndarray:
        """Camera projection center in world coordinates."""
        return -self.rotation.T @ self.translation

    def apply(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> Pose:
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: Pose) -> Pose:
        """``self ∘ other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray


def distort(intrinsics: CameraIntrinsics, p) -> np.ndarray:
    """Map ideal normalized image coordinates to distorted ones."""
    return _distort(intrinsics.coefficients, np.asarray(p, dtype=float))


def _distort(coeffs: np.ndarray, p: np.ndarray) -> np.ndarray:
    k1, k2, p1, p2 = coeffs
    x, y = p[..., 0], p[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + k2 * r2)
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def distortion_jacobian(coeffs: np.ndarray, p: np.ndarray) -> np.ndarray:
    """d(distorted)/d(ideal), shape ``(..., 2, 2)``."""
    k1, k2, p1, p2 = coeffs
    x, y = p[..., 0], p[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + k2 * r2)
    dr = k1 + 2.0 * k2 * r2
    J = np.empty(p.shape[:-1] + (2, 2))
    J[..., 0, 0] = radial + 2.0 * x * x * dr + 2.0 * p1 * y + 6.0 * p2 * x
    J[..., 0, 1] = 2.0 * x * y * dr + 2.0 * p1 * x + 2.0 * p2 * y
    J[..., 1, 0] = 2.0 * x * y * dr + 2.0 * p1 * x + 2.0 * p2 * y
    J[..., 1, 1] = radial + 2.0 * y * y * dr + 6.0 * p1 * y + 2.0 * p2 * x
    return J


def distortion_coeff_jacobian(p: np.ndarray) -> np.ndarray:
    """d(distorted)/d(k1, k2, p1, p2), shape ``(..., 2, 4)``."""
    x, y = p[..., 0], p[..., 1]
    r2 = x * x + y * y
    J = np.empty(p.shape[:-1] + (2, 4))
    J[..., 0, 0] = x * r2
    J[..., 1, 0] = y * r2
    J[..., 0, 1] = x * r2 * r2
    J[..., 1, 1] = y * r2 * r2
    J[..., 0, 2] = 2.0 * x * y
    J[..., 1, 2] = r2 + 2.0 * y * y
    J[..., 0, 3] = r2 + 2.0 * x * x
    J[..., 1, 3] = 2.0 * x * y
    return J


def _undistort(coeffs: np.ndarray, pd: np.ndarray, max_iter: int = 100):
    """Newton inverse of :func:`_distort`; returns ``(points, converged_mask)``."""
    p = pd.copy()
    if not np.any(coeffs):
        return p, np.ones(pd.shape[:-1], dtype=bool)
    best_res = np.full(pd.shape[:-1], np.inf)
    best = p.copy()
    for _ in range(max_iter):
        f = _distort(coeffs, p) - pd
        res = np.max(np.abs(f), axis=-1)
        improved = res < best_res
        best = np.where(improved[..., None], p, best)
        best_res = np.where(improved, res, best_res)
        if np.all(best_res <= 1e-16 * (1.0 + np.max(np.abs(pd), axis=-1))):
            break
        J = distortion_jacobian(coeffs, p)
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            dx = (J[..., 1, 1] * f[..., 0] - J[..., 0, 1] * f[..., 1]) / det
            dy = (J[..., 0, 0] * f[..., 1] - J[..., 1, 0] * f[..., 0]) / det
        step = np.stack([dx, dy], axis=-1)
        step = np.where(np.isfinite(step), step, 0.0)
        if not np.any(step):
            break
        p = p - step
    return best, best_res <= 1e-10


def undistort(intrinsics: CameraIntrinsics, p_distorted) -> np.ndarray:
    """Iterative inverse of :func:`distort` (Newton, at most 100 iterations).

    Raises:
        NonConvergence: if the residual stays above 1e-10 for any point.
    """
    pd = np.asarray(p_distorted, dtype=float)
    p, ok = _undistort(intrinsics.coefficients, pd)
    if not np.all(ok):
        raise NonConvergence("undistortion did not converge; distortion coefficients too extreme?")
    return p


def project_normalized(intrinsics: CameraIntrinsics, xn: np.ndarray) -> np.ndarray:
    """Distort ideal normalized coordinates and convert to pixels."""
    xd = _distort(intrinsics.coefficients, xn)
    return np.stack([intrinsics.fx * xd[..., 0] + intrinsics.cx, intrinsics.fy * xd[..., 1] + intrinsics.cy], axis=-1)


def pixel_to_normalized(intrinsics: CameraIntrinsics, x) -> tuple[np.ndarray, np.ndarray]:
    """Undistorted normalized coordinates of pixels plus a convergence mask."""
    return _undistort(intrinsics.coefficients, pixel_to_normalized_distorted(intrinsics, x))


def project_pinhole(K: CameraIntrinsics, pose: Pose, X) -> np.ndarray:
    """Project world points to pixels.

    Raises:
        BehindCamera: if any point has non-positive depth.
    """
    Xc = pose.apply(X)
    if np.any(Xc[..., 2] <= 0):
        raise BehindCamera("point lies behind the camera")
    return project_normalized(K, Xc[..., :2] / Xc[..., 2:3])


def backproject_pinhole(K: CameraIntrinsics, x) -> Ray:
    """Unit viewing ray (camera frame, origin at the projection center)."""
    xn = undistort(K, pixel_to_normalized_distorted(K, x))
    d = np.concatenate([xn, np.ones(xn.shape[:-1] + (1,))], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return Ray(np.zeros_like(d), d)


def pixel_to_normalized_distorted(K: CameraIntrinsics, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.stack([(x[..., 0] - K.cx) / K.fx, (x[..., 1] - K.cy) / K.fy], axis=-1)
