"""Residual families used by the calibration problems.

Pose blocks are a rotation vector (left-multiplicative tangent update) plus a
Euclidean translation. The pinhole and stereo families carry analytic
Jacobians.
"""

from __future__ import annotations

import numpy as np

from refcal.geometry.camera import (
    CameraIntrinsics,
    CameraModel,
    _distort,
    distortion_coeff_jacobian,
    distortion_jacobian,
)
from refcal.geometry.housing import Housing, backproject_rays
from refcal.geometry.rotation import exp_so3


def _skew_rows(v: np.ndarray) -> np.ndarray:
    """Stack of hat(v_i), shape (N, 3, 3)."""
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1], S[..., 0, 2] = -v[..., 2], v[..., 1]
    S[..., 1, 0], S[..., 1, 2] = v[..., 2], -v[..., 0]
    S[..., 2, 0], S[..., 2, 1] = -v[..., 1], v[..., 0]
    return S


def project_with_jacobians(model: CameraModel, kparams: np.ndarray, Xc: np.ndarray, want_jac: bool = True):
    """Pixel projection of camera-frame points and its derivatives.

    Returns ``(pixels, valid, dpix_dXc (N,2,3), dpix_dk (N,2,n_k))``; points
    with non-positive depth are marked invalid.
    """
    K = CameraIntrinsics.from_params(model, kparams)
    coeffs = K.coefficients
    z = Xc[:, 2]
    valid = z > 0
    zs = np.where(valid, z, 1.0)
    xn = Xc[:, :2] / zs[:, None]
    xd = _distort(coeffs, xn)
    pix = np.column_stack([K.fx * xd[:, 0] + K.cx, K.fy * xd[:, 1] + K.cy])
    if not want_jac:
        return pix, valid, None, None
    n = len(Xc)
    dxn = np.zeros((n, 2, 3))
    dxn[:, 0, 0] = 1.0 / zs
    dxn[:, 1, 1] = 1.0 / zs
    dxn[:, 0, 2] = -xn[:, 0] / zs
    dxn[:, 1, 2] = -xn[:, 1] / zs
    Jd = distortion_jacobian(coeffs, xn)
    F = np.array([K.fx, K.fy])
    dpix_dX = F[None, :, None] * np.einsum("nij,njk->nik", Jd, dxn)
    nk = len(kparams)
    dk = np.zeros((n, 2, nk))
    col = 0
    if model.shared_focal:
        dk[:, :, 0] = xd
        col = 1
    else:
        dk[:, 0, 0] = xd[:, 0]
        dk[:, 1, 1] = xd[:, 1]
        col = 2
    dk[:, 0, col] = 1.0
    dk[:, 1, col + 1] = 1.0
    nd = model.n_distortion
    if nd:
        dk[:, :, col + 2 :] = F[None, :, None] * distortion_coeff_jacobian(xn)[:, :, :nd]
    return pix, valid, dpix_dX, dk


class PinholeViewResidual:
    """Reprojection residuals ``observed - projected`` of one view.

    Blocks: intrinsics, rotation vector, translation.
    """

    def __init__(self, model: CameraModel, pixels: np.ndarray, points: np.ndarray):
        self.model = model
        self.pixels = pixels
        self.points = points

    def __call__(self, kparams, rotvec, t):
        Xc = self.points @ exp_so3(rotvec).T + t
        pix, valid, _, _ = project_with_jacobians(self.model, kparams, Xc, want_jac=False)
        r = self.pixels - pix
        r[~valid] = 0.0
        return r.ravel()

    def jacobian(self, kparams, rotvec, t):
        R = exp_so3(rotvec)
        RX = self.points @ R.T
        Xc = RX + t
        _, valid, dX, dk = project_with_jacobians(self.model, kparams, Xc)
        d_rot = np.einsum("nij,njk->nik", dX, -_skew_rows(RX))
        out = [-dk, -d_rot, -dX]
        for J in out:
            J[~valid] = 0.0
        return [J.reshape(-1, J.shape[-1]) for J in out]


class StereoPairResidual:
    """Residuals of both cameras for one synchronized pair.

    Blocks: K1, K2, cam1 rotation, cam1 translation, relative rotation,
    relative translation. Camera 2 sees ``X2 = R12 (R1 X + t1) + t12``.
    """

    def __init__(self, model1, model2, pix1, pts1, pix2, pts2):
        self.model1, self.model2 = model1, model2
        self.pix1, self.pts1, self.pix2, self.pts2 = pix1, pts1, pix2, pts2

    def __call__(self, k1, k2, rv1, t1, rv12, t12):
        R1, R12 = exp_so3(rv1), exp_so3(rv12)
        X1 = self.pts1 @ R1.T + t1
        X2 = (self.pts2 @ R1.T + t1) @ R12.T + t12
        p1, v1, _, _ = project_with_jacobians(self.model1, k1, X1, want_jac=False)
        p2, v2, _, _ = project_with_jacobians(self.model2, k2, X2, want_jac=False)
        e1 = self.pix1 - p1
        e2 = self.pix2 - p2
        e1[~v1] = 0.0
        e2[~v2] = 0.0
        return np.concatenate([e1.ravel(), e2.ravel()])

    def jacobian(self, k1, k2, rv1, t1, rv12, t12):
        R1, R12 = exp_so3(rv1), exp_so3(rv12)
        RX1 = self.pts1 @ R1.T
        X1 = RX1 + t1
        _, v1, dX1, dk1 = project_with_jacobians(self.model1, k1, X1)
        RX2 = self.pts2 @ R1.T
        Y = RX2 + t1  # cam1 frame
        X2 = Y @ R12.T + t12
        _, v2, dX2, dk2 = project_with_jacobians(self.model2, k2, X2)
        n1, n2 = len(X1), len(X2)
        # camera 1 rows
        J1 = {
            "k1": -dk1,
            "k2": np.zeros((n1, 2, len(k2))),
            "rv1": -np.einsum("nij,njk->nik", dX1, -_skew_rows(RX1)),
            "t1": -dX1,
            "rv12": np.zeros((n1, 2, 3)),
            "t12": np.zeros((n1, 2, 3)),
        }
        # camera 2 rows
        dX2_R12 = np.einsum("nij,jk->nik", dX2, R12)
        J2 = {
            "k1": np.zeros((n2, 2, len(k1))),
            "k2": -dk2,
            "rv1": -np.einsum("nij,njk->nik", dX2_R12, -_skew_rows(RX2)),
            "t1": -dX2_R12,
            "rv12": -np.einsum("nij,njk->nik", dX2, -_skew_rows(Y @ R12.T)),
            "t12": -dX2,
        }
        out = []
        for key in ("k1", "k2", "rv1", "t1", "rv12", "t12"):
            a, b = J1[key], J2[key]
            a[~v1] = 0.0
            b[~v2] = 0.0
            out.append(np.concatenate([a.reshape(2 * n1, -1), b.reshape(2 * n2, -1)]))
        return out


def virtual_camera_residuals(
    K: CameraIntrinsics,
    housing: Housing | None,
    Xc: np.ndarray,
    pixels: np.ndarray,
    rays=None,
) -> np.ndarray:
    """Per-observation virtual camera errors, shape ``(N, 2)``, in pixels.

    The observed pixel is traced into the water. A distortion-free pinhole
    with the physical camera's orientation is placed at the point of that
    ray closest to the projection center; the residual is the virtual
    image of a point on the ray minus the virtual image of ``Xc``. It is
    zero exactly when ``Xc`` lies on the traced ray. Observations whose ray
    cannot be traced get zero residual.
    """
    o, d, valid = rays if rays is not None else backproject_rays(K, housing, pixels)
    center = o - np.sum(o * d, axis=-1, keepdims=True) * d
    v = Xc - center
    valid = valid & (v[:, 2] > 0) & (d[:, 2] > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pred = v[:, :2] / v[:, 2:3]
        obs = d[:, :2] / d[:, 2:3]
    f = np.array([K.fx, K.fy])
    r = (obs - pred) * f
    r[~valid] = 0.0
    return r
