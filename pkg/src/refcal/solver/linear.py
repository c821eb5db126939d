"""Closed-form initializers: homographies, Zhang intrinsics, planar pose, median pose."""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from refcal.errors import DegenerateConfiguration, DegenerateH, DegenerateMotion
from refcal.geometry.camera import CameraIntrinsics, CameraModel, Pose
from refcal.geometry.rotation import exp_so3, log_so3, orthonormalize


def _hartley(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to 0 and the mean distance to sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.mean(np.linalg.norm(pts - c, axis=1))
    if not d > 0:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _apply_h(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    p = pts @ H[:, :2].T + H[:, 2]
    return p[:, :2] / p[:, 2:3]


def homography_dlt(src, dst) -> np.ndarray:
    """Homography ``H`` with ``dst ~ H @ src`` from >= 4 point pairs.

    Inputs are Hartley-normalized and the algebraic error is minimized by
    SVD. The result has unit Frobenius norm and a non-negative ``h33``.

    Raises:
        DegenerateConfiguration: for fewer than 4 pairs or (near) collinear points.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if len(src) < 4 or len(src) != len(dst):
        raise DegenerateConfiguration("need at least 4 point pairs")
    Ts, Td = _hartley(src), _hartley(dst)
    s = _apply_h(Ts, src)
    d = _apply_h(Td, dst)
    n = len(s)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:2] = s
    A[0::2, 2] = 1.0
    A[0::2, 6:8] = -d[:, :1] * s
    A[0::2, 8] = -d[:, 0]
    A[1::2, 3:5] = s
    A[1::2, 5] = 1.0
    A[1::2, 6:8] = -d[:, 1:2] * s
    A[1::2, 8] = -d[:, 1]
    _, sv, Vt = np.linalg.svd(A)
    if sv[7] < 1e-10 * sv[0]:
        raise DegenerateConfiguration("points are (nearly) collinear")
    H = np.linalg.solve(Td, Vt[-1].reshape(3, 3) @ Ts)
    H /= np.linalg.norm(H)
    if H[2, 2] < 0:
        H = -H
    return H


class IntrinsicsConstraint(str, enum.Enum):
    FULL_K = "FullK"
    SHARED_FOCAL = "SharedFocal"


def _v(H: np.ndarray, i: int, j: int) -> np.ndarray:
    """Zhang's constraint row on (B11, B22, B13, B23, B33) for zero skew."""
    hi, hj = H[:, i], H[:, j]
    return np.array(
        [
            hi[0] * hj[0],
            hi[1] * hj[1],
            hi[2] * hj[0] + hi[0] * hj[2],
            hi[2] * hj[1] + hi[1] * hj[2],
            hi[2] * hj[2],
        ]
    )


def zhang_intrinsics(
    homographies: Sequence[np.ndarray],
    constraints: IntrinsicsConstraint | str = IntrinsicsConstraint.FULL_K,
    image_size: tuple[float, float] | None = None,
) -> CameraIntrinsics:
    """Closed-form pinhole intrinsics from plane-to-image homographies.

    Each homography contributes the orthogonality constraints
    ``h1' B h2 = 0`` and ``h1' B h1 = h2' B h2`` on ``B = K^-T K^-1``
    (skew fixed to zero). Pixels are rescaled to unit order before solving.

    Raises:
        DegenerateMotion: if the constraints are rank deficient (e.g. a
            purely translating target) or ``B`` is not positive definite.
    """
    constraints = IntrinsicsConstraint(constraints)
    Hs = [np.asarray(H, dtype=float) for H in homographies]
    if len(Hs) < 2:
        raise DegenerateMotion("need at least two homographies")
    if image_size is not None:
        scale = 0.5 * float(max(image_size))
    else:
        scale = float(np.mean([np.linalg.norm(H[:2, 2] / H[2, 2]) for H in Hs])) or 1.0
    N = np.diag([1.0 / scale, 1.0 / scale, 1.0])
    rows = []
    for H in Hs:
        Hn = N @ H
        Hn = Hn / np.linalg.norm(Hn)
        rows.append(_v(Hn, 0, 1))
        rows.append(_v(Hn, 0, 0) - _v(Hn, 1, 1))
    V = np.array(rows)
    if constraints is IntrinsicsConstraint.SHARED_FOCAL:
        V = np.column_stack([V[:, 0] + V[:, 1], V[:, 2:]])
    _, sv, Vt = np.linalg.svd(V)
    n_unknowns = V.shape[1]
    if len(sv) < n_unknowns - 1 or sv[n_unknowns - 2] < 1e-9 * sv[0]:
        raise DegenerateMotion("homographies do not constrain the intrinsics (pure translation?)")
    b = Vt[-1]
    if constraints is IntrinsicsConstraint.SHARED_FOCAL:
        b = np.array([b[0], b[0], b[1], b[2], b[3]])
    B11, B22, B13, B23, B33 = b
    if B11 < 0:
        B11, B22, B13, B23, B33 = -b
    if not (B11 > 0 and B22 > 0):
        raise DegenerateMotion("estimated B is not positive definite")
    cx = -B13 / B11
    cy = -B23 / B22
    lam = B33 - B13 * B13 / B11 - B23 * B23 / B22
    if not lam > 0:
        raise DegenerateMotion("estimated B is not positive definite")
    fx = np.sqrt(lam / B11) * scale
    fy = np.sqrt(lam / B22) * scale
    model = CameraModel.SIMPLE_RADIAL if constraints is IntrinsicsConstraint.SHARED_FOCAL else CameraModel.PINHOLE
    if model is CameraModel.SIMPLE_RADIAL:
        return CameraIntrinsics(model, fx, fx, cx * scale, cy * scale, (0.0,))
    return CameraIntrinsics(model, fx, fy, cx * scale, cy * scale)


def pose_from_homography(K: CameraIntrinsics | np.ndarray, H) -> Pose:
    """Pose of the ``Z = 0`` target plane from ``H ~ K [r1 r2 t]``.

    ``K`` may be intrinsics or a 3x3 matrix; pass the identity when ``H``
    maps to normalized image coordinates. The rotation is re-orthonormalized
    by SVD and the sign chosen so the target lies in front (``t_z > 0``).

    Raises:
        DegenerateH: if ``H`` is singular.
    """
    Kmat = K.K if isinstance(K, CameraIntrinsics) else np.asarray(K, dtype=float)
    A = np.linalg.solve(Kmat, np.asarray(H, dtype=float))
    n1, n2 = np.linalg.norm(A[:, 0]), np.linalg.norm(A[:, 1])
    if not (n1 > 0 and n2 > 0) or abs(np.linalg.det(np.asarray(H, dtype=float))) < 1e-300:
        raise DegenerateH("homography is singular")
    s = 2.0 / (n1 + n2)
    if A[2, 2] < 0:
        s = -s
    r1, r2, t = s * A[:, 0], s * A[:, 1], s * A[:, 2]
    R = orthonormalize(np.column_stack([r1, r2, np.cross(r1, r2)]))
    return Pose(R, t)


def plane_frame(points: np.ndarray, tol: float = 1e-9) -> Pose | None:
    """Rigid transform taking coplanar ``points`` onto ``Z = 0``; ``None`` if not planar.

    Returns the identity when the points already lie on ``Z = 0``.
    """
    points = np.asarray(points, dtype=float)
    scale = max(float(np.ptp(points, axis=0).max()), 1e-300)
    if np.all(np.abs(points[:, 2]) <= tol * scale):
        return Pose.identity()
    c = points.mean(axis=0)
    _, sv, Vt = np.linalg.svd(points - c)
    if sv[2] > tol * sv[0] * np.sqrt(len(points)):
        return None
    R = Vt.copy()
    if np.linalg.det(R) < 0:
        R[2] = -R[2]
    return Pose(R, -R @ c)


def median_pose(poses: Sequence[Pose]) -> Pose:
    """Component-wise median of axis-angle vectors and translations.

    Even counts use the lower median (index ``(n - 1) // 2`` after sorting).
    """
    if len(poses) == 0:
        raise ValueError("median of an empty pose list")
    rv = np.array([log_so3(p.rotation) for p in poses])
    t = np.array([p.translation for p in poses])
    k = (len(poses) - 1) // 2
    rv_med = np.sort(rv, axis=0)[k]
    t_med = np.sort(t, axis=0)[k]
    return Pose(exp_so3(rv_med), t_med)
