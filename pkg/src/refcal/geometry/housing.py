"""Flat and dome port housings: refractive back-projection and projection.

All housing geometry lives in the camera frame. Interface normals point
from the camera toward the water.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from refcal.errors import (
    BehindInterface,
    NoForwardIntersection,
    NoIntersection,
    NonConvergence,
    TotalInternalReflection,
)
from refcal.geometry.camera import (
    CameraIntrinsics,
    Pose,
    Ray,
    pixel_to_normalized,
    project_normalized,
    project_pinhole,
)
from refcal.geometry.refraction import _refract, _sphere_lambda


def _check_indices(mu_a, mu_g, mu_w):
    if min(mu_a, mu_g, mu_w) <= 0:
        raise ValueError("refractive indices must be positive")


@dataclass(frozen=True)
class FlatPort:
    """Planar glass window.

    ``normal`` is normalized on construction; ``distance`` is the distance
    from the projection center to the inner glass surface along the normal.
    """

    normal: tuple[float, float, float]
    distance: float
    thickness: float
    mu_a: float = 1.0
    mu_g: float = 1.473
    mu_w: float = 1.334

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if not norm > 0:
            raise ValueError("flat port normal must be non-zero")
        if abs(norm - 1.0) > 1e-12:
            n = n / norm  # already-unit normals are kept bit-exact
        if n[2] <= 0:
            raise ValueError("flat port normal must point away from the camera (n_z > 0)")
        object.__setattr__(self, "normal", tuple(float(v) for v in n))
        for name in ("distance", "thickness", "mu_a", "mu_g", "mu_w"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.distance < 0:
            raise ValueError("interface distance must be >= 0")
        if self.thickness <= 0:
            raise ValueError("glass thickness must be > 0")
        _check_indices(self.mu_a, self.mu_g, self.mu_w)

    @property
    def n(self) -> np.ndarray:
        return np.array(self.normal)

    @property
    def constants(self) -> dict[str, float]:
        return {"t_glass": self.thickness, "mu_a": self.mu_a, "mu_g": self.mu_g, "mu_w": self.mu_w}


@dataclass(frozen=True)
class DomePort:
    """Spherical glass window; ``decentering`` points from the projection center to the sphere center."""

    decentering: tuple[float, float, float]
    radius: float
    thickness: float
    mu_a: float = 1.0
    mu_g: float = 1.473
    mu_w: float = 1.334

    def __post_init__(self):
        object.__setattr__(self, "decentering", tuple(float(v) for v in self.decentering))
        for name in ("radius", "thickness", "mu_a", "mu_g", "mu_w"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.radius > self.thickness > 0:
            raise ValueError("dome requires radius > thickness > 0")
        if np.linalg.norm(self.decentering) >= self.radius - self.thickness:
            raise ValueError("projection center must lie strictly inside the inner dome surface")
        _check_indices(self.mu_a, self.mu_g, self.mu_w)

    @property
    def c(self) -> np.ndarray:
        return np.array(self.decentering)

    @property
    def constants(self) -> dict[str, float]:
        return {
            "r_dome": self.radius,
            "t_glass": self.thickness,
            "mu_a": self.mu_a,
            "mu_g": self.mu_g,
            "mu_w": self.mu_w,
        }


Housing = Union[FlatPort, DomePort]


def _air_directions(K: CameraIntrinsics, x):
    xn, ok = pixel_to_normalized(K, x)
    d = np.concatenate([xn, np.ones(xn.shape[:-1] + (1,))], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d, ok


def trace_flat(port: FlatPort, d: np.ndarray):
    """Trace unit air rays from the projection center into the water.

    Returns ``(origin, direction, status)`` with status 0 = ok,
    1 = no forward intersection, 2 = total internal reflection.
    """
    n = port.n
    dn = d @ n
    status = np.where(dn > 1e-12, 0, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        p1 = (port.distance / dn)[..., None] * d
        g, ok1 = _refract(d, n, port.mu_a, port.mu_g)
        p2 = p1 + (port.thickness / (g @ n))[..., None] * g
        w, ok2 = _refract(g, n, port.mu_g, port.mu_w)
    status = np.where((status == 0) & ~(ok1 & ok2), 2, status)
    return p2, w, status


def trace_dome(port: DomePort, d: np.ndarray):
    """Dome counterpart of :func:`trace_flat` (status 1 = sphere missed)."""
    c = port.c
    zero = np.zeros_like(d)
    lam1 = _sphere_lambda(zero, d, c, port.radius - port.thickness)
    p1 = lam1[..., None] * d
    n1 = (p1 - c) / (port.radius - port.thickness)
    g, ok1 = _refract(d, n1, port.mu_a, port.mu_g)
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    lam2 = _sphere_lambda(p1, g, c, port.radius)
    p2 = p1 + lam2[..., None] * g
    n2 = (p2 - c) / port.radius
    w, ok2 = _refract(g, n2, port.mu_g, port.mu_w)
    hit = np.isfinite(lam1) & np.isfinite(lam2)
    status = np.where(hit, np.where(ok1 & ok2, 0, 2), 1)
    return p2, w, status


def trace_housing(housing: Housing | None, d: np.ndarray):
    if housing is None:
        return np.zeros_like(d), d, np.zeros(d.shape[:-1], dtype=int)
    if isinstance(housing, FlatPort):
        return trace_flat(housing, d)
    return trace_dome(housing, d)


def backproject_rays(K: CameraIntrinsics, housing: Housing | None, x):
    """Water rays for pixels without raising: ``(origin, direction, valid)``."""
    d, ok = _air_directions(K, x)
    o, w, status = trace_housing(housing, d)
    return o, w, ok & (status == 0)


def _raise_status(status: np.ndarray, miss_error):
    if np.any(status == 1):
        raise miss_error("ray does not reach the water through the port")
    if np.any(status == 2):
        raise TotalInternalReflection("total internal reflection inside the port")


def backproject_flat(K: CameraIntrinsics, port: FlatPort, x) -> Ray:
    """In-water ray for pixel(s) ``x``; origin on the outer glass surface."""
    d, ok = _air_directions(K, x)
    if not np.all(ok):
        raise NonConvergence("undistortion did not converge")
    o, w, status = trace_flat(port, d)
    _raise_status(status, NoForwardIntersection)
    return Ray(o, w)


def backproject_dome(K: CameraIntrinsics, port: DomePort, x) -> Ray:
    """In-water ray for pixel(s) ``x``; origin on the outer dome sphere."""
    d, ok = _air_directions(K, x)
    if not np.all(ok):
        raise NonConvergence("undistortion did not converge")
    o, w, status = trace_dome(port, d)
    _raise_status(status, NoIntersection)
    return Ray(o, w)


def backproject_housing(K: CameraIntrinsics, housing: Housing | None, x) -> Ray:
    if housing is None:
        d, ok = _air_directions(K, x)
        if not np.all(ok):
            raise NonConvergence("undistortion did not converge")
        return Ray(np.zeros_like(d), d)
    if isinstance(housing, FlatPort):
        return backproject_flat(K, housing, x)
    return backproject_dome(K, housing, x)


# ---------------------------------------------------------------------------
# forward projection


def flat_air_directions(port: FlatPort, Xc: np.ndarray, max_iter: int = 100):
    """Air-side ray directions that reach camera-frame points ``Xc``.

    Refraction keeps the whole light path in the plane spanned by the port
    normal and the point, so only the sine ``s`` of the air incidence angle
    is unknown. The radial offset reached at the point's depth is

        r*tan(a) + t*tan(g) + D*tan(w),  sin(g) = s*mu_a/mu_g, sin(w) = s*mu_a/mu_w

    which is monotone in ``s``; it is solved with Newton steps safeguarded by
    bisection. Returns ``(directions, converged)``.
    """
    n = port.n
    z = Xc @ n
    radial_vec = Xc - z[..., None] * n
    rho = np.linalg.norm(radial_vec, axis=-1)
    depth = z - port.distance - port.thickness
    a = port.mu_a / port.mu_g
    b = port.mu_a / port.mu_w
    coef = np.array([1.0, a, b])
    s_max = min(1.0, 1.0 / a, 1.0 / b)
    lengths = np.stack([np.full_like(z, port.distance), np.full_like(z, port.thickness), depth], axis=-1)

    def radial(s):
        cs = s[..., None] * coef
        return np.sum(lengths * cs / np.sqrt(1.0 - cs * cs), axis=-1)

    def radial_prime(s):
        cs2 = (s[..., None] * coef) ** 2
        return np.sum(lengths * coef / (1.0 - cs2) ** 1.5, axis=-1)

    lo = np.zeros_like(z)
    hi = np.full_like(z, s_max)
    s = np.clip(rho / np.linalg.norm(Xc, axis=-1), 0.0, s_max * 0.5)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(max_iter):
            g = radial(s) - rho
            lo = np.where(g <= 0, s, lo)
            hi = np.where(g > 0, s, hi)
            s_new = s - g / radial_prime(s)
            bad = ~((s_new > lo) & (s_new < hi)) | ~np.isfinite(s_new)
            s_new = np.where(bad, 0.5 * (lo + hi), s_new)
            s_new = np.where(g == 0, s, s_new)
            step = np.abs(s_new - s)
            s = s_new
            if np.all(step <= 1e-16):
                break
        # final angular residual of the Newton model
        resid = np.abs((radial(s) - rho) / radial_prime(s))
    converged = np.isfinite(resid) & (resid <= 1e-12) & (s < s_max)
    e = np.where(rho[..., None] > 0, radial_vec / np.where(rho > 0, rho, 1.0)[..., None], 0.0)
    d = np.sqrt(1.0 - s * s)[..., None] * n + s[..., None] * e
    return d, converged


def project_flat(K: CameraIntrinsics, port: FlatPort, pose: Pose, X) -> np.ndarray:
    """Refractive projection of world points through a flat port.

    Raises:
        BehindInterface: if a point is not beyond the outer glass surface.
        NonConvergence: if the incidence-angle solve fails.
    """
    Xc = pose.apply(X)
    if np.any(Xc @ port.n <= port.distance + port.thickness):
        raise BehindInterface("point is not in the water half-space")
    d, ok = flat_air_directions(port, Xc)
    if not np.all(ok):
        raise NonConvergence("flat port projection did not converge")
    return project_normalized(K, d[..., :2] / d[..., 2:3])


def _dome_mismatch(K: CameraIntrinsics, port: DomePort, Xc: np.ndarray, x: np.ndarray):
    """Difference between the direction to the point and the water ray direction."""
    o, w, valid = backproject_rays(K, port, x)
    v = Xc - o
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    e = v - w
    e[~valid] = np.nan
    return e


def _dome_newton(K, port, Xc, x0, max_iter=50, h=1e-6):
    x = x0.copy()
    e = _dome_mismatch(K, port, Xc, x)
    err = np.linalg.norm(e, axis=-1)
    for _ in range(max_iter):
        active = ~(err <= 1e-15)
        if not np.any(active):
            break
        xa, Xa, ea = x[active], Xc[active], e[active]
        J = np.empty(xa.shape[:-1] + (3, 2))
        for k in range(2):
            dx = np.zeros(2)
            dx[k] = h
            J[..., k] = (_dome_mismatch(K, port, Xa, xa + dx) - _dome_mismatch(K, port, Xa, xa - dx)) / (2 * h)
        JtJ = np.einsum("nik,nil->nkl", J, J)
        Jte = np.einsum("nik,ni->nk", J, ea)
        with np.errstate(divide="ignore", invalid="ignore"):
            det = JtJ[:, 0, 0] * JtJ[:, 1, 1] - JtJ[:, 0, 1] * JtJ[:, 1, 0]
            step = -np.stack(
                [
                    (JtJ[:, 1, 1] * Jte[:, 0] - JtJ[:, 0, 1] * Jte[:, 1]) / det,
                    (JtJ[:, 0, 0] * Jte[:, 1] - JtJ[:, 1, 0] * Jte[:, 0]) / det,
                ],
                axis=-1,
            )
        step = np.where(np.isfinite(step), step, 0.0)
        # damping: halve the step until the mismatch decreases
        cur = err[active]
        new_x = xa.copy()
        new_e = ea.copy()
        new_err = cur.copy()
        pending = np.ones(len(xa), dtype=bool)
        scale = 1.0
        for _ in range(12):
            cand = xa[pending] + scale * step[pending]
            ce = _dome_mismatch(K, port, Xa[pending], cand)
            cerr = np.linalg.norm(ce, axis=-1)
            better = cerr < cur[pending]
            idx = np.flatnonzero(pending)[better]
            new_x[idx], new_e[idx], new_err[idx] = cand[better], ce[better], cerr[better]
            pending[idx] = False
            if not np.any(pending):
                break
            scale *= 0.5
        stalled = np.all(np.abs(step) < 1e-12, axis=-1) | pending
        x[active], e[active], err[active] = new_x, new_e, new_err
        if np.all(stalled):
            break
    return x, err


def project_dome(K: CameraIntrinsics, port: DomePort, pose: Pose, X) -> np.ndarray:
    """Refractive projection of world points through a dome port.

    Damped Gauss-Newton on the pixel coordinates, started at the pinhole
    projection, drives the back-projected water ray through the point. A
    5x5 grid of restarts around the pinhole guess is tried for stragglers.

    Raises:
        BehindInterface: if a point lies inside the outer dome sphere.
        NonConvergence: if no start converges.
    """
    Xc = np.atleast_2d(pose.apply(X))
    single = np.ndim(X) == 1
    if np.any(np.linalg.norm(Xc - port.c, axis=-1) <= port.radius):
        raise BehindInterface("point lies inside the dome")
    x0 = project_pinhole(K, Pose.identity(), Xc)
    x, err = _dome_newton(K, port, Xc, x0)
    failed = ~(err <= 1e-13)
    if np.any(failed):
        offsets = np.linspace(-0.1, 0.1, 5) * K.fx
        for du in offsets:
            for dv in offsets:
                idx = np.flatnonzero(failed)
                if len(idx) == 0:
                    break
                xr, er = _dome_newton(K, port, Xc[idx], x0[idx] + np.array([du, dv]))
                good = er <= 1e-13
                x[idx[good]] = xr[good]
                failed[idx[good]] = False
    if np.any(failed):
        raise NonConvergence("dome port projection did not converge")
    return x[0] if single else x


def project_housing(K: CameraIntrinsics, housing: Housing | None, pose: Pose, X) -> np.ndarray:
    if housing is None:
        return project_pinhole(K, pose, X)
    if isinstance(housing, FlatPort):
        return project_flat(K, housing, pose, X)
    return project_dome(K, housing, pose, X)
