"""Snell refraction and ray/surface intersections."""

from __future__ import annotations

import numpy as np

from refcal.errors import NoForwardIntersection, NoIntersection, ParallelRay, TotalInternalReflection
from refcal.geometry.camera import Ray


def _refract(incident: np.ndarray, normal: np.ndarray, mu1, mu2):
    """Vectorized refraction; returns ``(directions, ok)`` where ``ok`` is False under TIR.

    The normal may point either way; it is flipped to face the incoming ray.
    Indices may be scalars or arrays broadcasting against the ray batch.
    """
    c1 = -np.sum(incident * normal, axis=-1)
    flip = c1 < 0
    n = np.where(flip[..., None], -normal, normal)
    c1 = np.abs(c1)
    r = np.asarray(mu1, dtype=float) / np.asarray(mu2, dtype=float)
    k = 1.0 - r * r * (1.0 - c1 * c1)
    ok = k >= 0
    c2 = np.sqrt(np.where(ok, k, 0.0))
    t = r[..., None] * incident + (r * c1 - c2)[..., None] * n
    return t, ok


def refract(incident, normal, mu1, mu2) -> np.ndarray:
    """Direction of a unit ray after crossing an interface from index ``mu1`` to ``mu2``.

    Uses ``t = r*i + (r*c1 - c2)*n`` with ``r = mu1/mu2``, ``c1 = -i.n`` and
    ``c2 = sqrt(1 - r^2 (1 - c1^2))``; ``normal`` is flipped internally if it
    faces away from the incoming ray.

    Raises:
        TotalInternalReflection: if no refracted ray exists.
    """
    if np.any(np.asarray(mu1) <= 0) or np.any(np.asarray(mu2) <= 0):
        raise ValueError("refractive indices must be positive")
    t, ok = _refract(np.asarray(incident, dtype=float), np.asarray(normal, dtype=float), mu1, mu2)
    if not np.all(ok):
        raise TotalInternalReflection(f"total internal reflection (mu1={mu1}, mu2={mu2})")
    return t


def intersect_ray_plane(ray: Ray, plane_normal, plane_offset: float) -> np.ndarray:
    """Forward intersection of ``ray`` with the plane ``{P : P.n = offset}``.

    Raises:
        ParallelRay: if the ray is parallel to the plane.
        NoForwardIntersection: if the plane lies behind the ray origin.
    """
    n = np.asarray(plane_normal, dtype=float)
    o = np.asarray(ray.origin, dtype=float)
    d = np.asarray(ray.direction, dtype=float)
    dn = np.sum(d * n, axis=-1)
    if np.any(np.abs(dn) < 1e-12):
        raise ParallelRay("ray is parallel to the plane")
    lam = (plane_offset - np.sum(o * n, axis=-1)) / dn
    if np.any(lam <= 0):
        raise NoForwardIntersection("plane is behind the ray origin")
    return o + lam[..., None] * d


def _sphere_lambda(origin: np.ndarray, direction: np.ndarray, center, radius):
    """Nearest forward ray parameter, NaN where the ray misses."""
    m = origin - center
    b = np.sum(m * direction, axis=-1)
    c = np.sum(m * m, axis=-1) - radius * radius
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        s = np.sqrt(disc)
    near = -b - s
    far = -b + s
    lam = np.where(near > 0, near, np.where(far > 0, far, np.nan))
    return lam


def intersect_ray_sphere(ray: Ray, center, radius: float) -> np.ndarray:
    """Nearest forward intersection; the exit point when the origin is inside.

    Raises:
        NoIntersection: if the ray misses the sphere or it lies behind the ray.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    o = np.asarray(ray.origin, dtype=float)
    d = np.asarray(ray.direction, dtype=float)
    lam = _sphere_lambda(o, d, np.asarray(center, dtype=float), radius)
    if np.any(~np.isfinite(lam)):
        raise NoIntersection("ray does not hit the sphere")
    return o + lam[..., None] * d
