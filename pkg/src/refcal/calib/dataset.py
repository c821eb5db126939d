"""Correspondence datasets: per-view 2D pixels paired with 3D target points."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from refcal.errors import ValidationError


class TargetType(str, enum.Enum):
    CHECKERBOARD = "checkerboard"
    GENERIC_3D = "generic3d"


@dataclass(frozen=True)
class Target:
    type: TargetType = TargetType.CHECKERBOARD
    rows: int = 0
    cols: int = 0
    spacing: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "type", TargetType(self.type))

    def grid(self) -> np.ndarray:
        """Corner coordinates on ``Z = 0``, row-major, origin at the first corner."""
        j, i = np.meshgrid(np.arange(self.cols), np.arange(self.rows))
        pts = np.zeros((self.rows * self.cols, 3))
        pts[:, 0] = j.ravel() * self.spacing
        pts[:, 1] = i.ravel() * self.spacing
        return pts


def _arrays_equal(a, b) -> bool:
    return np.array_equal(np.asarray(a), np.asarray(b))


@dataclass(frozen=True, eq=False)
class View:
    view_id: str
    pixels: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float).reshape(-1, 3))
        if len(self.pixels) != len(self.points):
            raise ValidationError(f"view {self.view_id}: {len(self.pixels)} pixels vs {len(self.points)} points")

    def __len__(self):
        return len(self.pixels)

    def __eq__(self, other):
        if not isinstance(other, View):
            return NotImplemented
        return (
            self.view_id == other.view_id
            and _arrays_equal(self.pixels, other.pixels)
            and _arrays_equal(self.points, other.points)
        )

    __hash__ = None


@dataclass(frozen=True)
class ObservationDataset:
    """Views of one calibration target seen by a single camera.

    ``housing`` optionally carries the known housing constants (port type,
    glass thickness, refractive indices, dome radius) of the capture setup.
    """

    views: tuple[View, ...]
    image_size: tuple[int, int]
    target: Target = field(default_factory=Target)
    housing: dict[str, Any] | None = None

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))

    @property
    def n_observations(self) -> int:
        return sum(len(v) for v in self.views)

    @property
    def view_ids(self) -> tuple[str, ...]:
        return tuple(v.view_id for v in self.views)

    def all_pixels(self) -> np.ndarray:
        return np.concatenate([v.pixels for v in self.views]) if self.views else np.zeros((0, 2))

    def validate(self) -> None:
        """Raise :class:`ValidationError` on the first broken invariant."""
        if len(self.views) == 0:
            raise ValidationError("no views found")
        ids = self.view_ids
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate view ids")
        for v in self.views:
            validate_view(v, self.target)


def validate_view(v: View, target: Target) -> None:
    if len(v) < 4:
        raise ValidationError(f"view {v.view_id}: {len(v)} observations, need at least 4")
    if not (np.all(np.isfinite(v.pixels)) and np.all(np.isfinite(v.points))):
        raise ValidationError(f"view {v.view_id}: non-finite values")
    if target.type is TargetType.CHECKERBOARD:
        if not np.all(v.points[:, 2] == 0.0):
            raise ValidationError(f"view {v.view_id}: checkerboard points must have Z = 0")
        if target.spacing > 0:
            idx = v.points[:, :2] / target.spacing
            if np.max(np.abs(idx - np.round(idx)) * target.spacing) > 1e-12:
                raise ValidationError(f"view {v.view_id}: points are off the {target.spacing} m grid")


@dataclass(frozen=True, eq=False)
class StereoPair:
    view_id: str
    cam1: View
    cam2: View

    def __eq__(self, other):
        if not isinstance(other, StereoPair):
            return NotImplemented
        return self.view_id == other.view_id and self.cam1 == other.cam1 and self.cam2 == other.cam2

    __hash__ = None


@dataclass(frozen=True)
class StereoDataset:
    """Synchronized view pairs of one target seen by two rigidly coupled cameras."""

    pairs: tuple[StereoPair, ...]
    image_size1: tuple[int, int]
    image_size2: tuple[int, int]
    target: Target = field(default_factory=Target)
    cameras: tuple[str, str] = ("cam1", "cam2")

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "image_size1", tuple(int(v) for v in self.image_size1))
        object.__setattr__(self, "image_size2", tuple(int(v) for v in self.image_size2))
        object.__setattr__(self, "cameras", tuple(self.cameras))

    def camera_dataset(self, k: int) -> ObservationDataset:
        """Single-camera view of side ``k`` (1 or 2)."""
        views = [p.cam1 if k == 1 else p.cam2 for p in self.pairs]
        size = self.image_size1 if k == 1 else self.image_size2
        return ObservationDataset(tuple(views), size, self.target)

    def validate(self) -> None:
        if len(self.pairs) < 2:
            raise ValidationError(f"stereo dataset has {len(self.pairs)} pairs, need at least 2")
        for p in self.pairs:
            validate_view(p.cam1, self.target)
            validate_view(p.cam2, self.target)
