"""Calibration report value types."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from refcal.geometry.camera import CameraIntrinsics, Pose
from refcal.geometry.housing import DomePort, FlatPort


@dataclass(frozen=True)
class CoverageGrid:
    """Observation counts over a ``grid_size x grid_size`` tiling of the image.

    ``counts[i][j]`` covers image row band ``i`` (v) and column band ``j`` (u).
    """

    grid_size: int
    counts: tuple[tuple[int, ...], ...]

    @property
    def array(self) -> np.ndarray:
        return np.array(self.counts, dtype=int)

    @property
    def summary(self) -> dict[str, int]:
        a = self.array
        return {"empty_cells": int(np.sum(a == 0)), "min": int(a.min()), "max": int(a.max())}

    @property
    def total(self) -> int:
        return int(self.array.sum())

    def render(self) -> str:
        """Text heat-map: one row per band, counts right-aligned."""
        a = self.array
        width = max(3, len(str(int(a.max()))) + 1)
        lines = ["".join(f"{c:>{width}d}" for c in row) for row in a]
        s = self.summary
        lines.append(f"empty cells: {s['empty_cells']}/{a.size}  min: {s['min']}  max: {s['max']}")
        return "\n".join(lines)


@dataclass(frozen=True)
class HousingSection:
    """Housing estimate plus the frozen constants and initial guess it started from.

    ``metrics`` holds ``E_c`` (dome, m), ``epsilon_deg`` and ``E_r`` (flat)
    against ``reference`` when one was supplied, and the change relative to
    the initial guess.
    """

    port: str
    estimate: FlatPort | DomePort
    initial: FlatPort | DomePort
    stddev: dict[str, float] = field(default_factory=dict)
    virtual_rms: float = 0.0
    metrics: dict[str, float] = field(default_factory=dict)
    reference: FlatPort | DomePort | None = None

    @property
    def constants(self) -> dict[str, float]:
        return self.estimate.constants


@dataclass(frozen=True)
class StereoSection:
    relative_pose: Pose
    initial_relative_pose: Pose
    intrinsics2: CameraIntrinsics
    refine_intrinsics: bool
    rms_cam1: float
    rms_cam2: float
    stddev: dict[str, float] = field(default_factory=dict)
    stddev2: dict[str, float] = field(default_factory=dict)
    image_size2: tuple[int, int] = (0, 0)
    coverage2: CoverageGrid | None = None
    dropped_pairs: tuple[str, ...] = ()


@dataclass(frozen=True)
class CalibrationReport:
    """Everything a calibration run produced.

    For stereo runs the top-level camera fields describe camera 1 and the
    per-view poses are camera 1's poses for each pair.
    """

    intrinsics: CameraIntrinsics
    view_ids: tuple[str, ...]
    poses: tuple[Pose, ...]
    rms: float
    per_view_rms: tuple[float, ...]
    stddev: dict[str, float]
    image_size: tuple[int, int]
    coverage: CoverageGrid | None = None
    housing: HousingSection | None = None
    stereo: StereoSection | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.per_view_rms) != len(self.view_ids) or len(self.poses) != len(self.view_ids):
            raise ValueError("per-view fields must match the number of views")
