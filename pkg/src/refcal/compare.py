"""Calibration results against ground truth, tabulated like the validation tables."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from refcal.calib.report import CalibrationReport
from refcal.geometry.housing import DomePort, FlatPort
from refcal.geometry.rotation import rotation_angle


@dataclass(frozen=True)
class Table:
    title: str
    columns: tuple[str, ...]
    rows: tuple[tuple[str, tuple[float | None, ...]], ...]

    def format(self) -> str:
        """Tab-delimited text, one header line plus one line per row."""
        lines = [f"# {self.title}", "\t".join(("set",) + self.columns)]
        for label, values in self.rows:
            cells = ["" if v is None else format(v, ".10g") for v in values]
            lines.append("\t".join([label, *cells]))
        return "\n".join(lines)


def _intrinsics_table(title, K, K_true=None) -> Table:
    names = K.model.param_names
    est = dict(zip(names, K.params()))
    rows = []
    if K_true is not None:
        true = dict(zip(K_true.model.param_names, K_true.params()))
        if "f" in true:
            true.setdefault("fx", true["f"])
            true.setdefault("fy", true["f"])
        if "f" in names:
            true.setdefault("f", true.get("fx"))
        vals = tuple(true.get(n, 0.0) for n in names)
        rows.append(("True", vals))
        rows.append(("Estimated", tuple(float(est[n]) for n in names)))
        rows.append(("Error", tuple(float(est[n]) - v for n, v in zip(names, vals))))
    else:
        rows.append(("Estimated", tuple(float(est[n]) for n in names)))
    return Table(title, tuple(names), tuple(rows))


def _angle_deg(a, b) -> float:
    return math.degrees(math.atan2(np.linalg.norm(np.cross(a, b)), float(np.dot(a, b))))


def housing_table(report: CalibrationReport, truth=None) -> Table | None:
    h = report.housing
    if h is None:
        return None
    est = h.estimate
    ref = truth if truth is not None else h.reference
    if isinstance(est, DomePort):
        cols = ("c_x", "c_y", "c_z", "||E_c||")
        rows = []
        if ref is not None:
            rows.append(("True", (*ref.decentering, None)))
        err = float(np.linalg.norm(est.c - ref.c)) if ref is not None else None
        rows.append(("Estimated", (*est.decentering, err)))
        return Table("dome port", cols, tuple(rows))
    assert isinstance(est, FlatPort)
    cols = ("n_x", "n_y", "n_z", "r_flat", "epsilon_deg", "||E_r||")
    rows = []
    if ref is not None:
        rows.append(("True", (*ref.normal, ref.distance, None, None)))
        eps = _angle_deg(est.n, ref.n)
        rows.append(("Estimated", (*est.normal, est.distance, eps, abs(est.distance - ref.distance))))
    else:
        rows.append(("Estimated", (*est.normal, est.distance, None, None)))
    return Table("flat port", cols, tuple(rows))


def stereo_table(report: CalibrationReport, truth_pose=None) -> Table | None:
    s = report.stereo
    if s is None:
        return None
    p = s.relative_pose
    cols = ("angle_deg", "t_x", "t_y", "t_z", "epsilon_deg", "||E_t||")
    rows = []
    if truth_pose is not None:
        rows.append(("True", (math.degrees(rotation_angle(truth_pose.rotation)), *truth_pose.translation, None, None)))
        eps = math.degrees(rotation_angle(p.rotation @ truth_pose.rotation.T))
        et = float(np.linalg.norm(p.translation - truth_pose.translation))
        rows.append(("Estimated", (math.degrees(rotation_angle(p.rotation)), *p.translation, eps, et)))
    else:
        rows.append(("Estimated", (math.degrees(rotation_angle(p.rotation)), *p.translation, None, None)))
    return Table("stereo relative pose", cols, tuple((label, tuple(None if v is None else float(v) for v in vals)) for label, vals in rows))


def compare_tables(report: CalibrationReport, truth=None) -> list[Table]:
    """Tables for every section of ``report``; ``truth`` is a GroundTruth or None."""
    spec = truth.spec if truth is not None else None
    tables = [_intrinsics_table("camera intrinsics", report.intrinsics, spec.camera if spec else None)]
    if report.housing is not None:
        tables.append(housing_table(report, spec.housing if spec else None))
    if report.stereo is not None:
        K2_true = spec.stereo.camera2 if spec and spec.stereo else None
        tables.append(_intrinsics_table("camera 2 intrinsics", report.stereo.intrinsics2, K2_true))
        tables.append(stereo_table(report, spec.stereo.relative_pose if spec and spec.stereo else None))
    return tables


def error_metrics(tables: list[Table]) -> dict[str, float]:
    """Absolute errors keyed by ``"table: column"``, for the comparison chart."""
    out = {}
    for t in tables:
        for label, values in t.rows:
            for c, v in zip(t.columns, values):
                if v is None:
                    continue
                if label == "Error" or (label == "Estimated" and (c.startswith("||") or c == "epsilon_deg")):
                    out[f"{t.title}: {c}"] = abs(float(v))
    return out
