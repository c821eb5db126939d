"""YAML file formats: datasets, calibration reports and ground-truth sidecars.

Every file carries ``schema: 1``. Floats are written with Python's shortest
round-trip representation, so a value read back is bit-identical to the
value written. Load errors name the file and, where possible, the line.

Dataset directory layout::

    DIR/dataset.yaml   schema, target, image_size, [housing], views
    DIR/truth.yaml     ground truth written by ``generate`` (optional)
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from refcal import __version__
from refcal.calib.dataset import ObservationDataset, StereoDataset, StereoPair, Target, View, validate_view
from refcal.calib.report import CalibrationReport, CoverageGrid, HousingSection, StereoSection
from refcal.errors import InputError, ParseError, SchemaError, ValidationError
from refcal.geometry.camera import CameraIntrinsics, CameraModel, Pose
from refcal.geometry.housing import DomePort, FlatPort, Housing
from refcal.geometry.rotation import log_so3, matrix_to_quaternion

try:
    from yaml import CSafeDumper as _Dumper
    from yaml import CSafeLoader as _BaseLoader
except ImportError:  # pragma: no cover - libyaml missing
    from yaml import SafeDumper as _Dumper
    from yaml import SafeLoader as _BaseLoader


class _Loader(_BaseLoader):
    """Safe loader that also reads exponent floats without a dot, such as ``1e-5``."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)$"),
    list("-+0123456789"),
)

SCHEMA_VERSION = 1
DATASET_FILE = "dataset.yaml"
TRUTH_FILE = "truth.yaml"


# ---------------------------------------------------------------------------
# low-level helpers


@dataclass
class _Doc:
    """Parsed YAML plus its node tree, for line numbers in error messages."""

    path: str
    data: Any
    node: Any

    def where(self, *keys) -> str:
        """``path:line`` of the deepest node reachable along ``keys``."""
        node = self.node
        for key in keys:
            child = None
            if isinstance(node, yaml.MappingNode):
                child = next((v for k, v in node.value if k.value == str(key)), None)
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and 0 <= key < len(node.value):
                child = node.value[key]
            if child is None:
                break
            node = child
        return self.path if node is None else f"{self.path}:{node.start_mark.line + 1}"

    def fail(self, exc_type, msg: str, *keys):
        raise exc_type(f"{self.where(*keys)}: {msg}")


def _parse_text(text: str, path: str) -> _Doc:
    loader = _Loader(text)
    try:
        node = loader.get_single_node()
        data = loader.construct_document(node) if node is not None else None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else path
        problem = getattr(exc, "problem", None) or str(exc)
        raise ParseError(f"{where}: malformed YAML: {problem}") from None
    finally:
        loader.dispose()
    return _Doc(path, data, node)


def _read(path) -> _Doc:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: cannot read: {exc}") from None
    return _parse_text(text, str(path))


def _dump(data: dict) -> str:
    return yaml.dump(data, Dumper=_Dumper, sort_keys=False, default_flow_style=None, width=1 << 16, allow_unicode=True)


def _write(path, data: dict) -> None:
    Path(path).write_text(_dump(data), encoding="utf-8")


def _mapping(doc: _Doc, value, *keys) -> dict:
    if not isinstance(value, dict):
        doc.fail(SchemaError, "expected a mapping", *keys)
    return value


def _field(doc: _Doc, mapping: dict, key: str, *keys):
    if key not in mapping:
        doc.fail(SchemaError, f"missing field '{key}'", *keys)
    return mapping[key]


def _num(doc: _Doc, value, *keys) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        doc.fail(SchemaError, f"expected a number, got {value!r}", *keys)
    return float(value)


def _int(doc: _Doc, value, *keys) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        doc.fail(SchemaError, f"expected an integer, got {value!r}", *keys)
    return value


def _vec(doc: _Doc, value, n: int, *keys) -> tuple[float, ...]:
    if not isinstance(value, list) or len(value) != n:
        doc.fail(SchemaError, f"expected a list of {n} numbers", *keys)
    return tuple(_num(doc, v, *keys, i) for i, v in enumerate(value))


def _floats(values) -> list[float]:
    return [float(v) for v in np.asarray(values, dtype=float).ravel()]


def _check_schema(doc: _Doc) -> dict:
    data = _mapping(doc, doc.data)
    version = _field(doc, data, "schema")
    if version != SCHEMA_VERSION:
        doc.fail(SchemaError, f"unsupported schema version {version!r} (this tool reads {SCHEMA_VERSION})", "schema")
    return data


# ---------------------------------------------------------------------------
# shared sections


def _target_to_dict(t: Target) -> dict:
    return {"type": t.type.value, "rows": t.rows, "cols": t.cols, "spacing": float(t.spacing)}


def _target_from(doc: _Doc, d, *keys) -> Target:
    d = _mapping(doc, d, *keys)
    try:
        return Target(
            _field(doc, d, "type", *keys),
            _int(doc, d.get("rows", 0), *keys, "rows"),
            _int(doc, d.get("cols", 0), *keys, "cols"),
            _num(doc, d.get("spacing", 0.0), *keys, "spacing"),
        )
    except ValueError as exc:
        doc.fail(SchemaError, str(exc), *keys)


def _size_from(doc: _Doc, value, *keys) -> tuple[int, int]:
    if not isinstance(value, list) or len(value) != 2:
        doc.fail(SchemaError, "image_size must be [width, height]", *keys)
    w, h = (_int(doc, v, *keys) for v in value)
    if w <= 0 or h <= 0:
        doc.fail(ValidationError, "image size must be positive", *keys)
    return w, h


def intrinsics_to_dict(K: CameraIntrinsics) -> dict:
    return {"model": K.model.value, "parameters": dict(zip(K.model.param_names, _floats(K.params())))}


def _intrinsics_from(doc: _Doc, d, *keys) -> CameraIntrinsics:
    d = _mapping(doc, d, *keys)
    try:
        model = CameraModel(_field(doc, d, "model", *keys))
    except ValueError:
        doc.fail(SchemaError, f"unknown camera model {d['model']!r}", *keys, "model")
    params = _mapping(doc, _field(doc, d, "parameters", *keys), *keys, "parameters")
    values = [_num(doc, _field(doc, params, name, *keys, "parameters"), *keys, "parameters", name) for name in model.param_names]
    try:
        return CameraIntrinsics.from_params(model, values)
    except ValueError as exc:
        doc.fail(ValidationError, str(exc), *keys)


def pose_to_dict(p: Pose, quaternion: bool = False) -> dict:
    d = {"rotation": [_floats(row) for row in p.rotation], "axis_angle": _floats(log_so3(p.rotation))}
    if quaternion:
        d["quaternion_wxyz"] = _floats(matrix_to_quaternion(p.rotation))
    d["translation"] = _floats(p.translation)
    return d


def _pose_from(doc: _Doc, d, *keys) -> Pose:
    d = _mapping(doc, d, *keys)
    rows = _field(doc, d, "rotation", *keys)
    if not isinstance(rows, list) or len(rows) != 3:
        doc.fail(SchemaError, "rotation must be a 3x3 matrix", *keys, "rotation")
    R = [_vec(doc, r, 3, *keys, "rotation", i) for i, r in enumerate(rows)]
    t = _vec(doc, _field(doc, d, "translation", *keys), 3, *keys, "translation")
    try:
        return Pose(np.array(R), np.array(t))
    except ValueError as exc:
        doc.fail(ValidationError, str(exc), *keys)


def housing_params(h: Housing) -> dict:
    if isinstance(h, FlatPort):
        return {"normal": list(h.normal), "distance": h.distance}
    return {"decentering": list(h.decentering)}


def housing_to_dict(h: Housing) -> dict:
    return {"port": "flat" if isinstance(h, FlatPort) else "dome", **housing_params(h), "constants": dict(h.constants)}


def _housing_from(doc: _Doc, port: str, params, constants, *keys) -> Housing:
    params = _mapping(doc, params, *keys)
    constants = _mapping(doc, constants, *keys)
    c = {k: _num(doc, v, *keys, k) for k, v in constants.items()}
    try:
        mu = (c.get("mu_a", 1.0), c.get("mu_g", 1.473), c.get("mu_w", 1.334))
        t = _field(doc, c, "t_glass", *keys)
        if port == "flat":
            n = _vec(doc, _field(doc, params, "normal", *keys), 3, *keys, "normal")
            return FlatPort(n, _num(doc, _field(doc, params, "distance", *keys), *keys, "distance"), t, *mu)
        if port == "dome":
            dec = _vec(doc, _field(doc, params, "decentering", *keys), 3, *keys, "decentering")
            return DomePort(dec, _field(doc, c, "r_dome", *keys), t, *mu)
    except ValueError as exc:
        doc.fail(ValidationError, str(exc), *keys)
    doc.fail(SchemaError, f"unknown port {port!r} (expected flat or dome)", *keys)


def _housing_doc(doc: _Doc, d, *keys) -> Housing:
    d = _mapping(doc, d, *keys)
    return _housing_from(doc, _field(doc, d, "port", *keys), d, _field(doc, d, "constants", *keys), *keys)


def _coverage_to_dict(c: CoverageGrid) -> dict:
    return {"grid_size": c.grid_size, "counts": [list(map(int, row)) for row in c.counts], "summary": c.summary}


def _coverage_from(doc: _Doc, d, *keys) -> CoverageGrid | None:
    if d is None:
        return None
    d = _mapping(doc, d, *keys)
    g = _int(doc, _field(doc, d, "grid_size", *keys), *keys, "grid_size")
    counts = _field(doc, d, "counts", *keys)
    if not isinstance(counts, list) or len(counts) != g or any(not isinstance(r, list) or len(r) != g for r in counts):
        doc.fail(SchemaError, f"coverage counts must be a {g}x{g} matrix", *keys, "counts")
    return CoverageGrid(g, tuple(tuple(_int(doc, v, *keys, "counts") for v in row) for row in counts))


def _float_dict(doc: _Doc, d, *keys) -> dict[str, float]:
    d = _mapping(doc, d if d is not None else {}, *keys)
    return {str(k): _num(doc, v, *keys, k) for k, v in d.items()}


# ---------------------------------------------------------------------------
# datasets


def _observations(view: View) -> list[list[float]]:
    return [_floats(np.concatenate([p, X])) for p, X in zip(view.pixels, view.points)]


def dataset_to_dict(data: ObservationDataset | StereoDataset) -> dict:
    out: dict[str, Any] = {"schema": SCHEMA_VERSION, "target": _target_to_dict(data.target)}
    if isinstance(data, StereoDataset):
        c1, c2 = data.cameras
        out["cameras"] = [c1, c2]
        out["image_size"] = {c1: list(data.image_size1), c2: list(data.image_size2)}
        out["views"] = [{"id": p.view_id, c1: _observations(p.cam1), c2: _observations(p.cam2)} for p in data.pairs]
        return out
    out["image_size"] = list(data.image_size)
    if data.housing is not None:
        out["housing"] = {"port": data.housing["port"], "constants": dict(data.housing["constants"])}
    out["views"] = [{"id": v.view_id, "observations": _observations(v)} for v in data.views]
    return out


def _view_from(doc: _Doc, vid: str, rows, *keys) -> View:
    if not isinstance(rows, list):
        doc.fail(SchemaError, "observations must be a list of [u, v, X, Y, Z] rows", *keys)
    arr = np.array([_vec(doc, r, 5, *keys, i) for i, r in enumerate(rows)], dtype=float).reshape(-1, 5)
    return View(vid, arr[:, :2], arr[:, 2:])


def _validate(doc: _Doc, data, *keys):
    try:
        data.validate()
    except ValidationError as exc:
        doc.fail(ValidationError, str(exc), *keys)


def _dataset_path(path) -> Path:
    path = Path(path)
    if path.is_dir():
        path = path / DATASET_FILE
        if not path.exists():
            raise InputError(f"no views found in {path.parent} (no {DATASET_FILE})")
    return path


def parse_dataset(doc: _Doc) -> ObservationDataset | StereoDataset:
    data = _check_schema(doc)
    target = _target_from(doc, _field(doc, data, "target"), "target")
    views = _field(doc, data, "views")
    if views is None:
        views = []
    if not isinstance(views, list):
        doc.fail(SchemaError, "views must be a list", "views")
    if not views:
        doc.fail(ValidationError, "no views found", "views")
    ids = []
    for i, v in enumerate(views):
        _mapping(doc, v, "views", i)
        ids.append(str(_field(doc, v, "id", "views", i)))
    for i, vid in enumerate(ids):
        if vid in ids[:i]:
            doc.fail(ValidationError, f"duplicate view id {vid!r}", "views", i)

    if "cameras" in data:
        cams = data["cameras"]
        if not isinstance(cams, list) or len(cams) != 2 or len(set(map(str, cams))) != 2:
            doc.fail(SchemaError, "cameras must list exactly two distinct names", "cameras")
        c1, c2 = map(str, cams)
        sizes = _mapping(doc, _field(doc, data, "image_size"), "image_size")
        s1 = _size_from(doc, _field(doc, sizes, c1, "image_size"), "image_size", c1)
        s2 = _size_from(doc, _field(doc, sizes, c2, "image_size"), "image_size", c2)
        pairs = []
        for i, (v, vid) in enumerate(zip(views, ids)):
            a = _view_from(doc, vid, _field(doc, v, c1, "views", i), "views", i, c1)
            b = _view_from(doc, vid, _field(doc, v, c2, "views", i), "views", i, c2)
            pairs.append(StereoPair(vid, a, b))
        out = StereoDataset(tuple(pairs), s1, s2, target, (c1, c2))
        for i, p in enumerate(pairs):
            _validate_views(doc, [p.cam1, p.cam2], target, i)
        _validate(doc, out, "views")
        return out

    size = _size_from(doc, _field(doc, data, "image_size"), "image_size")
    housing = None
    if data.get("housing") is not None:
        h = _mapping(doc, data["housing"], "housing")
        port = _field(doc, h, "port", "housing")
        if port not in ("flat", "dome"):
            doc.fail(SchemaError, f"unknown port {port!r}", "housing", "port")
        housing = {"port": port, "constants": _float_dict(doc, h.get("constants"), "housing", "constants")}
    vs = [_view_from(doc, vid, _field(doc, v, "observations", "views", i), "views", i, "observations") for i, (v, vid) in enumerate(zip(views, ids))]
    for i, v in enumerate(vs):
        _validate_views(doc, [v], target, i)
    out = ObservationDataset(tuple(vs), size, target, housing)
    _validate(doc, out, "views")
    return out


def _validate_views(doc: _Doc, views, target, i):
    for v in views:
        try:
            validate_view(v, target)
        except ValidationError as exc:
            doc.fail(ValidationError, str(exc), "views", i)


def load_any_dataset(path) -> ObservationDataset | StereoDataset:
    """Load a dataset directory (or manifest file) of either kind."""
    return parse_dataset(_read(_dataset_path(path)))


def load_dataset(path) -> ObservationDataset:
    """Load a single-camera dataset.

    Raises:
        ParseError: malformed YAML.
        SchemaError: unknown schema version, missing or mistyped fields.
        ValidationError: dataset invariants broken (fewer than 4 points in a
            view, duplicate ids, off-grid checkerboard points, ...).
    """
    data = load_any_dataset(path)
    if isinstance(data, StereoDataset):
        raise SchemaError(f"{path}: this is a stereo dataset; use calibrate-stereo")
    return data


def load_stereo_dataset(path) -> StereoDataset:
    data = load_any_dataset(path)
    if not isinstance(data, StereoDataset):
        raise SchemaError(f"{path}: not a stereo dataset (no 'cameras' field)")
    return data


def save_dataset(data: ObservationDataset | StereoDataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / DATASET_FILE
    _write(path, dataset_to_dict(data))
    return path


# ---------------------------------------------------------------------------
# reports


def _camera_section(r: CalibrationReport) -> dict:
    d = intrinsics_to_dict(r.intrinsics)
    d["image_size"] = list(r.image_size)
    d["stddev"] = {k: float(v) for k, v in r.stddev.items()}
    d["rms"] = float(r.rms)
    d["views"] = [
        {"id": vid, "rms": float(rms), "pose": pose_to_dict(p)} for vid, rms, p in zip(r.view_ids, r.per_view_rms, r.poses)
    ]
    d["coverage"] = _coverage_to_dict(r.coverage) if r.coverage is not None else None
    return d


def _housing_section(h: HousingSection) -> dict:
    return {
        "port": h.port,
        "estimate": housing_params(h.estimate),
        "constants": dict(h.estimate.constants),
        "initial": housing_params(h.initial),
        "reference": housing_params(h.reference) if h.reference is not None else None,
        "stddev": {k: float(v) for k, v in h.stddev.items()},
        "virtual_rms": float(h.virtual_rms),
        "metrics": {k: float(v) for k, v in h.metrics.items()},
    }


def _stereo_section(s: StereoSection) -> dict:
    cam2 = intrinsics_to_dict(s.intrinsics2)
    cam2["image_size"] = list(s.image_size2)
    cam2["stddev"] = {k: float(v) for k, v in s.stddev2.items()}
    cam2["coverage"] = _coverage_to_dict(s.coverage2) if s.coverage2 is not None else None
    return {
        "relative_pose": pose_to_dict(s.relative_pose, quaternion=True),
        "initial_relative_pose": pose_to_dict(s.initial_relative_pose, quaternion=True),
        "stddev": {k: float(v) for k, v in s.stddev.items()},
        "camera2": cam2,
        "refine_intrinsics": bool(s.refine_intrinsics),
        "rms_cam1": float(s.rms_cam1),
        "rms_cam2": float(s.rms_cam2),
        "dropped_pairs": list(s.dropped_pairs),
    }


def report_to_dict(r: CalibrationReport) -> dict:
    meta = {"tool": "refcal", "version": __version__}
    meta.update(r.metadata)
    return {
        "schema": SCHEMA_VERSION,
        "metadata": meta,
        "camera": _camera_section(r),
        "housing": _housing_section(r.housing) if r.housing is not None else None,
        "stereo": _stereo_section(r.stereo) if r.stereo is not None else None,
    }


def dumps_report(r: CalibrationReport) -> str:
    return _dump(report_to_dict(r))


def save_report(r: CalibrationReport, path) -> None:
    Path(path).write_text(dumps_report(r), encoding="utf-8")


def _parse_housing_section(doc: _Doc, h) -> HousingSection:
    keys = ("housing",)
    h = _mapping(doc, h, *keys)
    port = _field(doc, h, "port", *keys)
    constants = _field(doc, h, "constants", *keys)
    est = _housing_from(doc, port, _field(doc, h, "estimate", *keys), constants, *keys, "estimate")
    init = _housing_from(doc, port, _field(doc, h, "initial", *keys), constants, *keys, "initial")
    ref = h.get("reference")
    ref = _housing_from(doc, port, ref, constants, *keys, "reference") if ref is not None else None
    return HousingSection(
        port=port,
        estimate=est,
        initial=init,
        stddev=_float_dict(doc, h.get("stddev"), *keys, "stddev"),
        virtual_rms=_num(doc, h.get("virtual_rms", 0.0), *keys, "virtual_rms"),
        metrics=_float_dict(doc, h.get("metrics"), *keys, "metrics"),
        reference=ref,
    )


def _parse_stereo_section(doc: _Doc, s) -> StereoSection:
    keys = ("stereo",)
    s = _mapping(doc, s, *keys)
    cam2 = _mapping(doc, _field(doc, s, "camera2", *keys), *keys, "camera2")
    dropped = s.get("dropped_pairs") or []
    return StereoSection(
        relative_pose=_pose_from(doc, _field(doc, s, "relative_pose", *keys), *keys, "relative_pose"),
        initial_relative_pose=_pose_from(doc, _field(doc, s, "initial_relative_pose", *keys), *keys, "initial_relative_pose"),
        intrinsics2=_intrinsics_from(doc, cam2, *keys, "camera2"),
        refine_intrinsics=bool(s.get("refine_intrinsics", False)),
        rms_cam1=_num(doc, _field(doc, s, "rms_cam1", *keys), *keys, "rms_cam1"),
        rms_cam2=_num(doc, _field(doc, s, "rms_cam2", *keys), *keys, "rms_cam2"),
        stddev=_float_dict(doc, s.get("stddev"), *keys, "stddev"),
        stddev2=_float_dict(doc, cam2.get("stddev"), *keys, "camera2", "stddev"),
        image_size2=_size_from(doc, _field(doc, cam2, "image_size", *keys, "camera2"), *keys, "camera2", "image_size"),
        coverage2=_coverage_from(doc, cam2.get("coverage"), *keys, "camera2", "coverage"),
        dropped_pairs=tuple(str(v) for v in dropped),
    )


def parse_report(doc: _Doc) -> CalibrationReport:
    data = _check_schema(doc)
    cam = _mapping(doc, _field(doc, data, "camera"), "camera")
    views = _field(doc, cam, "views", "camera")
    if not isinstance(views, list):
        doc.fail(SchemaError, "camera.views must be a list", "camera", "views")
    ids, rms, poses = [], [], []
    for i, v in enumerate(views):
        k = ("camera", "views", i)
        v = _mapping(doc, v, *k)
        ids.append(str(_field(doc, v, "id", *k)))
        rms.append(_num(doc, _field(doc, v, "rms", *k), *k, "rms"))
        poses.append(_pose_from(doc, _field(doc, v, "pose", *k), *k, "pose"))
    meta = data.get("metadata") or {}
    meta = {k: v for k, v in _mapping(doc, meta, "metadata").items() if k not in ("tool", "version")}
    return CalibrationReport(
        intrinsics=_intrinsics_from(doc, cam, "camera"),
        view_ids=tuple(ids),
        poses=tuple(poses),
        rms=_num(doc, _field(doc, cam, "rms", "camera"), "camera", "rms"),
        per_view_rms=tuple(rms),
        stddev=_float_dict(doc, cam.get("stddev"), "camera", "stddev"),
        image_size=_size_from(doc, _field(doc, cam, "image_size", "camera"), "camera", "image_size"),
        coverage=_coverage_from(doc, cam.get("coverage"), "camera", "coverage"),
        housing=_parse_housing_section(doc, data["housing"]) if data.get("housing") is not None else None,
        stereo=_parse_stereo_section(doc, data["stereo"]) if data.get("stereo") is not None else None,
        metadata=meta,
    )


def loads_report(text: str, name: str = "<report>") -> CalibrationReport:
    return parse_report(_parse_text(text, name))


def load_report(path) -> CalibrationReport:
    return parse_report(_read(path))


def load_intrinsics(path, camera: int = 1) -> CameraIntrinsics:
    """Intrinsics from a report or truth file.

    ``camera=2`` reads the second camera of a stereo file and falls back to
    the main camera section for single-camera files.
    """
    doc = _read(path)
    data = _check_schema(doc)
    if camera == 2 and data.get("stereo") is not None:
        stereo = _mapping(doc, _field(doc, data, "stereo"), "stereo")
        return _intrinsics_from(doc, _field(doc, stereo, "camera2", "stereo"), "stereo", "camera2")
    return _intrinsics_from(doc, _field(doc, data, "camera"), "camera")


# ---------------------------------------------------------------------------
# scenarios and ground truth


def scenario_to_dict(spec) -> dict:
    s = spec.sampler
    d: dict[str, Any] = {
        "schema": SCHEMA_VERSION,
        "scenario": {
            "name": spec.name,
            "seed": int(spec.seed),
            "n_views": int(spec.n_views),
            "noise_sigma": float(spec.noise_sigma),
            "published_values": bool(spec.published_values),
            "sampler": {
                "distance_range": _floats(s.distance_range),
                "max_tilt_deg": float(s.max_tilt_deg),
                "max_offaxis_deg": float(s.max_offaxis_deg),
                "margin_px": float(s.margin_px),
            },
        },
        "target": _target_to_dict(spec.target),
        "camera": {**intrinsics_to_dict(spec.camera), "image_size": list(spec.image_size)},
        "housing": housing_to_dict(spec.housing) if spec.housing is not None else None,
    }
    if spec.stereo is not None:
        cam2 = {**intrinsics_to_dict(spec.stereo.camera2), "image_size": list(spec.stereo.image_size2)}
        d["stereo"] = {"relative_pose": pose_to_dict(spec.stereo.relative_pose, quaternion=True), "camera2": cam2}
    else:
        d["stereo"] = None
    return d


def truth_to_dict(truth) -> dict:
    d = scenario_to_dict(truth.spec)
    prefix = "pair" if truth.spec.stereo is not None else "view"
    d["poses"] = [{"id": f"{prefix}_{i:03d}", **pose_to_dict(p)} for i, p in enumerate(truth.poses)]
    return d


def save_truth(truth, path) -> None:
    _write(path, truth_to_dict(truth))


def parse_scenario(doc: _Doc, overrides: dict | None = None):
    from refcal.synthetic import PoseSampler, ScenarioSpec, StereoRig

    data = _check_schema(doc)
    sc = _mapping(doc, _field(doc, data, "scenario"), "scenario")
    cam = _mapping(doc, _field(doc, data, "camera"), "camera")
    kw: dict[str, Any] = {}
    if "sampler" in sc:
        smp = _mapping(doc, sc["sampler"], "scenario", "sampler")
        try:
            kw["sampler"] = PoseSampler(
                tuple(_vec(doc, smp.get("distance_range", [0.25, 0.5]), 2, "scenario", "sampler", "distance_range")),
                _num(doc, smp.get("max_tilt_deg", 50.0), "scenario", "sampler", "max_tilt_deg"),
                _num(doc, smp.get("max_offaxis_deg", 25.0), "scenario", "sampler", "max_offaxis_deg"),
                _num(doc, smp.get("margin_px", 5.0), "scenario", "sampler", "margin_px"),
            )
        except ValueError as exc:
            doc.fail(ValidationError, str(exc), "scenario", "sampler")
    housing = _housing_doc(doc, data["housing"], "housing") if data.get("housing") is not None else None
    stereo = None
    if data.get("stereo") is not None:
        st = _mapping(doc, data["stereo"], "stereo")
        cam2 = _mapping(doc, _field(doc, st, "camera2", "stereo"), "stereo", "camera2")
        stereo = StereoRig(
            _pose_from(doc, _field(doc, st, "relative_pose", "stereo"), "stereo", "relative_pose"),
            _intrinsics_from(doc, cam2, "stereo", "camera2"),
            _size_from(doc, _field(doc, cam2, "image_size", "stereo", "camera2"), "stereo", "camera2", "image_size"),
        )
    values = {
        "name": str(sc.get("name", Path(doc.path).stem)),
        "seed": _int(doc, _field(doc, sc, "seed", "scenario"), "scenario", "seed"),
        "n_views": _int(doc, _field(doc, sc, "n_views", "scenario"), "scenario", "n_views"),
        "noise_sigma": _num(doc, sc.get("noise_sigma", 0.0), "scenario", "noise_sigma"),
        "published_values": bool(sc.get("published_values", False)),
    }
    values.update(overrides or {})
    try:
        return ScenarioSpec(
            camera=_intrinsics_from(doc, cam, "camera"),
            image_size=_size_from(doc, _field(doc, cam, "image_size", "camera"), "camera", "image_size"),
            target=_target_from(doc, _field(doc, data, "target"), "target"),
            housing=housing,
            stereo=stereo,
            **values,
            **kw,
        )
    except ValueError as exc:
        doc.fail(ValidationError, str(exc), "scenario")


def load_scenario(path, **overrides):
    """Scenario spec from a spec file (or a truth sidecar, whose poses are ignored)."""
    return parse_scenario(_read(path), overrides)


def load_truth(path):
    from refcal.synthetic import GroundTruth

    doc = _read(path)
    spec = parse_scenario(doc)
    poses = doc.data.get("poses") or []
    if not isinstance(poses, list):
        doc.fail(SchemaError, "poses must be a list", "poses")
    return GroundTruth(spec, tuple(_pose_from(doc, p, "poses", i) for i, p in enumerate(poses)))
