import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refcal.calib.report import CalibrationReport, CoverageGrid, HousingSection, StereoSection
from refcal.errors import InputError, ParseError, SchemaError, ValidationError
from refcal.geometry.camera import CameraIntrinsics, CameraModel, Pose
from refcal.geometry.housing import DomePort, FlatPort
from refcal.geometry.rotation import exp_so3
from refcal.io import (
    dumps_report,
    load_any_dataset,
    load_dataset,
    load_intrinsics,
    load_report,
    load_stereo_dataset,
    load_truth,
    loads_report,
    save_dataset,
    save_report,
    save_truth,
)

MINIMAL = """\
schema: 1
target: {type: checkerboard, rows: 2, cols: 2, spacing: 0.02}
image_size: [640, 480]
views:
  - id: a
    observations:
      - [100.0, 100.0, 0.0, 0.0, 0.0]
      - [200.0, 100.0, 0.02, 0.0, 0.0]
      - [100.0, 200.0, 0.0, 0.02, 0.0]
      - [200.0, 200.0, 0.02, 0.02, 0.0]
"""


def write(tmp_path, text, name="dataset.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def line_of(text, needle):
    return next(i for i, line in enumerate(text.splitlines(), 1) if needle in line)


def test_minimal_dataset(tmp_path):
    data = load_dataset(write(tmp_path, MINIMAL))
    assert len(data.views) == 1
    assert data.views[0].view_id == "a"
    assert data.image_size == (640, 480)
    assert data.n_observations == 4


def test_directory_is_accepted(tmp_path):
    write(tmp_path, MINIMAL)
    assert load_dataset(tmp_path).n_observations == 4


def test_three_observations_rejected(tmp_path):
    text = MINIMAL.replace("      - [200.0, 200.0, 0.02, 0.02, 0.0]\n", "")
    with pytest.raises(ValidationError, match="need at least 4"):
        load_dataset(write(tmp_path, text))


def test_empty_directory(tmp_path):
    with pytest.raises(InputError, match="no views found"):
        load_dataset(tmp_path)


def test_empty_view_list(tmp_path):
    text = MINIMAL.split("views:")[0] + "views: []\n"
    with pytest.raises(ValidationError, match="no views found"):
        load_dataset(write(tmp_path, text))


def test_malformed_yaml_has_line(tmp_path):
    text = MINIMAL.replace("image_size: [640, 480]", "image_size: [640, 480")
    with pytest.raises(ParseError, match=r"dataset\.yaml:\d+: malformed YAML"):
        load_dataset(write(tmp_path, text))


def test_unknown_schema_version(tmp_path):
    text = MINIMAL.replace("schema: 1", "schema: 7")
    with pytest.raises(SchemaError, match=r"dataset\.yaml:1: unsupported schema version 7"):
        load_dataset(write(tmp_path, text))


def test_missing_field_reported(tmp_path):
    text = MINIMAL.replace("image_size: [640, 480]\n", "")
    with pytest.raises(SchemaError, match="missing field 'image_size'"):
        load_dataset(write(tmp_path, text))


def test_bad_value_points_at_its_line(tmp_path):
    text = MINIMAL.replace("[100.0, 200.0, 0.0, 0.02, 0.0]", "[100.0, oops, 0.0, 0.02, 0.0]")
    with pytest.raises(SchemaError, match=rf"dataset\.yaml:{line_of(text, 'oops')}: expected a number"):
        load_dataset(write(tmp_path, text))


def test_off_grid_point_rejected_with_line(tmp_path):
    text = MINIMAL.replace("[200.0, 200.0, 0.02, 0.02, 0.0]", "[200.0, 200.0, 0.02, 0.02, 0.1]")
    with pytest.raises(ValidationError, match=rf"dataset\.yaml:{line_of(text, '- id: a')}:.*Z = 0"):
        load_dataset(write(tmp_path, text))


def test_duplicate_ids(tmp_path):
    view = MINIMAL.split("views:\n")[1]
    with pytest.raises(ValidationError, match="duplicate view id 'a'"):
        load_dataset(write(tmp_path, MINIMAL + view))


def test_missing_file():
    with pytest.raises(InputError, match="file not found"):
        load_report("/nonexistent/report.yaml")


@pytest.mark.parametrize("name", ["air_table1", "flat_table1", "dome_table1"])
def test_dataset_round_trip(tmp_path, generated, name):
    data, truth = generated(name, 0, 0.5)
    save_dataset(data, tmp_path)
    assert load_dataset(tmp_path) == data
    save_truth(truth, tmp_path / "truth.yaml")
    back = load_truth(tmp_path / "truth.yaml")
    assert back.spec == truth.spec
    assert back.poses == truth.poses


def test_stereo_round_trip(tmp_path, generated):
    data, truth = generated("stereo_table1", 0, 0.5)
    save_dataset(data, tmp_path)
    assert load_stereo_dataset(tmp_path) == data
    with pytest.raises(SchemaError, match="stereo"):
        load_dataset(tmp_path)
    save_truth(truth, tmp_path / "truth.yaml")
    assert load_truth(tmp_path / "truth.yaml").spec == truth.spec


def test_single_dataset_is_not_stereo(tmp_path):
    write(tmp_path, MINIMAL)
    assert not hasattr(load_any_dataset(tmp_path), "pairs")
    with pytest.raises(SchemaError, match="not a stereo dataset"):
        load_stereo_dataset(tmp_path)


def test_floats_round_trip_bit_exact(tmp_path):
    awkward = [0.1, 1 / 3, math.pi, 5e-324, 1.7976931348623157e308, -0.0, 2.0**-1074 * 3]
    rows = "".join(f"      - [{v!r}, 1.0, {0.02 * i!r}, 0.0, 0.0]\n" for i, v in enumerate(awkward))
    text = MINIMAL.split("    observations:\n")[0] + "    observations:\n" + rows
    text = text.replace("rows: 2, cols: 2", "rows: 1, cols: 7")
    data = load_dataset(write(tmp_path, text))
    save_dataset(data, tmp_path / "out")
    again = load_dataset(tmp_path / "out")
    assert again.views[0].pixels[:, 0].tobytes() == np.array(awkward).tobytes()


# ---------------------------------------------------------------------------
# reports

finite = st.floats(allow_nan=False, allow_infinity=False)
positive = st.floats(min_value=1e-6, max_value=1e6)
ident = st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=0x2FF, blacklist_categories=("Cs",)), max_size=12)


@st.composite
def poses(draw):
    rv = np.array(draw(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3)))
    t = np.array(draw(st.lists(finite, min_size=3, max_size=3)))
    return Pose(exp_so3(rv), t)


@st.composite
def intrinsics(draw):
    model = draw(st.sampled_from(list(CameraModel)))
    params = [draw(positive) for _ in range(len(model.param_names) - model.n_distortion)]
    params += [draw(st.floats(-1.0, 1.0)) for _ in range(model.n_distortion)]
    return CameraIntrinsics.from_params(model, params)


@st.composite
def coverage_grids(draw):
    g = draw(st.integers(1, 4))
    return CoverageGrid(g, tuple(tuple(draw(st.integers(0, 10**6)) for _ in range(g)) for _ in range(g)))


@st.composite
def housings(draw, port, like=None):
    # a report stores one constants block, shared by estimate, initial and reference
    if like is not None:
        t, mu = like.thickness, (like.mu_a, like.mu_g, like.mu_w)
    else:
        t, mu = draw(st.floats(0.001, 0.02)), (1.0, draw(st.floats(1.3, 1.8)), draw(st.floats(1.0, 1.4)))
    if port == "flat":
        n = (draw(st.floats(-1, 1)), draw(st.floats(-1, 1)), draw(st.floats(0.1, 1)))
        return FlatPort(tuple(n), draw(st.floats(0.0, 0.1)), t, *mu)
    return DomePort(tuple(draw(st.lists(st.floats(-0.01, 0.01), min_size=3, max_size=3))), 0.05, t, *mu)


float_dicts = st.dictionaries(ident, finite, max_size=4)


@st.composite
def reports(draw):
    n = draw(st.integers(0, 4))
    housing = stereo = None
    kind = draw(st.sampled_from(["camera", "flat", "dome", "stereo"]))
    if kind in ("flat", "dome"):
        est = draw(housings(kind))
        init = draw(housings(kind, like=est))
        housing = HousingSection(
            kind,
            est,
            init,
            draw(float_dicts),
            draw(finite),
            draw(float_dicts),
            draw(st.none() | housings(kind, like=est)),
        )
    if kind == "stereo":
        stereo = StereoSection(
            draw(poses()),
            draw(poses()),
            draw(intrinsics()),
            draw(st.booleans()),
            draw(finite),
            draw(finite),
            draw(float_dicts),
            draw(float_dicts),
            (draw(st.integers(1, 10**5)), draw(st.integers(1, 10**5))),
            draw(st.none() | coverage_grids()),
            tuple(draw(st.lists(ident, max_size=3))),
        )
    return CalibrationReport(
        intrinsics=draw(intrinsics()),
        view_ids=tuple(draw(st.lists(ident, min_size=n, max_size=n))),
        poses=tuple(draw(poses()) for _ in range(n)),
        rms=draw(finite),
        per_view_rms=tuple(draw(finite) for _ in range(n)),
        stddev=draw(float_dicts),
        image_size=(draw(st.integers(1, 10**5)), draw(st.integers(1, 10**5))),
        coverage=draw(st.none() | coverage_grids()),
        housing=housing,
        stereo=stereo,
        metadata=draw(st.dictionaries(ident.filter(lambda k: k not in ("tool", "version")), st.integers() | ident, max_size=3)),
    )


@settings(max_examples=200, deadline=None)
@given(reports())
def test_report_round_trip_fuzz(report):
    assert loads_report(dumps_report(report)) == report


def test_report_file_round_trip(tmp_path, generated):
    from refcal.calib.camera import calibrate_camera

    data, _ = generated("air_table1", 0, 0.5)
    rep = calibrate_camera(data)
    save_report(rep, tmp_path / "rep.yaml")
    assert load_report(tmp_path / "rep.yaml") == rep
    assert load_intrinsics(tmp_path / "rep.yaml") == rep.intrinsics
    # single-camera files serve both cameras
    assert load_intrinsics(tmp_path / "rep.yaml", camera=2) == rep.intrinsics


def test_report_is_deterministic(generated):
    from refcal.calib.camera import calibrate_camera

    data, _ = generated("air_table1", 0, 0.5)
    assert dumps_report(calibrate_camera(data)) == dumps_report(calibrate_camera(data))


def test_report_schema_error_has_line():
    text = "schema: 1\ncamera:\n  model: Fisheye\n  parameters: {}\n  views: []\n"
    with pytest.raises(SchemaError, match=r"<report>:3: unknown camera model"):
        loads_report(text)
