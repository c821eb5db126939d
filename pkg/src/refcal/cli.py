"""Command-line front end.

Exit codes: 0 on success, 1 for user errors (bad arguments, unreadable or
invalid input files), 2 when a calibration fails to converge or hits a
degenerate configuration.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from refcal import __version__, io
from refcal.calib.camera import calibrate_camera
from refcal.calib.housing import HousingEstimationConfig, calibrate_housing
from refcal.calib.stereo import calibrate_stereo, stereo_report
from refcal.compare import compare_tables, error_metrics
from refcal.errors import CalibError, InputError, NumericalError
from refcal.geometry.camera import CameraModel
from refcal.geometry.housing import DomePort, FlatPort
from refcal.synthetic import PRESETS, generate_dataset, preset

logger = logging.getLogger("refcal")

MIN_RECOMMENDED_VIEWS = 5
SEED_ENV = "CALIB_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _model(value: str) -> CameraModel:
    for m in CameraModel:
        if value.lower() in (m.value.lower(), m.name.lower()):
            return m
    raise argparse.ArgumentTypeError(f"unknown model {value!r}; choose from {', '.join(m.value for m in CameraModel)}")


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="refcal", description="Refractive camera, housing and stereo calibration.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeat for debug)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    grid = dict(type=_positive_int, default=10, help="coverage grid size (default 10)")
    model = dict(type=_model, default=CameraModel.RADIAL, help="intrinsics model (default Radial)")

    c = sub.add_parser("calibrate-camera", help="intrinsics, distortion and poses from in-air views")
    c.add_argument("dataset", type=Path)
    c.add_argument("-o", "--output", type=Path, required=True)
    c.add_argument("--model", **model)
    c.add_argument("--grid", **grid)

    h = sub.add_parser("calibrate-housing", help="flat or dome port parameters with fixed intrinsics")
    h.add_argument("dataset", type=Path)
    h.add_argument("-o", "--output", type=Path, required=True)
    h.add_argument("--port", choices=("flat", "dome"), required=True)
    h.add_argument("--intrinsics", type=Path, required=True, help="report or truth file holding the camera")
    h.add_argument("--init-normal", type=float, nargs=3, default=(0.0, 0.0, 1.0), metavar=("X", "Y", "Z"))
    h.add_argument("--init-distance", type=float, help="initial interface distance in m (flat port)")
    h.add_argument("--init-decentering", type=float, nargs=3, default=(0.0, 0.0, 0.0), metavar=("X", "Y", "Z"))
    h.add_argument("--t-glass", type=float, help="glass thickness in m")
    h.add_argument("--r-dome", type=float, help="outer dome radius in m")
    h.add_argument("--mu", type=float, nargs=3, metavar=("AIR", "GLASS", "WATER"), help="refractive indices")
    h.add_argument("--reference", type=Path, help="truth file; adds error metrics to the report")
    h.add_argument("--no-refine", action="store_true", help="stop after the virtual camera stage")
    h.add_argument("--grid", **grid)

    s = sub.add_parser("calibrate-stereo", help="relative pose of a two-camera rig")
    s.add_argument("dataset", type=Path)
    s.add_argument("-o", "--output", type=Path, required=True)
    s.add_argument("--intrinsics1", type=Path)
    s.add_argument("--intrinsics2", type=Path, help="defaults to --intrinsics1's second camera, if any")
    s.add_argument("--fix-intrinsics", action="store_true", help="keep both cameras' intrinsics constant")
    s.add_argument("--model", **model)
    s.add_argument("--grid", **grid)

    g = sub.add_parser("generate", help="synthetic dataset plus ground-truth sidecar")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=PRESETS)
    src.add_argument("--spec", type=Path, help="scenario file (a truth sidecar works too)")
    g.add_argument("--seed", type=int, help=f"RNG seed; {SEED_ENV} overrides it")
    g.add_argument("--noise", type=float, help="pixel noise sigma (preset default 0.5)")
    g.add_argument("--views", type=_positive_int, help="number of views")
    g.add_argument("-o", "--output", type=Path, required=True)

    r = sub.add_parser("report", help="print a report, optionally against ground truth")
    r.add_argument("report", type=Path)
    r.add_argument("--compare", type=Path, metavar="TRUTH", help="truth sidecar to compare against")
    r.add_argument("--figures", type=Path, metavar="DIR", help="also write PNG figures into DIR")
    return p


def _save(report, path: Path) -> None:
    io.save_report(report, path)
    print(f"wrote {path} (RMS {report.rms:.4f} px over {len(report.view_ids)} views)")


def _calibrate_camera(args) -> int:
    data = io.load_dataset(args.dataset)
    if len(data.views) < MIN_RECOMMENDED_VIEWS:
        logger.warning("only %d views; at least %d are recommended", len(data.views), MIN_RECOMMENDED_VIEWS)
    report = calibrate_camera(data, args.model, grid_size=args.grid)
    _save(report, args.output)
    return 0


def _housing_constants(args, data) -> dict[str, float]:
    meta = data.housing or {}
    if meta and meta.get("port") != args.port:
        raise InputError(f"dataset was recorded behind a {meta.get('port')} port, not {args.port}")
    consts = dict(meta.get("constants", {}))
    if args.t_glass is not None:
        consts["t_glass"] = args.t_glass
    if args.r_dome is not None:
        consts["r_dome"] = args.r_dome
    if args.mu is not None:
        consts.update(zip(("mu_a", "mu_g", "mu_w"), args.mu))
    needed = ["t_glass"] + (["r_dome"] if args.port == "dome" else [])
    missing = [k for k in needed if k not in consts]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise InputError(f"housing constants unknown; pass {flags}")
    return consts


def _calibrate_housing(args) -> int:
    data = io.load_dataset(args.dataset)
    K = io.load_intrinsics(args.intrinsics)
    c = _housing_constants(args, data)
    mu = {k: c[k] for k in ("mu_a", "mu_g", "mu_w") if k in c}
    try:
        if args.port == "flat":
            if args.init_distance is None:
                raise InputError("--init-distance is required for a flat port")
            initial = FlatPort(tuple(args.init_normal), args.init_distance, c["t_glass"], **mu)
        else:
            initial = DomePort(tuple(args.init_decentering), c["r_dome"], c["t_glass"], **mu)
    except ValueError as exc:
        raise InputError(f"invalid housing: {exc}") from exc
    reference = None
    if args.reference is not None:
        reference = io.load_truth(args.reference).spec.housing
        if not isinstance(reference, type(initial)):
            raise InputError(f"{args.reference} holds no {args.port} port")
    cfg = HousingEstimationConfig(initial, refine_reprojection=not args.no_refine)
    report = calibrate_housing(data, K, cfg, reference, args.grid)
    _save(report, args.output)
    return 0


def _calibrate_stereo(args) -> int:
    data = io.load_stereo_dataset(args.dataset)
    K1 = io.load_intrinsics(args.intrinsics1) if args.intrinsics1 else None
    if args.intrinsics2:
        K2 = io.load_intrinsics(args.intrinsics2)
    elif args.intrinsics1:
        K2 = io.load_intrinsics(args.intrinsics1, camera=2)
    else:
        K2 = None
    result = calibrate_stereo(data, K1, K2, refine_intrinsics=not args.fix_intrinsics, model=args.model)
    _save(stereo_report(result, data, args.grid), args.output)
    return 0


def _generate(args) -> int:
    seed = args.seed
    if os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise InputError(f"{SEED_ENV} must be an integer") from exc
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if args.noise is not None:
        overrides["noise_sigma"] = args.noise
    if args.views is not None:
        overrides["n_views"] = args.views
    try:
        if args.preset:
            spec = replace(preset(args.preset), **overrides)
        else:
            spec = io.load_scenario(args.spec, **overrides)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    data, truth = generate_dataset(spec)
    path = io.save_dataset(data, args.output)
    io.save_truth(truth, args.output / io.TRUTH_FILE)
    print(f"wrote {path} and {args.output / io.TRUTH_FILE} ({spec.n_views} views, seed {spec.seed})")
    return 0


def _report(args) -> int:
    report = io.load_report(args.report)
    truth = io.load_truth(args.compare) if args.compare else None
    if truth is not None:
        if (report.housing is None) != (truth.spec.housing is None) or (
            report.housing is not None and type(report.housing.estimate) is not type(truth.spec.housing)
        ):
            raise InputError(f"{args.compare} does not describe the same housing as {args.report}")
        if report.stereo is not None and truth.spec.stereo is None:
            raise InputError(f"{args.compare} has no stereo rig")
    meta = report.metadata
    print(f"command\t{meta.get('command', '')}")
    print(f"views\t{len(report.view_ids)}")
    print(f"rms_px\t{report.rms:.6g}")
    if report.stereo is not None:
        print(f"rms_cam1_px\t{report.stereo.rms_cam1:.6g}\nrms_cam2_px\t{report.stereo.rms_cam2:.6g}")
    tables = compare_tables(report, truth)
    for t in tables:
        print()
        print(t.format())
    if report.coverage is not None:
        print("\n# coverage")
        print(report.coverage.render())
    if args.figures is not None:
        from refcal.plotting import write_figures

        errors = error_metrics(tables) if truth is not None else None
        for path in write_figures(report, args.figures, errors):
            print(f"wrote {path}", file=sys.stderr)
    return 0


COMMANDS = {
    "calibrate-camera": _calibrate_camera,
    "calibrate-housing": _calibrate_housing,
    "calibrate-stereo": _calibrate_stereo,
    "generate": _generate,
    "report": _report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"refcal: error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"refcal: calibration failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except CalibError as exc:
        print(f"refcal: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"refcal: error: {exc}", file=sys.stderr)
        return 1
    except np.linalg.LinAlgError as exc:
        print(f"refcal: calibration failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
