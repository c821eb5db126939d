"""PNG figures for calibration reports (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from refcal.calib.report import CalibrationReport, CoverageGrid  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_coverage(grid: CoverageGrid, path: Path, title: str = "feature coverage") -> Path:
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(grid.array, cmap="viridis", interpolation="nearest")
    fig.colorbar(im, ax=ax, label="observations")
    ax.set(title=title, xlabel="column band", ylabel="row band")
    return _save(fig, path)


def plot_view_rms(report: CalibrationReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(max(5, 0.25 * len(report.view_ids)), 3.5))
    ax.bar(range(len(report.per_view_rms)), report.per_view_rms, color="tab:blue")
    ax.axhline(report.rms, color="tab:red", linestyle="--", label=f"overall {report.rms:.3f} px")
    ax.set_xticks(range(len(report.view_ids)), report.view_ids, rotation=90, fontsize=7)
    ax.set(ylabel="RMS [px]", title="per-view reprojection error")
    ax.legend()
    return _save(fig, path)


def plot_errors(errors: dict[str, float], path: Path) -> Path:
    """Horizontal log-scale bars of absolute errors against truth."""
    labels = list(errors)
    values = [max(errors[k], 1e-16) for k in labels]
    fig, ax = plt.subplots(figsize=(6, 0.35 * len(labels) + 1.2))
    ax.barh(labels, values, color="tab:orange")
    ax.set_xscale("log")
    ax.invert_yaxis()
    ax.set(xlabel="absolute error", title="estimate vs truth")
    return _save(fig, path)


def write_figures(report: CalibrationReport, directory, errors: dict[str, float] | None = None) -> list[Path]:
    """Write every applicable figure into ``directory`` and return the paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if report.coverage is not None:
        paths.append(plot_coverage(report.coverage, out / "coverage.png"))
    if report.stereo is not None and report.stereo.coverage2 is not None:
        paths.append(plot_coverage(report.stereo.coverage2, out / "coverage_cam2.png", "feature coverage, camera 2"))
    paths.append(plot_view_rms(report, out / "view_rms.png"))
    if errors:
        paths.append(plot_errors(errors, out / "errors.png"))
    return paths
