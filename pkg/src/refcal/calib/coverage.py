"""Feature coverage heat-map over the image plane."""

from __future__ import annotations

import numpy as np

from refcal.calib.dataset import ObservationDataset
from refcal.calib.report import CoverageGrid


def coverage_counts(pixels: np.ndarray, image_size: tuple[int, int], grid_size: int = 10) -> CoverageGrid:
    w, h = image_size
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    u, v = pixels[:, 0], pixels[:, 1]
    inside = (u >= 0) & (u <= w) & (v >= 0) & (v <= h)
    # u == w (or v == h) belongs to the last cell
    j = np.minimum(np.floor(u[inside] * grid_size / w).astype(int), grid_size - 1)
    i = np.minimum(np.floor(v[inside] * grid_size / h).astype(int), grid_size - 1)
    counts = np.zeros((grid_size, grid_size), dtype=int)
    np.add.at(counts, (i, j), 1)
    return CoverageGrid(grid_size, tuple(tuple(int(c) for c in row) for row in counts))


def coverage(data: ObservationDataset, grid_size: int = 10) -> CoverageGrid:
    """Count observations per image cell; pixels outside the image are ignored."""
    if grid_size < 1:
        raise ValueError("grid size must be positive")
    return coverage_counts(data.all_pixels(), data.image_size, grid_size)
