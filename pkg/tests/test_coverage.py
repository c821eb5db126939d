import numpy as np
import pytest

from refcal.calib.coverage import coverage, coverage_counts
from refcal.calib.dataset import ObservationDataset, View


def test_single_centre_observation():
    grid = coverage_counts(np.array([[960.0, 540.0]]), (1920, 1080))
    a = grid.array
    assert a[5, 5] == 1
    assert a.sum() == 1
    assert grid.summary == {"empty_cells": 99, "min": 0, "max": 1}


def test_uniform_grid_fills_every_cell():
    u, v = np.meshgrid(np.linspace(0, 1920, 50), np.linspace(0, 1080, 40))
    grid = coverage_counts(np.column_stack([u.ravel(), v.ravel()]), (1920, 1080))
    assert grid.summary["empty_cells"] == 0
    assert grid.total == 2000


def test_left_half_only():
    rng = np.random.default_rng(0)
    pix = np.column_stack([rng.uniform(0, 959.9, 5000), rng.uniform(0, 1080, 5000)])
    grid = coverage_counts(pix, (1920, 1080))
    assert np.all(grid.array[:, 5:] == 0)
    assert np.all(grid.array[:, :5] > 0)
    assert grid.summary["empty_cells"] == 50


def test_far_edges_clamp_to_last_cell():
    grid = coverage_counts(np.array([[1920.0, 1080.0], [0.0, 0.0]]), (1920, 1080))
    assert grid.array[9, 9] == 1 and grid.array[0, 0] == 1


def test_outside_pixels_ignored():
    grid = coverage_counts(np.array([[-1.0, 10.0], [10.0, 1081.0], [10.0, 10.0]]), (1920, 1080))
    assert grid.total == 1


def test_counts_sum_to_observations(generated):
    data, _ = generated("air_table1", 0, 0.5)
    for g in (1, 7, 10):
        assert coverage(data, g).total == data.n_observations


def test_grid_size_validated():
    data = ObservationDataset((View("a", np.zeros((4, 2)), np.zeros((4, 3))),), (10, 10))
    with pytest.raises(ValueError):
        coverage(data, 0)


def test_render_lists_summary():
    text = coverage_counts(np.array([[960.0, 540.0]]), (1920, 1080), 4).render()
    lines = text.splitlines()
    assert len(lines) == 5
    assert lines[-1] == "empty cells: 15/16  min: 0  max: 1"
