import numpy as np
import pytest

from refcal.synthetic import generate_dataset, preset


@pytest.fixture(scope="session")
def generated():
    """Cached ``(dataset, truth)`` per (preset, seed, sigma)."""
    cache = {}

    def get(name, seed=0, sigma=0.0):
        key = (name, seed, sigma)
        if key not in cache:
            cache[key] = generate_dataset(preset(name, seed=seed, noise_sigma=sigma))
        return cache[key]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng, max_angle=np.pi):
    from refcal.geometry.rotation import exp_so3

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return exp_so3(axis * rng.uniform(0, max_angle))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("tests.test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[n])
