import numpy as np
import pytest
from hypothesis import settings

from igrog import sim
from igrog.core import Grid

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_spiral():
    """N=32, 4 coils, 500-sample spiral."""
    grid = Grid(2, 32)
    img = sim.shepp_logan(grid, modified=True).image
    maps = sim.synth_coil_maps(grid, 4, seed=0)
    traj = sim.vds_spiral(grid, shots=4, accel=1.0, samples_per_shot=125)
    data = sim.brute_force_forward(img, maps, traj)
    return grid, img, maps, traj, data


def rel(a, b):
    return float(np.linalg.norm(np.ravel(a - b)) / np.linalg.norm(np.ravel(b)))


def inner(a, b):
    return complex(np.vdot(np.ravel(b), np.ravel(a)))


def crandn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
