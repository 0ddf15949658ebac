import json
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from igrog import sim
from igrog.core import (
    Calibration,
    CoilMaps,
    FormatError,
    Grid,
    Trajectory,
    crop_center,
    fftc,
    ifftc,
    pad_center,
    read_array,
    usable_calibration_region,
    write_array,
)


def test_grid_rejects_bad_dim_and_extent():
    with pytest.raises(ValueError):
        Grid(1, 32)
    with pytest.raises(ValueError):
        Grid(2, 4)


def test_usable_region_2d():
    cal = Calibration(Grid(2, 32), np.zeros((1, 2, 32, 32)))
    lo, hi = usable_calibration_region(cal)
    assert (lo, hi) == (2, 29)


def test_usable_region_3d():
    cal = Calibration(Grid(3, 24), np.zeros((1, 1, 24, 24, 24)))
    assert usable_calibration_region(cal) == (2, 21)


def test_calibration_too_small():
    # Grid itself refuses n < 8, so the bound is checked on a stand-in
    usable_calibration_region(Calibration(Grid(2, 9), np.zeros((1, 1, 9, 9))))
    stub = SimpleNamespace(grid=SimpleNamespace(n=5, dim=2))
    with pytest.raises(ValueError, match="calibration too small"):
        usable_calibration_region(stub)


def test_calibration_echo_times_increasing():
    with pytest.raises(ValueError):
        Calibration(Grid(2, 8), np.zeros((2, 1, 8, 8)), te=[1e-3, 1e-3])


def test_trajectory_within_grid():
    t = Trajectory(np.array([[0.0, 16.0]]), np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError):
        t.check_within(Grid(2, 32))


def test_trajectory_readouts():
    t = Trajectory(np.zeros((5, 2)), np.arange(5.0), np.array([0, 0, 1, 1, 1]))
    assert t.readouts() == [(0, 2), (2, 5)]


def test_coilmaps_shape():
    with pytest.raises(ValueError):
        CoilMaps(np.zeros((8, 8)))


@pytest.mark.parametrize("dtype", [np.complex64, np.complex128])
def test_array_round_trip_bit_exact(tmp_path, dtype):
    rng = np.random.default_rng(0)
    x = (rng.standard_normal((3, 4, 5)) + 1j * rng.standard_normal((3, 4, 5))).astype(dtype)
    write_array(tmp_path / "a", x)
    y = read_array(tmp_path / "a")
    assert y.dtype == x.dtype and y.shape == x.shape
    assert y.tobytes() == x.tobytes()


def test_array_header(tmp_path):
    write_array(tmp_path / "a", np.zeros((2, 3), np.complex128))
    hdr = json.loads((tmp_path / "a.json").read_text())
    assert hdr["shape"] == [2, 3]
    assert hdr["dtype"] == "c128"
    assert hdr["order"] == "row-major" and hdr["endian"] == "little"


def test_array_size_mismatch(tmp_path):
    write_array(tmp_path / "a", np.zeros(99, np.complex128))
    hdr = json.loads((tmp_path / "a.json").read_text())
    hdr["shape"] = [100]
    (tmp_path / "a.json").write_text(json.dumps(hdr))
    with pytest.raises(FormatError):
        read_array(tmp_path / "a")


@given(st.lists(st.integers(1, 5), min_size=1, max_size=3), st.sampled_from(["c64", "c128"]), st.integers(0, 2**31))
def test_round_trip_property(tmp_path_factory, shape, dt, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    x = x.astype(np.complex64 if dt == "c64" else np.complex128)
    d = tmp_path_factory.mktemp("rt")
    write_array(d / "x", x)
    assert read_array(d / "x").tobytes() == x.tobytes()


def test_fft_dc_at_center():
    x = np.ones((8, 8))
    k = fftc(x, axes=(0, 1))
    assert abs(k[4, 4] - 64) < 1e-12
    assert np.allclose(np.delete(k.ravel(), 4 * 8 + 4), 0)
    assert np.allclose(ifftc(k, axes=(0, 1)), x)


def test_pad_crop_inverse():
    x = np.arange(16.0).reshape(4, 4)
    assert np.array_equal(crop_center(pad_center(x, (8, 8)), (4, 4)), x)


def test_translation_is_linear_phase():
    grid = Grid(2, 16)
    rng = np.random.default_rng(1)
    img = rng.standard_normal(grid.shape)
    img[-1, :] = 0
    shifted = np.roll(img, 1, axis=0)
    maps = CoilMaps(np.ones((1, 16, 16)))
    traj = sim.vds_spiral(grid, shots=2, accel=1.0, samples_per_shot=40)
    b0 = sim.brute_force_forward(img, maps, traj)
    b1 = sim.brute_force_forward(shifted, maps, traj)
    expect = b0 * np.exp(-2j * np.pi * traj.coords[:, 0] / 16)
    assert np.max(np.abs(b1 - expect)) / np.max(np.abs(b0)) < 1e-10
