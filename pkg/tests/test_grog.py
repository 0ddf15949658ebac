import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from igrog import grog, sim
from igrog.core import Calibration, CoilMaps, Grid, Trajectory


def _point_cal(n=16, ncoil=1):
    img = np.zeros((64, 64), complex)
    img[32, 32] = 1.0
    maps = CoilMaps(np.ones((ncoil, 64, 64)))
    return sim.make_calibration(img, maps, n)


def _rand_basis(rng, c):
    v = rng.standard_normal((c, c)) + 1j * rng.standard_normal((c, c))
    return v, np.linalg.inv(v)


@pytest.fixture(scope="module")
def shepp_kernels():
    grid = Grid(2, 64)
    img = sim.shepp_logan(grid, modified=True).image
    maps = sim.synth_coil_maps(grid, 8)
    cal = sim.make_calibration(img, maps, 24)
    return grog.calibrate_axis_kernels(cal, lam=1e-3)


def test_single_coil_point_object_gives_unit_kernel():
    k = grog.calibrate_axis_kernels(_point_cal(), lam=0.0)
    for g in k.G:
        assert np.allclose(g, 1.0, atol=1e-12)


def test_exact_model_recovered():
    rng = np.random.default_rng(0)
    c, n = 3, 16
    v, vinv = _rand_basis(rng, c)
    th = rng.uniform(-0.3, 0.3, (2, c))
    gx = (v * np.exp(1j * th[0])) @ vinv
    gy = (v * np.exp(1j * th[1])) @ vinv
    v0 = rng.standard_normal(c) + 1j * rng.standard_normal(c)
    v1 = rng.standard_normal(c) + 1j * rng.standard_normal(c)
    v2 = rng.standard_normal(c) + 1j * rng.standard_normal(c)
    # a sum of three orbits keeps the model exact and S S^H full rank
    kd = np.zeros((c, n, n), complex)
    for vv in (v0, v1, v2):
        for i in range(n):
            for j in range(n):
                kd[:, i, j] += np.linalg.matrix_power(gx, i) @ np.linalg.matrix_power(gy, j) @ vv
    cal = Calibration(Grid(2, n), kd)
    k = grog.calibrate_axis_kernels(cal, lam=0.0)
    assert np.linalg.norm(k.G[0] - gx) / np.linalg.norm(gx) <= 1e-10
    assert np.linalg.norm(k.G[1] - gy) / np.linalg.norm(gy) <= 1e-10


def test_ridge_limit():
    grid = Grid(2, 32)
    cal = sim.make_calibration(sim.shepp_logan(grid).image, sim.synth_coil_maps(grid, 4), 16)
    k = grog.calibrate_axis_kernels(cal, lam=1e8)
    assert all(np.linalg.norm(g) < 1e-6 for g in k.G)


def test_singular_without_ridge():
    cal = _point_cal(ncoil=3)
    with pytest.raises(ValueError, match="lam > 0"):
        grog.calibrate_axis_kernels(cal, lam=0.0)


def test_frac_power_identity_and_recovery(shepp_kernels):
    for ax in range(2):
        g = shepp_kernels.G[ax]
        assert np.max(np.abs(grog.frac_power(g, 0.0) - np.eye(g.shape[0]))) <= 1e-12
        g1 = grog.frac_power(g, 1.0)
        assert np.max(np.abs(g1 - g)) / np.max(np.abs(g)) <= 1e-12


@given(st.floats(-0.25, 0.25), st.floats(-0.25, 0.25))
def test_frac_power_semigroup(shepp_kernels, d1, d2):
    g = shepp_kernels.G[0]
    lhs = grog.frac_power(g, d1) @ grog.frac_power(g, d2)
    rhs = grog.frac_power(g, d1 + d2)
    assert np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs)) <= 1e-8


def test_frac_power_defective():
    with pytest.raises(ValueError, match="defective"):
        grog.frac_power(np.diag([1.0, 0.0]), 0.5)


def test_grid_on_grid_samples_unchanged(shepp_kernels):
    rng = np.random.default_rng(0)
    coords = rng.integers(-10, 10, (40, 2)).astype(float)
    coords = np.unique(coords, axis=0)
    data = rng.standard_normal((8, len(coords))) + 0j
    out, tg = grog.grog_grid(data, coords, shepp_kernels)
    order = np.lexsort(coords.T[::-1])
    assert np.array_equal(tg, coords[order].astype(int))
    assert np.allclose(out, data[:, order], atol=1e-12)


def test_grid_single_point_object_exact():
    n = 64
    img = np.zeros((n, n), complex)
    img[32, 32] = 1.0
    maps = CoilMaps(np.ones((1, n, n)))
    k = grog.calibrate_axis_kernels(sim.make_calibration(img, maps, 16), lam=0.0)
    traj = sim.vds_spiral(Grid(2, n), shots=2, accel=1.0, samples_per_shot=200)
    data = sim.brute_force_forward(img, maps, traj)
    out, tg = grog.grog_grid(data, traj, k)
    assert np.max(np.abs(out - 1.0)) <= 1e-10


def test_nearest_target_rule():
    rng = np.random.default_rng(1)
    coords = rng.uniform(-20, 19, (500, 2))
    k = grog.AxisKernels.from_matrices([np.eye(2), np.eye(2)])
    _, tg = grog.grog_grid(np.ones((2, 500)), coords, k, merge=False)
    assert np.all(np.abs(tg - coords) <= 0.5 + 1e-12)


def test_axis_order_configurable(shepp_kernels):
    rng = np.random.default_rng(2)
    coords = rng.uniform(-8, 8, (50, 2))
    data = rng.standard_normal((8, 50)) + 0j
    a, _ = grog.grog_grid(data, coords, shepp_kernels, order=(0, 1), merge=False)
    b, _ = grog.grog_grid(data, coords, shepp_kernels, order=(1, 0), merge=False)
    assert np.all(np.isfinite(a)) and np.all(np.isfinite(b))


def test_merge_collisions_weighted_average():
    targets = np.array([[0, 0], [1, 0], [0, 0]])
    data = np.array([[1.0, 5.0, 3.0]]) + 0j
    uniq, out, keys, inv = grog.merge_collisions(targets, data, np.array([1.0, 1.0, 3.0]))
    assert keys is None
    assert uniq.tolist() == [[0, 0], [1, 0]]
    assert np.allclose(out[0], [(1 + 9) / 4, 5.0])
    assert inv.tolist() == [0, 1, 0]


def test_merge_collisions_keyed():
    targets = np.array([[0, 0], [0, 0], [0, 0]])
    data = np.array([[1.0, 2.0, 4.0]]) + 0j
    uniq, out, keys, _ = grog.merge_collisions(targets, data, key=np.array([0, 1, 1]))
    assert keys.tolist() == [0, 1]
    assert np.allclose(out[0], [1.0, 3.0])


def test_grog_shepp_end_to_end_finite():
    grid = Grid(2, 64)
    img = sim.shepp_logan(grid, modified=True).image
    maps = sim.synth_coil_maps(grid, 12)
    cal = sim.make_calibration(img, maps, 32)
    k = grog.calibrate_axis_kernels(cal, 1e-3)
    traj = sim.vds_spiral(grid, shots=16, accel=2.0, samples_per_shot=500)
    data = sim.brute_force_forward(img, maps, traj)
    out, tg = grog.grog_grid(data, traj, k)
    truth = sim.brute_force_forward(img, maps, Trajectory(tg.astype(float), np.zeros(len(tg)), np.zeros(len(tg))))
    err = np.linalg.norm(out - truth) / np.linalg.norm(truth)
    assert np.isfinite(err) and err < 0.5
