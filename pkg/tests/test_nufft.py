import time

import numpy as np
import pytest
from conftest import crandn, inner, rel

from igrog import nufft, sim
from igrog.core import CoilMaps, Grid, Trajectory


def _max_rel(a, b):
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def test_kb_beta_formula():
    assert nufft.kb_beta(2.0, 6.0) == pytest.approx(np.pi * np.sqrt(9 * 1.5**2 - 0.8))


def test_plan_validation():
    grid = Grid(2, 16)
    c = np.zeros((3, 2))
    with pytest.raises(ValueError):
        nufft.plan(grid, c, alpha=1.0)
    with pytest.raises(ValueError):
        nufft.plan(grid, c, width=1.0)
    with pytest.raises(ValueError):
        nufft.plan(grid, np.full((1, 2), 8.0))


def test_plan_rounds_oversampled_size():
    p = nufft.plan(Grid(2, 30), np.zeros((1, 2)), alpha=1.5)
    assert p.os_n == 46 and p.alpha == pytest.approx(46 / 30)


def test_plan_deterministic():
    coords = np.random.default_rng(0).uniform(-8, 7.9, (50, 2))
    a = nufft.plan(Grid(2, 16), coords)
    b = nufft.plan(Grid(2, 16), coords)
    assert (a.interp != b.interp).nnz == 0
    assert np.array_equal(a.apod, b.apod)


def test_apodization_min_at_center():
    p = nufft.plan(Grid(2, 64), np.zeros((1, 2)), alpha=2.0, width=6.0)
    assert np.unravel_index(np.argmin(p.apod), p.apod.shape) == (32, 32)
    assert np.all(p.apod > 0)


def test_forward_matches_oracle(small_spiral):
    grid, img, maps, traj, data = small_spiral
    p = nufft.plan(grid, traj, alpha=2.0, width=6.0)
    assert _max_rel(nufft.forward(p, maps.maps * img), data) <= 1e-3


def test_forward_delta():
    grid = Grid(2, 32)
    traj = sim.vds_spiral(grid, shots=4, accel=1.0, samples_per_shot=125)
    delta = np.zeros((32, 32), complex)
    delta[16, 16] = 1
    y = nufft.forward(nufft.plan(grid, traj, alpha=2.0), delta)
    assert np.max(np.abs(np.abs(y) - 1)) <= 1e-3


def test_accuracy_improves_with_width(small_spiral):
    grid, img, maps, traj, data = small_spiral
    errs = [_max_rel(nufft.forward(nufft.plan(grid, traj, 2.0, w), maps.maps * img), data) for w in (2, 4, 6)]
    assert errs[0] >= errs[1] >= errs[2]


def test_precompute_toggle_equivalent(small_spiral):
    grid, img, maps, traj, _ = small_spiral
    a = nufft.forward(nufft.plan(grid, traj, precompute=True), img)
    b = nufft.forward(nufft.plan(grid, traj, precompute=False), img)
    assert np.array_equal(a, b)


def test_forward_linear(small_spiral):
    grid, _, _, traj, _ = small_spiral
    rng = np.random.default_rng(1)
    p = nufft.plan(grid, traj)
    x, y = crandn(rng, (2, 32, 32))
    lhs = nufft.forward(p, 2 * x - 3j * y)
    assert rel(lhs, 2 * nufft.forward(p, x) - 3j * nufft.forward(p, y)) < 1e-12


@pytest.mark.parametrize("weights", [False, True])
def test_adjoint(small_spiral, weights):
    grid, _, _, traj, _ = small_spiral
    rng = np.random.default_rng(2)
    p = nufft.plan(grid, traj)
    w = rng.uniform(0.1, 1, len(traj)) if weights else None
    for _ in range(5):
        x = crandn(rng, (32, 32))
        y = crandn(rng, len(traj))
        ax = nufft.forward(p, x) * (1 if w is None else w)
        lhs = inner(ax, y)
        rhs = inner(x, nufft.adjoint(p, y, w))
        assert abs(lhs - rhs) / (np.linalg.norm(ax) * np.linalg.norm(y)) <= 1e-12


def test_adjoint_zero_and_dc():
    grid = Grid(2, 32)
    p = nufft.plan(grid, np.zeros((1, 2)), alpha=2.0)
    assert np.all(nufft.adjoint(p, np.zeros(1)) == 0)
    img = nufft.adjoint(p, np.ones(1))
    assert np.max(np.abs(img - 1)) <= 1e-3


def test_shape_mismatch():
    p = nufft.plan(Grid(2, 16), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        nufft.forward(p, np.zeros((8, 8)))
    with pytest.raises(ValueError):
        nufft.adjoint(p, np.zeros(3))


@pytest.mark.parametrize("n", [32, 64])
def test_toeplitz_matches_adjoint_forward(n):
    grid = Grid(2, n)
    traj = sim.vds_spiral(grid, shots=8, accel=1.0, samples_per_shot=8 * n)
    rng = np.random.default_rng(n)
    w = rng.uniform(0.2, 1.0, len(traj))
    p = nufft.plan(grid, traj, alpha=2.0, width=6.0)
    psf = nufft.toeplitz_psf(p, w)
    for _ in range(3):
        x = crandn(rng, grid.shape)
        ref = nufft.adjoint(p, nufft.forward(p, x), w)
        assert rel(nufft.normal_toeplitz(psf, x), ref) <= 1e-3


def test_psf_full_cartesian_is_scaled_delta():
    n = 16
    grid = Grid(2, n)
    k = np.stack(np.meshgrid(np.arange(n) - n // 2, np.arange(n) - n // 2, indexing="ij"), -1).reshape(-1, 2)
    p = nufft.plan(grid, k.astype(float), alpha=2.0, width=6.0)
    x = crandn(np.random.default_rng(0), grid.shape)
    y = nufft.normal_toeplitz(nufft.toeplitz_psf(p), x)
    assert rel(y, n**2 * x) <= 1e-3


def test_psf_conjugate_symmetric_and_self_adjoint(small_spiral):
    grid, _, _, traj, _ = small_spiral
    rng = np.random.default_rng(3)
    psf = nufft.toeplitz_psf(nufft.plan(grid, traj, alpha=2.0), rng.uniform(0.1, 1, len(traj)))
    h = psf.psf[1:, 1:]
    assert np.allclose(h, np.conj(h[::-1, ::-1]), atol=1e-10 * np.abs(h).max())
    x, y = crandn(rng, (2, 32, 32))
    a = inner(nufft.normal_toeplitz(psf, x), y)
    b = inner(x, nufft.normal_toeplitz(psf, y))
    assert abs(a - b) / abs(a) <= 1e-10


def _median_time(fn, repeats=3):
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def test_forward_faster_than_direct_summation():
    n = 256
    grid = Grid(2, n)
    rng = np.random.default_rng(0)
    coords = rng.uniform(-n / 2, n / 2 - 1, (100_000, 2))
    img = crandn(rng, grid.shape)
    p = nufft.plan(grid, coords)
    t_fast = _median_time(lambda: nufft.forward(p, img))
    sub = Trajectory(coords[:10_000], np.zeros(10_000), np.zeros(10_000))
    maps = CoilMaps(np.ones((1, n, n)))
    t_slow = 10 * _median_time(lambda: sim.brute_force_forward(img, maps, sub), repeats=1)
    assert t_slow >= 10 * t_fast


def test_toeplitz_faster_than_forward_adjoint():
    n = 256
    grid = Grid(2, n)
    traj = sim.vds_spiral(grid, shots=16, accel=2.0, samples_per_shot=6000)
    p = nufft.plan(grid, traj)
    psf = nufft.toeplitz_psf(p)
    x = crandn(np.random.default_rng(0), grid.shape)

    def loop(f):
        return lambda: [f(x) for _ in range(8)]

    t_t = _median_time(loop(lambda v: nufft.normal_toeplitz(psf, v)))
    t_n = _median_time(loop(lambda v: nufft.adjoint(p, nufft.forward(p, v))))
    assert t_n >= 1.3 * t_t
