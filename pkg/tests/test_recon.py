import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import crandn, inner, rel
from igrog import fieldcorr, nufft, recon, sim
from igrog.core import Grid


def _adjoint_gap(op, seed=0):
    rng = np.random.default_rng(seed)
    x = crandn(rng, op.ishape)
    y = crandn(rng, op.oshape)
    lhs = inner(op.apply(x), y)
    rhs = inner(x, op.apply_adjoint(y))
    return abs(lhs - rhs) / abs(lhs)


def _full_coords(n):
    ax = np.arange(n) - n // 2
    return np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)


@pytest.fixture(scope="module")
def setup(small_spiral):
    grid, img, maps, traj, data = small_spiral
    field = sim.quadratic_field_map(grid, {"1": 5.0, "x2": 100.0})
    rng = np.random.default_rng(3)
    coords = rng.integers(-16, 16, size=(700, 2))
    return grid, img, maps, traj, data, field, coords


def test_adjoint_gridded(setup):
    grid, img, maps, traj, data, field, coords = setup
    assert _adjoint_gap(recon.make_sense_op(maps, coords=coords)) <= 1e-10


def test_adjoint_nufft(setup):
    grid, img, maps, traj, data, field, coords = setup
    assert _adjoint_gap(recon.make_sense_op(maps, plan=nufft.plan(grid, traj))) <= 1e-10


@pytest.mark.parametrize("mode", ["zero-order", "least-squares"])
def test_adjoint_time_segmented(setup, mode):
    grid, img, maps, traj, data, field, coords = setup
    ts = fieldcorr.time_segmentation(traj.times, field, 3, mode=mode)
    assert _adjoint_gap(recon.make_sense_op(maps, plan=nufft.plan(grid, traj), ts=ts)) <= 1e-10
    t = np.linspace(0, traj.times.max(), len(coords))
    tsg = fieldcorr.time_segmentation(t, field, 3, mode=mode)
    assert _adjoint_gap(recon.make_sense_op(maps, coords=coords, ts=tsg)) <= 1e-10


@pytest.mark.parametrize("use_ts", [False, True])
def test_gridded_normal_matches_composition(setup, use_ts):
    grid, img, maps, traj, data, field, coords = setup
    ts = None
    if use_ts:
        ts = fieldcorr.time_segmentation(np.linspace(0, 0.01, len(coords)), field, 3)
    op = recon.make_sense_op(maps, coords=coords, ts=ts)
    rng = np.random.default_rng(4)
    x = crandn(rng, grid.shape)
    w = rng.uniform(0.1, 1.0, len(coords))
    assert rel(op.normal(x, w), op.apply_adjoint(op.apply(x) * w)) <= 1e-10


def test_nufft_toeplitz_normal(setup):
    grid, img, maps, traj, data, field, coords = setup
    w = np.random.default_rng(5).uniform(0.1, 1.0, len(traj))
    op = recon.make_sense_op(maps, plan=nufft.plan(grid, traj), toeplitz_weights=w)
    x = crandn(np.random.default_rng(6), grid.shape)
    assert rel(op.normal(x, w), op.apply_adjoint(op.apply(x) * w)) <= 1e-3


def test_full_cartesian_is_scaled_unitary():
    grid = Grid(2, 16)
    op = recon.make_sense_op(np.ones((1,) + grid.shape), coords=_full_coords(16))
    x = crandn(np.random.default_rng(7), grid.shape)
    assert rel(op.normal(x), grid.n**2 * x) <= 1e-12
    assert abs(recon.max_eigen(op) - grid.n**2) <= 1e-9 * grid.n**2


def test_gridded_matches_nufft_on_integer_coordinates(setup):
    grid, img, maps, traj, data, field, coords = setup
    g = recon.make_sense_op(maps, coords=coords)
    n = recon.make_sense_op(maps, plan=nufft.plan(grid, coords.astype(np.float64)))
    assert rel(n.apply(img), g.apply(img)) <= 1e-3


def test_gridded_coords_out_of_range(setup):
    grid, img, maps, traj, data, field, coords = setup
    with pytest.raises(ValueError):
        recon.make_sense_op(maps, coords=np.array([[16, 0]]))
    with pytest.raises(ValueError):
        recon.make_sense_op(maps)


def _diag_op(d):
    return recon.LinearOp(d.shape, d.shape, lambda x: d * x, lambda y: np.conj(d) * y)


def test_max_eigen_identity_and_diagonal():
    assert abs(recon.max_eigen(_diag_op(np.ones(10))) - 1.0) <= 1e-12
    d = np.linspace(0.1, 2.0, 20)
    assert abs(recon.max_eigen(_diag_op(d), iters=200) - 4.0) <= 1e-3


def test_cg_identity():
    y = crandn(np.random.default_rng(8), (12,))
    assert rel(recon.cg_sense(_diag_op(np.ones(12)), y, iters=5), y) <= 1e-12


def test_cg_full_cartesian_exact(setup):
    grid, img, maps, *_ = setup
    op = recon.make_sense_op(maps, coords=_full_coords(grid.n))
    x, trace = recon.cg_sense(op, op.apply(img), iters=50, tol=1e-14, return_trace=True)
    assert rel(x, img) <= 1e-10
    # normalized maps make A^H A a multiple of the identity
    assert len(trace.residual) <= 2


def test_cg_trace_csv(tmp_path):
    x, trace = recon.cg_sense(_diag_op(np.linspace(1, 2, 8)), np.ones(8), iters=4, return_trace=True)
    trace.to_csv(str(tmp_path / "t.csv"))
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iter,residual,objective,wall_ms" and len(lines) == len(trace.residual) + 1


def test_fista_zero_reg_matches_cg(setup):
    grid, img, maps, *_ = setup
    op = recon.make_sense_op(maps, coords=_full_coords(grid.n))
    b = op.apply(img)
    x = recon.fista_l1(op, b, 0.0, iters=60)
    assert rel(x, recon.cg_sense(op, b, iters=50)) <= 1e-6


def test_fista_huge_reg_gives_zero(setup):
    grid, img, maps, *_ = setup
    op = recon.make_sense_op(maps, coords=_full_coords(grid.n))
    b = op.apply(img)
    x = recon.fista_l1(op, b, 1e12, iters=5)
    assert np.all(x == 0)


def test_fista_objective_decreases(setup):
    grid, img, maps, traj, data, field, coords = setup
    op = recon.make_sense_op(maps, coords=coords)
    b = op.apply(img)
    _, trace = recon.fista_l1(op, b, 0.5, iters=40, return_trace=True)
    obj = np.array(trace.objective)
    assert obj[-1] <= obj[5] and obj[-1] <= obj[0]
    assert np.all(np.isfinite(obj))


def test_fista_negative_reg():
    with pytest.raises(ValueError):
        recon.fista_l1(_diag_op(np.ones(8)), np.ones(8), -1.0)


@given(st.sampled_from([1, 2, 3]), st.integers(0, 1000))
def test_haar_orthonormal(levels, seed):
    x = crandn(np.random.default_rng(seed), (16, 16))
    c = recon.haar_forward(x, levels)
    assert abs(np.linalg.norm(c) - np.linalg.norm(x)) <= 1e-12 * np.linalg.norm(x)
    assert rel(recon.haar_inverse(c, levels), x) <= 1e-12


def test_haar_constant_is_sparse():
    c = recon.haar_forward(np.ones((16, 16)), 2)
    assert np.count_nonzero(np.abs(c) > 1e-12) == 16


def test_haar_rejects_bad_size():
    with pytest.raises(ValueError):
        recon.haar_forward(np.ones((12, 12)), 3)
