"""Field-imperfection modeling: time segmentation and field-corrected implicit GROG.

The spatio-temporal phase is ``phi(r, t) = sum_p phi_p(r) alpha_p(t)``. Time
segmentation approximates ``exp(-j 2 pi phi(r, t))`` by
``sum_l h_l(t) exp(-j 2 pi phi(r) . beta_l)``. The field-corrected kernel
network absorbs the residual ``exp(-j 2 pi phi(r) . (alpha(t) - beta_l))``
into the gridding kernels so the reconstruction only has to model the
segment-center phase.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import analysis, dcf, implicit, mlpkit, nufft, recon, sim
from .core import Calibration, Grid, Trajectory, read_array, spatial_axes, write_array
from .grog import merge_collisions

__all__ = [
    "TimeSegmentation",
    "cluster_centers",
    "build_interpolators",
    "time_segmentation",
    "ts_residual",
    "ts_forward",
    "ts_adjoint",
    "field_from_echoes",
    "train_field_kernelnet",
    "correct_and_grid",
    "tseg_sweep",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TimeSegmentation:
    """Segment centers ``beta`` (L, P), interpolators ``h`` (M, L) and the
    spatial phase basis (P, *grid) they were built for."""

    centers: np.ndarray
    h: np.ndarray
    mode: str
    phase_basis: np.ndarray

    @property
    def nseg(self) -> int:
        return self.centers.shape[0]

    @property
    def key(self) -> str:
        """Fingerprint of the segment centers, used to match trained networks."""
        c = np.ascontiguousarray(np.round(self.centers, 12))
        return hashlib.sha256(c.tobytes() + str(c.shape).encode()).hexdigest()[:16]

    def nearest(self, alphas: np.ndarray) -> np.ndarray:
        """Index of the closest center for each row of ``alphas``."""
        d2 = np.sum((alphas[:, None, :] - self.centers[None, :, :]) ** 2, axis=-1)
        return np.argmin(d2, axis=1)

    def save(self, prefix: str) -> None:
        write_array(prefix + ".centers", self.centers, meta={"mode": self.mode})
        write_array(prefix + ".h", self.h)
        write_array(prefix + ".basis", self.phase_basis)

    @classmethod
    def load(cls, prefix: str) -> "TimeSegmentation":
        centers, meta = read_array(prefix + ".centers", with_meta=True)
        return cls(
            centers.real.copy(),
            read_array(prefix + ".h").real.copy(),
            meta["mode"],
            read_array(prefix + ".basis").real.copy(),
        )


def cluster_centers(
    alphas: np.ndarray, nseg: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-9, n_init: int = 10
) -> np.ndarray:
    """k-means (Lloyd) with k-means++ seeding on the rows of ``alphas``.

    Runs ``n_init`` seedings and keeps the lowest within-cluster sum of
    squares. Seeding draws by inverse-CDF sampling, so repeating every row
    the same number of times (``np.repeat``) leaves the result unchanged.
    """
    x = np.asarray(alphas, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    m = x.shape[0]
    if nseg <= 0:
        raise ValueError("number of segments must be positive")
    if nseg > m:
        raise ValueError("more segments than samples")
    if n_init < 1:
        raise ValueError("n_init must be at least 1")
    rng = np.random.default_rng(seed)
    best, best_cost = None, np.inf
    for _ in range(n_init):
        c = _lloyd(x, _kmeanspp(x, nseg, rng), max_iter, tol)
        cost = float(np.sum(np.min(np.sum((x[:, None, :] - c[None]) ** 2, axis=-1), axis=1)))
        if cost < best_cost * (1 - 1e-12):
            best, best_cost = c, cost
    order = np.lexsort(best.T[::-1])
    return best[order]


def _kmeanspp(x: np.ndarray, nseg: int, rng: np.random.Generator) -> np.ndarray:
    m = x.shape[0]
    centers = [x[min(int(rng.uniform() * m), m - 1)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, nseg):
        cum = np.cumsum(d2)
        if cum[-1] <= 0:
            idx = min(int(rng.uniform() * m), m - 1)
        else:
            idx = int(np.searchsorted(cum, rng.uniform() * cum[-1], side="right"))
            idx = min(idx, m - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _lloyd(x: np.ndarray, c: np.ndarray, max_iter: int, tol: float) -> np.ndarray:
    for _ in range(max_iter):
        lab = np.argmin(np.sum((x[:, None, :] - c[None]) ** 2, axis=-1), axis=1)
        new = c.copy()
        for l in range(c.shape[0]):
            sel = lab == l
            if np.any(sel):
                new[l] = x[sel].mean(axis=0)
        shift = float(np.max(np.abs(new - c)))
        c = new
        if shift <= tol:
            break
    return c


def _voxel_phases(basis: np.ndarray, n_vox: int, seed: int) -> np.ndarray:
    flat = basis.reshape(basis.shape[0], -1).T  # (V, P)
    if flat.shape[0] > n_vox:
        idx = np.random.default_rng(seed).choice(flat.shape[0], n_vox, replace=False)
        flat = flat[np.sort(idx)]
    return flat


def build_interpolators(
    alphas: np.ndarray,
    centers: np.ndarray,
    phase_basis: np.ndarray,
    mode: str = "zero-order",
    n_vox: int = 1000,
    seed: int = 0,
) -> TimeSegmentation:
    """Temporal interpolators for fixed segment centers.

    ``zero-order``: one-hot at the nearest center. ``least-squares``: real
    ``h(t)`` minimizing ``||E(t) - B h||`` over ``n_vox`` sampled voxels
    (minimum-norm solution when ``B`` is rank deficient).
    """
    a = np.asarray(alphas, dtype=np.float64)
    a = a[:, None] if a.ndim == 1 else a
    centers = np.asarray(centers, dtype=np.float64)
    centers = centers[:, None] if centers.ndim == 1 else centers
    basis = np.asarray(phase_basis, dtype=np.float64)
    if a.shape[1] != centers.shape[1] or basis.shape[0] != a.shape[1]:
        raise ValueError("alphas, centers and phase basis disagree on P")
    nseg = centers.shape[0]
    if mode == "zero-order":
        d2 = np.sum((a[:, None, :] - centers[None]) ** 2, axis=-1)
        h = np.zeros((a.shape[0], nseg))
        h[np.arange(a.shape[0]), np.argmin(d2, axis=1)] = 1.0
    elif mode == "least-squares":
        phi = _voxel_phases(basis, n_vox, seed)
        B = np.exp(-2j * np.pi * phi @ centers.T)  # (V, L)
        E = np.exp(-2j * np.pi * phi @ a.T)  # (V, M)
        Br = np.concatenate([B.real, B.imag])
        Er = np.concatenate([E.real, E.imag])
        h = np.linalg.lstsq(Br, Er, rcond=None)[0].T
    else:
        raise ValueError(f"unknown interpolator mode {mode!r}")
    return TimeSegmentation(centers, h, mode, basis)


def time_segmentation(
    times: np.ndarray, field: "sim.FieldMap", nseg: int, mode: str = "zero-order", seed: int = 0
) -> TimeSegmentation:
    """Cluster ``field.alphas(times)`` into ``nseg`` centers and build interpolators."""
    a = field.alphas(times)
    return build_interpolators(a, cluster_centers(a, nseg, seed=seed), field.basis, mode, seed=seed)


def ts_residual(ts: TimeSegmentation, alphas: np.ndarray, n_vox: int = 1000, seed: int = 0) -> np.ndarray:
    """Per-time RMS error of the segmented phase over sampled voxels."""
    a = np.asarray(alphas, dtype=np.float64)
    a = a[:, None] if a.ndim == 1 else a
    phi = _voxel_phases(ts.phase_basis, n_vox, seed)
    E = np.exp(-2j * np.pi * phi @ a.T)
    B = np.exp(-2j * np.pi * phi @ ts.centers.T)
    return np.sqrt(np.mean(np.abs(E - B @ ts.h.T) ** 2, axis=0))


def _phases(ts: TimeSegmentation) -> np.ndarray:
    return np.exp(-2j * np.pi * np.tensordot(ts.centers, ts.phase_basis, axes=(1, 0)))


def ts_forward(p: nufft.NufftPlan, ts: TimeSegmentation, img: np.ndarray) -> np.ndarray:
    """``sum_l diag(h_l) NUFFT(img * exp(-j 2 pi phi . beta_l))``; ``img`` is ``(..., *grid)``."""
    if ts.h.shape[0] != p.nsamples:
        raise ValueError("time segmentation was built for a different trajectory")
    if img.shape[img.ndim - p.grid.dim :] != ts.phase_basis.shape[1:]:
        raise ValueError("image does not match the phase basis grid")
    ph = _phases(ts)
    out = None
    for l in range(ts.nseg):
        y = nufft.forward(p, img * ph[l]) * ts.h[:, l]
        out = y if out is None else out + y
    return out


def ts_adjoint(p: nufft.NufftPlan, ts: TimeSegmentation, samples: np.ndarray) -> np.ndarray:
    """Exact adjoint of :func:`ts_forward`."""
    if ts.h.shape[0] != p.nsamples or samples.shape[-1] != p.nsamples:
        raise ValueError("samples do not match the time segmentation")
    ph = _phases(ts)
    out = None
    for l in range(ts.nseg):
        x = nufft.adjoint(p, samples * ts.h[:, l]) * ph[l].conj()
        out = x if out is None else out + x
    return out


def field_from_echoes(cal: Calibration) -> np.ndarray:
    """Off-resonance (Hz) on the calibration grid from consecutive echo phase differences."""
    if cal.necho < 2:
        raise ValueError("need at least two echoes")
    axes = spatial_axes(cal.grid.dim)
    from .core import ifftc

    imgs = ifftc(cal.kdata, axes=axes)  # (E, C, *grid)
    rates = []
    for e in range(cal.necho - 1):
        z = np.sum(imgs[e].conj() * imgs[e + 1], axis=0)
        rates.append(-np.angle(z) / (2 * np.pi * (cal.te[e + 1] - cal.te[e])))
    return np.mean(rates, axis=0)


# ---------------------------------------------------------------------------
# field-corrected kernel network
# ---------------------------------------------------------------------------


def _segment_features(plan: implicit.GriddingPlan, ts: TimeSegmentation, temporal, select=None):
    """Nearest segment, center-time feature and per-source offsets ``alpha - beta_l``."""
    sel = np.arange(plan.nsamples) if select is None else np.flatnonzero(select)
    if ts.h.shape[0] != plan.nsamples:
        raise ValueError("time segmentation does not match the gridding plan")
    seg = np.argmax(np.abs(ts.h[sel]), axis=1)
    beta = ts.centers[seg]  # (m, P)
    a_c = np.asarray(temporal(plan.times[sel]), dtype=np.float64).reshape(len(sel), -1)
    nsrc = plan.nsrc
    a_s = np.asarray(temporal(plan.src_times[sel].ravel()), dtype=np.float64).reshape(len(sel), nsrc, -1)
    return seg, a_c - beta, a_s - beta[:, None, :]


def _temporal_of(field):
    if field is None:
        return lambda t: np.asarray(t, dtype=np.float64)[:, None]
    return field.temporal


def train_field_kernelnet(
    cal: Calibration,
    plan: implicit.GriddingPlan,
    ts_list,
    field: Optional["sim.FieldMap"] = None,
    config: Optional[implicit.TrainConfig] = None,
    telemetry=None,
    **overrides,
) -> implicit.KernelNet:
    """Kernel network conditioned on the residual temporal phase.

    Features are the source orientations plus ``alpha(t) - beta_l`` for the
    nearest segment center (elapsed time from the center in the B0 case).
    Sources are the calibration image with phase
    ``phi(r) . (alpha(t_i) - beta_l)`` applied, evaluated by explicit DFT at
    the source coordinates; targets are the plain calibration image at the
    target coordinate. The phase ``phi`` comes from ``field`` resampled on
    the calibration grid, or from the echoes when ``field`` is None.

    ``ts_list`` may hold several segmentations of the same trajectory; the
    training pool is their union and the network records all of them.
    """
    cfg = config or implicit.TrainConfig()
    if overrides:
        cfg = implicit.TrainConfig(**{**asdict(cfg), **overrides})
    if isinstance(ts_list, TimeSegmentation):
        ts_list = [ts_list]
    if field is None:
        phi = field_from_echoes(cal)[None]
        temporal = _temporal_of(None)
    else:
        phi = field.on_grid(cal.grid)
        temporal = field.temporal
    sampler = implicit.CalSampler(cal)
    ncoil = cal.ncoil
    phi_flat = phi.reshape(phi.shape[0], -1)  # (P, V)

    sel = plan.valid
    orient = plan.orientations[sel]
    mask = plan.src_mask[sel]
    pool_o, pool_m, pool_f, pool_s = [], [], [], []
    for ts in ts_list:
        _, f_c, f_s = _segment_features(plan, ts, temporal, sel)
        pool_o.append(orient)
        pool_m.append(mask)
        pool_f.append(f_c)
        pool_s.append(f_s)
    pool_o = np.concatenate(pool_o)
    pool_m = np.concatenate(pool_m)
    pool_f = np.concatenate(pool_f)
    pool_s = np.concatenate(pool_s)
    _, nsrc, dim = pool_o.shape
    nfield = pool_f.shape[1]
    fscale = np.maximum(np.abs(pool_f).max(axis=0), 1e-12)
    lo, hi = implicit._target_bounds(sampler, pool_o)
    scale = sampler.scale

    def synth(rng, batch, k=1):
        # k targets per drawn tuple, in consecutive rows
        choice = np.repeat(rng.integers(0, pool_o.shape[0], size=batch), k)
        batch = batch * k
        o, m, fs = pool_o[choice], pool_m[choice], pool_s[choice]
        tgt = rng.uniform(lo, hi, size=(batch, dim))
        if cfg.snap_targets:
            tgt = np.clip(np.rint(tgt), np.ceil(lo), np.floor(hi))
        src_k = (tgt[:, None, :] + o).reshape(-1, dim)
        src_phase = (fs.reshape(-1, fs.shape[-1]) @ phi_flat)  # (B*D, V)
        s = sampler.direct(src_k, src_phase).reshape(ncoil, batch, nsrc)
        s = np.moveaxis(s, 0, -1) * m[:, :, None]
        t = sampler.direct(tgt).T
        return o, m, pool_f[choice], s / scale, t / scale

    widths = [dim * nsrc + nsrc + nfield] + list(cfg.hidden) + [2 * nsrc * ncoil * ncoil]
    params = implicit.init_params(widths, cfg)
    net = implicit.KernelNet(
        params,
        dim=dim,
        nsrc=nsrc,
        ncoil=ncoil,
        w_max=cfg.w_max,
        nfield=nfield,
        field_scale=fscale,
        config=asdict(cfg),
        orient_radius=float(np.linalg.norm(pool_o, axis=-1).max()),
        field_range=np.stack([pool_f.min(axis=0), pool_f.max(axis=0)]),
        ts_keys=tuple(ts.key for ts in ts_list),
    )
    if cfg.whiten:
        _, _, _, s0, _ = synth(np.random.default_rng(cfg.seed + 7), 4096)
        net.out_transform = implicit.whitening_transform(s0, cfg.lam)

    def draw(rng):
        k = cfg.targets_per_orient
        o, m, f, s, t = synth(rng, cfg.batch, k)
        return net.features(o[::k], m[::k], f[::k]), s, t

    return implicit._train(net, cfg, draw, telemetry)


def correct_and_grid(
    data: np.ndarray,
    traj: Trajectory,
    net: implicit.KernelNet,
    plan: implicit.GriddingPlan,
    ts: TimeSegmentation,
    weights: Optional[np.ndarray] = None,
    field: Optional["sim.FieldMap"] = None,
    kernels: Optional[np.ndarray] = None,
):
    """Grid with field-conditioned kernels.

    Every output sample carries the phase of its segment center, so the
    reconstruction uses zero-order segmentation over the returned segment
    indices. A network without field inputs grids exactly like
    :func:`implicit.igrog_grid`, with collisions merged per segment.

    Returns
    -------
    gridded : (C, M'), coords : (M', d) int, segment : (M',) int
    """
    if net.nfield and ts.key not in net.ts_keys:
        raise ValueError("network was not trained for this time segmentation")
    if plan.nsamples != len(traj) or ts.h.shape[0] != len(traj):
        raise ValueError("plan, segmentation and trajectory disagree")
    sel = plan.valid
    seg, f_c, _ = _segment_features(plan, ts, _temporal_of(field), sel)
    if kernels is None:
        feats = f_c if net.nfield else None
        kernels = implicit.query_kernels(net, plan, field_feats=_scatter(feats, sel), select=sel)
    up = implicit.readout_interpolate(data, traj, plan.factor)
    src = implicit.gather_sources(plan, up.data)[sel]
    est = implicit.apply_kernels(kernels, src)
    w = None if weights is None else np.asarray(weights)[sel]
    coords, out, keys, _ = merge_collisions(plan.targets[sel], est, w, key=seg)
    return out, coords, keys


def _scatter(vals, sel):
    if vals is None:
        return None
    full = np.zeros((len(sel),) + vals.shape[1:])
    full[sel] = vals
    return full


# ---------------------------------------------------------------------------
# time-segmentation experiment
# ---------------------------------------------------------------------------


def _segment_ts(seg: np.ndarray, ts: TimeSegmentation) -> TimeSegmentation:
    h = np.zeros((len(seg), ts.nseg))
    h[np.arange(len(seg)), seg] = 1.0
    return TimeSegmentation(ts.centers, h, "zero-order", ts.phase_basis)


def tseg_sweep(
    n: int = 64,
    ncoil: int = 12,
    shots: int = 4,
    duration: float = 60e-3,
    samples_per_shot: int = 2400,
    n_cal: int = 32,
    coeffs: Optional[dict] = None,
    nseg: Sequence[int] = tuple(range(1, 18)),
    corrected: Sequence[int] = (2, 4),
    iters: int = 30,
    train: Optional[dict] = None,
    net: Optional[implicit.KernelNet] = None,
    seed: int = 0,
    csv_path: Optional[str] = None,
):
    """NRMSE versus number of segments with and without field-corrected gridding.

    The uncorrected pipeline is a time-segmented NUFFT CG-SENSE on the raw
    data; the corrected pipeline grids with a field-conditioned network and
    runs a time-segmented gridded CG-SENSE. Both are compared against a
    NUFFT CG-SENSE of the same acquisition without the field. One network
    is trained for all corrected segment counts.

    Returns ``(rows, net)`` with rows ``dict(nseg, corrected, nrmse)``.
    """
    grid = Grid(2, n)
    coeffs = coeffs if coeffs is not None else {"1": 10.0, "x2": 200.0, "y2": 200.0, "xy": 80.0}
    img = sim.shepp_logan(grid, modified=True).image
    maps = sim.synth_coil_maps(grid, ncoil, seed=seed)
    traj = sim.vds_spiral(grid, shots=shots, accel=1.0, samples_per_shot=samples_per_shot, duration=duration)
    field = sim.quadratic_field_map(grid, coeffs)
    data = sim.brute_force_forward(img, maps, traj, field)
    clean = sim.brute_force_forward(img, maps, traj)
    cal = sim.make_calibration(img, maps, n_cal)
    s0 = analysis.CoilSim(grid, img, maps, traj, clean, cal)
    _, oracle = analysis.nufft_pipeline(s0, iters=iters)
    mask = img != 0

    p = nufft.plan(grid, traj)
    w = dcf.pipe_menon(nufft.plan(grid, traj, alpha=2.0))
    segs = {L: time_segmentation(traj.times, field, L, seed=seed) for L in sorted(set(nseg) | set(corrected))}
    rows = []
    for L in nseg:
        op = recon.make_sense_op(maps, plan=p, ts=segs[L])
        x = recon.cg_sense(op, data, iters=iters, weights=w)
        rows.append(dict(nseg=L, corrected=False, nrmse=analysis.nrmse(x, oracle, mask)))
        log.info("tseg %s", rows[-1])

    if corrected:
        plan = implicit.build_gridding_plan(traj, grid, nsrc=3)
        if net is None:
            net = train_field_kernelnet(cal, plan, [segs[L] for L in corrected], field=field, **(train or {}))
        for L in corrected:
            ts = segs[L]
            g, coords, seg = correct_and_grid(data, traj, net, plan, ts, weights=w, field=field)
            wg = dcf.pipe_menon(nufft.plan(grid, coords.astype(np.float64), alpha=2.0))
            op = recon.make_sense_op(maps, coords=coords, ts=_segment_ts(seg, ts))
            x = recon.cg_sense(op, g, iters=iters, weights=wg)
            rows.append(dict(nseg=L, corrected=True, nrmse=analysis.nrmse(x, oracle, mask)))
            log.info("tseg %s", rows[-1])
    if csv_path:
        analysis.write_csv(csv_path, ["nseg", "corrected", "nrmse"], [[r["nseg"], int(r["corrected"]), r["nrmse"]] for r in rows])
    return rows, net
