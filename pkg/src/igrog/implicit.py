"""Implicit GROG: an MLP that emits a multi-source GRAPPA kernel per gridding geometry.

The pipeline is

1. :func:`readout_interpolate` - 4x sinc upsampling of every readout;
2. :func:`build_gridding_plan` - nearest Cartesian target and ``D`` source
   points along the readout arc for every sample;
3. :func:`train_kernelnet` - self-supervised training on calibration data;
4. :func:`igrog_grid` - query the network and apply the kernels.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import resample

from . import mlpkit
from .core import (
    Calibration,
    Grid,
    Trajectory,
    fftc,
    ifftc,
    image_coords,
    pad_center,
    read_array,
    spatial_axes,
    usable_calibration_region,
    usable_coordinate_bounds,
    write_array,
)
from .grog import AxisKernels, grog_grid, merge_collisions
from .nufft import interp_matrix, kb_beta, kb_transform

__all__ = [
    "UpsampledReadouts",
    "GriddingPlan",
    "CalSampler",
    "TrainConfig",
    "KernelNet",
    "readout_interpolate",
    "build_gridding_plan",
    "gather_sources",
    "gen_training_batch",
    "train_kernelnet",
    "query_kernels",
    "apply_kernels",
    "igrog_grid",
    "grog_grid_along_readout",
    "whitening_transform",
]

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# readout interpolation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UpsampledReadouts:
    """Readouts upsampled by ``factor``; original sample ``i`` of a readout
    starting at ``start`` sits at upsampled index ``up_start + factor*(i-start)``."""

    data: Optional[np.ndarray]  # (C, M_up)
    traj: Trajectory
    factor: int
    starts: np.ndarray  # upsampled start index per readout
    sample_index: np.ndarray  # (M,) upsampled index of each original sample


def _upsample_signal(x: np.ndarray, factor: int) -> np.ndarray:
    # even extension keeps the periodized signal continuous at the ends
    n = x.shape[-1]
    ext = np.concatenate([x, x[..., ::-1]], axis=-1)
    up = resample(ext, 2 * n * factor, axis=-1)
    return up[..., : factor * (n - 1) + 1]


def readout_interpolate(data: Optional[np.ndarray], traj: Trajectory, factor: int = 4) -> UpsampledReadouts:
    """Upsample each readout by ``factor`` with Fourier (sinc) interpolation.

    Coordinates follow a cubic spline through the original samples and times
    are interpolated linearly, so that upsampled sample ``j`` of a readout
    lies at fractional original index ``j / factor``.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    blocks = traj.readouts()
    out_data, out_coords, out_times, out_rid, starts, index = [], [], [], [], [], []
    pos = 0
    for r, (a, b) in enumerate(blocks):
        n = b - a
        if n < 4:
            raise ValueError("readout shorter than 4 samples")
        starts.append(pos)
        index.append(pos + factor * np.arange(n))
        if factor == 1:
            c, t = traj.coords[a:b], traj.times[a:b]
            if data is not None:
                out_data.append(np.asarray(data[:, a:b], dtype=np.complex128))
        else:
            u = np.arange(factor * (n - 1) + 1) / factor
            c = CubicSpline(np.arange(n), traj.coords[a:b], axis=0)(u)
            t = np.interp(u, np.arange(n), traj.times[a:b])
            if data is not None:
                out_data.append(_upsample_signal(np.asarray(data[:, a:b], dtype=np.complex128), factor))
        out_coords.append(c)
        out_times.append(t)
        out_rid.append(np.full(len(t), traj.readout_id[a]))
        pos += len(t)
    up_traj = Trajectory(np.concatenate(out_coords), np.concatenate(out_times), np.concatenate(out_rid), traj.accel)
    up_data = np.concatenate(out_data, axis=1) if data is not None else None
    return UpsampledReadouts(up_data, up_traj, factor, np.asarray(starts), np.concatenate(index))


# ---------------------------------------------------------------------------
# gridding plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GriddingPlan:
    """Per-sample gridding geometry.

    Attributes
    ----------
    targets : (M, d) int
        Nearest Cartesian point of every original sample.
    valid : (M,) bool
        Target inside the image grid.
    src_index : (M, D) float
        Fractional index of each source into the upsampled readout data.
    src_coords : (M, D, d)
    src_mask : (M, D) bool
        False where the stencil runs off the end of its readout.
    orientations : (M, D, d)
        Source positions relative to the target.
    times : (M,)
        Time of the center source.
    src_times : (M, D)
        Acquisition time of every source position.
    """

    grid: Grid
    nsrc: int
    spacing: float
    factor: int
    targets: np.ndarray
    valid: np.ndarray
    src_index: np.ndarray
    src_coords: np.ndarray
    src_mask: np.ndarray
    orientations: np.ndarray
    times: np.ndarray
    src_times: np.ndarray
    readout: np.ndarray

    @property
    def nsamples(self) -> int:
        return self.targets.shape[0]

    @property
    def truncated(self) -> np.ndarray:
        return ~np.all(self.src_mask, axis=1)


def _closest_arc_points(fine: np.ndarray, h: float, s0: np.ndarray, tgt: np.ndarray, search: float):
    """Arc position of the point closest to ``tgt`` within ``s0 +- search``."""
    nf = fine.shape[0]
    win = int(math.ceil(search / h))
    j0 = np.rint(s0 / h).astype(np.int64)
    cand = np.clip(j0[:, None] + np.arange(-win, win + 1)[None, :], 0, nf - 1)
    d2 = np.sum((fine[cand] - tgt[:, None, :]) ** 2, axis=-1)
    best = cand[np.arange(len(s0)), np.argmin(d2, axis=1)]
    s_best = best * h
    dist_best = np.sqrt(d2.min(axis=1))
    # refine on the two neighbouring segments
    for step in (-1, 1):
        j1 = np.clip(best + step, 0, nf - 1)
        a, b = fine[best], fine[j1]
        seg = b - a
        L2 = np.sum(seg**2, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            f = np.where(L2 > 0, np.sum((tgt - a) * seg, axis=1) / L2, 0.0)
        f = np.clip(f, 0.0, 1.0)
        p = a + f[:, None] * seg
        dist = np.linalg.norm(p - tgt, axis=1)
        better = dist < dist_best
        s_best = np.where(better, (best + step * f) * h, s_best)
        dist_best = np.where(better, dist, dist_best)
    return s_best


def _refine_on_polyline(pts: np.ndarray, arc: np.ndarray, s: np.ndarray, tgt: np.ndarray, reach: int = 2):
    """Closest point to ``tgt`` on the segments of ``pts`` near arc position ``s``."""
    nseg = pts.shape[0] - 1
    if nseg < 1:
        return s
    j = np.clip(np.searchsorted(arc, s, side="right") - 1, 0, nseg - 1)
    best_s = s.copy()
    best_d = np.full(s.shape, np.inf)
    for off in range(-reach, reach + 1):
        k = np.clip(j + off, 0, nseg - 1)
        a, b = pts[k], pts[k + 1]
        seg = b - a
        L2 = np.sum(seg**2, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            f = np.where(L2 > 0, np.sum((tgt - a) * seg, axis=1) / L2, 0.0)
        f = np.clip(f, 0.0, 1.0)
        d = np.linalg.norm(a + f[:, None] * seg - tgt, axis=1)
        better = d < best_d
        best_d = np.where(better, d, best_d)
        best_s = np.where(better, arc[k] + f * (arc[k + 1] - arc[k]), best_s)
    return best_s


def build_gridding_plan(
    traj: Trajectory,
    grid: Grid,
    nsrc: int = 3,
    spacing: float = 0.5,
    factor: int = 4,
    arc_step: float = 1.0 / 16,
    search: float = 1.0,
) -> GriddingPlan:
    """Choose targets and readout-arc source stencils for every sample.

    The center source is the point of the (upsampled) readout closest to the
    target, searched within ``search`` arc-length units of the sample; the
    remaining sources are spaced ``spacing`` apart along the arc.
    """
    if nsrc < 1:
        raise ValueError("nsrc must be >= 1")
    up = readout_interpolate(None, traj, factor)
    dim = traj.dim
    m_total = len(traj)
    targets = np.rint(traj.coords).astype(np.int64)
    valid = np.all((targets >= -grid.n // 2) & (targets < grid.n // 2), axis=1)
    offs = (np.arange(nsrc) - (nsrc - 1) / 2.0) * spacing
    src_index = np.zeros((m_total, nsrc))
    src_coords = np.zeros((m_total, nsrc, dim))
    src_mask = np.zeros((m_total, nsrc), dtype=bool)
    times = np.zeros(m_total)
    src_times = np.zeros((m_total, nsrc))
    for r, (a, b) in enumerate(traj.readouts()):
        u0 = up.starts[r]
        n_up = factor * (b - a - 1) + 1
        pts = up.traj.coords[u0 : u0 + n_up]
        tms = up.traj.times[u0 : u0 + n_up]
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        s_end = arc[-1]
        fine_s = np.arange(0.0, s_end + arc_step, arc_step)
        fine = np.stack([np.interp(fine_s, arc, pts[:, i]) for i in range(dim)], axis=1)
        s_samp = arc[factor * np.arange(b - a)]
        tg = targets[a:b].astype(np.float64)
        s_c = _closest_arc_points(fine, arc_step, s_samp, tg, search)
        s_c = _refine_on_polyline(pts, arc, s_c, tg)
        s_src = s_c[:, None] + offs[None, :]
        mask = (s_src >= -1e-12) & (s_src <= s_end + 1e-12)
        s_clip = np.clip(s_src, 0.0, s_end)
        idx = np.interp(s_clip, arc, np.arange(n_up, dtype=np.float64))
        src_index[a:b] = u0 + idx
        for i in range(dim):
            src_coords[a:b, :, i] = np.interp(s_clip, arc, pts[:, i])
        src_mask[a:b] = mask
        times[a:b] = np.interp(s_c, arc, tms)
        src_times[a:b] = np.interp(s_clip, arc, tms)
    orient = src_coords - targets[:, None, :]
    orient[~src_mask] = 0.0
    return GriddingPlan(
        grid=grid,
        nsrc=nsrc,
        spacing=float(spacing),
        factor=factor,
        targets=targets,
        valid=valid,
        src_index=src_index,
        src_coords=src_coords,
        src_mask=src_mask,
        orientations=orient,
        times=times,
        src_times=src_times,
        readout=traj.readout_id.copy(),
    )


def gather_sources(plan: GriddingPlan, up_data: np.ndarray) -> np.ndarray:
    """Linear interpolation of upsampled data at the source positions, ``(M, D, C)``."""
    idx = plan.src_index
    i0 = np.floor(idx).astype(np.int64)
    i1 = np.minimum(i0 + 1, up_data.shape[1] - 1)
    f = idx - i0
    vals = up_data[:, i0] * (1 - f) + up_data[:, i1] * f  # (C, M, D)
    vals = np.moveaxis(vals, 0, -1)
    vals[~plan.src_mask] = 0.0
    return vals


# ---------------------------------------------------------------------------
# calibration sampling
# ---------------------------------------------------------------------------


class CalSampler:
    """Evaluate calibration k-space at off-grid locations.

    The calibration block is treated as the DFT of a low-resolution image;
    values at arbitrary coordinates come from KB interpolation on a 2x
    oversampled grid (``W = 6``). :meth:`direct` evaluates the same quantity
    by explicit summation and optionally applies a field phase per sample.
    """

    def __init__(self, cal: Calibration, echo: int = 0, alpha: float = 2.0, width: float = 6.0):
        self.grid = cal.grid
        n, dim = cal.grid.n, cal.grid.dim
        axes = spatial_axes(dim)
        self.image = ifftc(cal.kdata[echo], axes=axes)  # (C, n^d)
        self.ncoil = self.image.shape[0]
        self.os_n = int(math.ceil(alpha * n))
        self.os_n += self.os_n % 2
        self.alpha = self.os_n / n
        self.width = width
        self.beta = kb_beta(self.alpha, width)
        pos = image_coords(n, dim) / self.os_n
        apod = np.ones(cal.grid.shape)
        for ax in range(dim):
            apod = apod / kb_transform(pos[ax], width, self.beta)
        kgrid = fftc(pad_center(self.image * apod, (self.os_n,) * dim), axes=axes)
        self._kflat = kgrid.reshape(self.ncoil, -1)
        self._pos = image_coords(n, dim).reshape(dim, -1).astype(np.float64)
        lo, hi = usable_coordinate_bounds(cal)
        self.bounds = (lo, hi)
        ilo, ihi = usable_calibration_region(cal)
        region = cal.kdata[echo][(slice(None),) + (slice(ilo, ihi + 1),) * dim]
        self.scale = float(np.mean(np.abs(region)))

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        """Values at ``coords`` (``(n, d)``), shape ``(C, n)``."""
        mat = interp_matrix(coords, self.alpha, self.os_n, self.width, self.beta)
        return (mat @ self._kflat.T).T

    def direct(self, coords: np.ndarray, phase: Optional[np.ndarray] = None) -> np.ndarray:
        """Explicit DFT of the calibration image at ``coords``.

        ``phase`` (``(n, n_cal^d)``, cycles) multiplies the image by
        ``exp(-j 2 pi phase)`` separately for every requested coordinate.
        """
        arg = coords @ self._pos / self.grid.n
        if phase is not None:
            arg = arg + phase
        enc = np.exp(-2j * np.pi * arg)
        return self.image.reshape(self.ncoil, -1) @ enc.T


# ---------------------------------------------------------------------------
# kernel network
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    lam: float = 1e-3
    lr: float = 1e-3
    lr_final: Optional[float] = None
    decay_start: float = 0.0
    epochs: int = 5000
    batch: int = 1024
    hidden: tuple = (256, 256, 256, 256)
    activation: str = "relu"
    loss: str = "l1"
    w_max: float = 2.0
    whiten: bool = True
    snap_targets: bool = False
    targets_per_orient: int = 1
    out_scale: float = 0.01
    seed: int = 0
    log_every: int = 100


@dataclass
class KernelNet:
    """Trained implicit kernel representation.

    ``query`` maps orientations ``(B, D, d)``, source masks ``(B, D)`` and
    optional field features ``(B, F)`` to complex kernels ``(B, C, D*C)``.
    """

    params: mlpkit.MlpParams
    dim: int
    nsrc: int
    ncoil: int
    w_max: float
    nfield: int = 0
    field_scale: Optional[np.ndarray] = None
    config: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    orient_radius: float = 0.0
    field_range: Optional[np.ndarray] = None
    ts_keys: tuple = ()
    out_transform: Optional[np.ndarray] = None

    @property
    def nfeatures(self) -> int:
        return self.dim * self.nsrc + self.nsrc + self.nfield

    def features(self, orient, mask, field_feats=None) -> np.ndarray:
        b = orient.shape[0]
        parts = [orient.reshape(b, -1) / self.w_max, np.asarray(mask, dtype=np.float64)]
        if self.nfield:
            if field_feats is None:
                raise ValueError("this network needs field features")
            parts.append(np.asarray(field_feats, dtype=np.float64).reshape(b, -1) / self.field_scale)
        return np.concatenate(parts, axis=1)

    def kernels_from_output(self, out: np.ndarray) -> np.ndarray:
        b = out.shape[0]
        k = self.nsrc * self.ncoil
        # (re, im) pairs are adjacent in the output, so a complex view is free
        G = np.ascontiguousarray(out, dtype=np.float64).view(np.complex128).reshape(b, self.ncoil, k)
        if self.out_transform is not None:
            # one large GEMM instead of a batch of small ones
            G = (G.reshape(-1, k) @ self.out_transform).reshape(b, self.ncoil, k)
        return G

    def query(self, orient, mask=None, field_feats=None) -> np.ndarray:
        orient = np.asarray(orient, dtype=np.float64)
        if mask is None:
            mask = np.ones(orient.shape[:2], dtype=bool)
        out = mlpkit.mlp_forward(self.params, self.features(orient, mask, field_feats))
        return self.kernels_from_output(out)

    def save(self, prefix: str) -> None:
        extra = {
            "dim": self.dim,
            "nsrc": self.nsrc,
            "ncoil": self.ncoil,
            "w_max": self.w_max,
            "nfield": self.nfield,
            "field_scale": None if self.field_scale is None else np.asarray(self.field_scale).tolist(),
            "config": self.config,
            "orient_radius": self.orient_radius,
            "field_range": None if self.field_range is None else np.asarray(self.field_range).tolist(),
            "ts_keys": list(self.ts_keys),
        }
        mlpkit.save_params(prefix, self.params, extra)
        if self.out_transform is not None:
            write_array(prefix + ".P", self.out_transform)
        with open(prefix + ".telemetry.csv", "w") as f:
            f.write("epoch,loss,grad_norm\n")
            for ep, loss, gn in self.history:
                f.write(f"{ep},{loss:.10g},{gn:.10g}\n")

    @classmethod
    def load(cls, prefix: str) -> "KernelNet":
        params, desc = mlpkit.load_params(prefix)
        fs = desc.get("field_scale")
        fr = desc.get("field_range")
        P = read_array(prefix + ".P") if os.path.exists(prefix + ".P.carr") else None
        return cls(
            params=params,
            dim=desc["dim"],
            nsrc=desc["nsrc"],
            ncoil=desc["ncoil"],
            w_max=desc["w_max"],
            nfield=desc["nfield"],
            field_scale=None if fs is None else np.asarray(fs),
            config=desc.get("config", {}),
            orient_radius=desc.get("orient_radius", 0.0),
            field_range=None if fr is None else np.asarray(fr),
            ts_keys=tuple(desc.get("ts_keys", ())),
            out_transform=P,
        )


def _orientation_set(source):
    if isinstance(source, GriddingPlan):
        keep = source.valid
        return source.orientations[keep], source.src_mask[keep]
    if isinstance(source, tuple):
        orient, mask = source
        orient = np.asarray(orient, dtype=np.float64)
        return orient, np.asarray(mask, dtype=bool)
    orient = np.asarray(source, dtype=np.float64)
    return orient, np.ones(orient.shape[:2], dtype=bool)


def _target_bounds(sampler: CalSampler, orient: np.ndarray):
    lo, hi = sampler.bounds
    span = float(np.abs(orient).max()) if orient.size else 0.0
    lo_t, hi_t = lo + span, hi - span
    if hi_t <= lo_t:
        raise ValueError("calibration region too small for the orientation span")
    return lo_t, hi_t


def gen_training_batch(sampler, orientations, batch: int, rng, snap: bool = False, targets_per_orient: int = 1):
    """Random (sources, targets) pairs synthesized from calibration data.

    Parameters
    ----------
    sampler : CalSampler or Calibration
    orientations : GriddingPlan, (orient, mask) tuple or ``(K, D, d)`` array
        The stored orientation set; tuples are drawn from it uniformly.
    batch : int
    rng : numpy Generator or int seed
    snap : bool
        Round target coordinates to the integer grid.
    targets_per_orient : int
        Independent targets ``K`` paired with each drawn tuple. Rows come in
        consecutive groups of ``K`` sharing one tuple.

    Returns
    -------
    sources : (B*K, D, C) complex
    targets : (B*K, C) complex
    orient : (B*K, D, d)
    mask : (B*K, D) bool
    choice : (B*K,) int
        Index of each row's tuple in the orientation set.
    """
    if batch <= 0:
        raise ValueError("batch must be positive")
    if targets_per_orient <= 0:
        raise ValueError("targets_per_orient must be positive")
    if isinstance(sampler, Calibration):
        sampler = CalSampler(sampler)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    oset, mset = _orientation_set(orientations)
    if oset.shape[0] == 0:
        raise ValueError("empty orientation set")
    lo, hi = _target_bounds(sampler, oset)
    dim = oset.shape[2]
    tgt = rng.uniform(lo, hi, size=(batch * targets_per_orient, dim))
    if snap:
        tgt = np.clip(np.rint(tgt), math.ceil(lo), math.floor(hi))
    choice = np.repeat(rng.integers(0, oset.shape[0], size=batch), targets_per_orient)
    batch = batch * targets_per_orient
    orient, mask = oset[choice], mset[choice]
    coords = np.concatenate([tgt[:, None, :], tgt[:, None, :] + orient], axis=1).reshape(-1, dim)
    vals = sampler(coords).reshape(sampler.ncoil, batch, -1)  # (C, B, D+1)
    vals = np.moveaxis(vals, 0, -1)
    targets = vals[:, 0, :]
    sources = vals[:, 1:, :]
    sources = np.where(mask[:, :, None], sources, 0.0)
    return sources, targets, orient, mask, choice


def whitening_transform(sources: np.ndarray, lam: float) -> np.ndarray:
    """``(Sigma + lam I)^(-1/2)`` for the covariance ``Sigma`` of stacked sources.

    The kernel is parameterized as ``G = G_net @ P``. ``P`` is fixed, so the
    optimum is unchanged, but the output layer sees decorrelated sources.
    """
    n = sources.shape[0]
    s = sources.reshape(n, -1)
    cov = s.T @ s.conj() / n
    w, v = np.linalg.eigh(cov)
    w = np.maximum(w, 0.0) + max(lam, 1e-8 * w.max())
    return (v * w**-0.5) @ v.conj().T


def init_params(widths, cfg: TrainConfig) -> mlpkit.MlpParams:
    """MLP init with the output layer shrunk by ``cfg.out_scale``.

    With whitening the output is amplified by ``P``; a small initial kernel
    keeps the first steps away from a huge-loss plateau.
    """
    params = mlpkit.mlp_init(widths, seed=cfg.seed, activation=cfg.activation)
    W, b = params.layers[-1]
    params.layers[-1] = (W * cfg.out_scale, b)
    return params


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_final is None or cfg.epochs <= 1:
        return cfg.lr
    start = int(cfg.decay_start * cfg.epochs)
    if epoch < start:
        return cfg.lr
    frac = (epoch - start) / max(cfg.epochs - 1 - start, 1)
    return cfg.lr * (cfg.lr_final / cfg.lr) ** frac


def _loss_and_grad(net: KernelNet, feats, sources, targets, lam: float, loss: str):
    """Batch mean of ``L(G s - t) + lam ||G||_F^2`` and its gradient.

    ``sources`` and ``targets`` may hold ``K`` consecutive rows per feature
    row; the data term is then averaged over each group of ``K``.
    """
    out, cache = mlpkit.mlp_forward(net.params, feats, return_cache=True)
    G = net.kernels_from_output(out)
    b = G.shape[0]
    k = sources.shape[0] // b
    if k * b != sources.shape[0]:
        raise ValueError("sources rows must be a multiple of feature rows")
    s = sources.reshape(b, k, -1)
    est = np.einsum("bcs,bks->bkc", G, s)
    t = targets.reshape(b, k, -1)
    if loss == "l1":
        val, g_est = mlpkit.l1_loss(est, t)
    elif loss == "l2":
        val, g_est = mlpkit.l2_loss(est, t)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    val = (val / k + lam * float(np.sum(np.abs(G) ** 2))) / b
    dG = (np.einsum("bkc,bks->bcs", g_est, s.conj()) / k + 2.0 * lam * G) / b
    if net.out_transform is not None:
        k = dG.shape[-1]
        dG = (dG.reshape(-1, k) @ net.out_transform.conj().T).reshape(dG.shape)
    dout = np.ascontiguousarray(dG).view(np.float64).reshape(out.shape)
    grads = mlpkit.mlp_grad(net.params, feats, dout, cache=cache)
    return val, grads


def _train(net: KernelNet, cfg: TrainConfig, draw, telemetry=None) -> KernelNet:
    """Shared Adam loop; ``draw(rng)`` returns ``(feats, sources, targets)``."""
    rng = np.random.default_rng(cfg.seed + 1)
    state = mlpkit.adam_init(net.params, lr=cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        feats, sources, targets = draw(rng)
        val, grads = _loss_and_grad(net, feats, sources, targets, cfg.lam, cfg.loss)
        if not np.isfinite(val):
            raise FloatingPointError(f"training diverged at epoch {epoch} with config {asdict(cfg)}")
        mlpkit.adam_step(state, net.params, grads, lr=_lr_at(cfg, epoch))
        if epoch % cfg.log_every == 0 or epoch == cfg.epochs - 1:
            gn = math.sqrt(sum(float(np.sum(gw**2) + np.sum(gb**2)) for gw, gb in grads))
            history.append((epoch, val, gn))
            if telemetry is not None:
                telemetry(epoch, val, gn)
    net.history = history
    return net


def train_kernelnet(
    cal: Calibration,
    orientation_source,
    config: Optional[TrainConfig] = None,
    telemetry=None,
    **overrides,
) -> KernelNet:
    """Fit ``f(d_1..d_D) -> G`` on calibration data with Adam.

    Minimizes the batch mean of ``L(G s - t) + lam ||G||_F^2`` where the
    sources ``s`` and target ``t`` are synthesized by
    :func:`gen_training_batch`. Data are divided by the mean calibration
    magnitude, so ``lam`` is expressed relative to unit-scale data.
    """
    cfg = config or TrainConfig()
    if overrides:
        cfg = TrainConfig(**{**asdict(cfg), **overrides})
    sampler = CalSampler(cal)
    oset, mset = _orientation_set(orientation_source)
    if oset.shape[0] == 0:
        raise ValueError("empty orientation set")
    _, nsrc, dim = oset.shape
    ncoil = cal.ncoil
    widths = [dim * nsrc + nsrc] + list(cfg.hidden) + [2 * nsrc * ncoil * ncoil]
    params = init_params(widths, cfg)
    net = KernelNet(
        params,
        dim=dim,
        nsrc=nsrc,
        ncoil=ncoil,
        w_max=cfg.w_max,
        config=asdict(cfg),
        orient_radius=float(np.linalg.norm(oset, axis=-1).max()),
    )
    scale = sampler.scale
    if cfg.whiten:
        s0, *_ = gen_training_batch(sampler, (oset, mset), 8192, np.random.default_rng(cfg.seed + 7))
        net.out_transform = whitening_transform(s0 / scale, cfg.lam)

    def draw(rng):
        k = cfg.targets_per_orient
        s, t, o, m, _ = gen_training_batch(sampler, (oset, mset), cfg.batch, rng, cfg.snap_targets, k)
        return net.features(o[::k], m[::k]), s / scale, t / scale

    return _train(net, cfg, draw, telemetry)


# ---------------------------------------------------------------------------
# applying kernels
# ---------------------------------------------------------------------------


def query_kernels(net: KernelNet, plan: GriddingPlan, field_feats=None, chunk: int = 4096, select=None):
    """Kernels for every (selected) sample of ``plan``, ``(M, C, D*C)``."""
    idx = np.arange(plan.nsamples) if select is None else np.flatnonzero(select)
    out = np.empty((len(idx), net.ncoil, net.nsrc * net.ncoil), dtype=np.complex128)
    for a in range(0, len(idx), chunk):
        sl = idx[a : a + chunk]
        ff = None if field_feats is None else field_feats[sl]
        out[a : a + chunk] = net.query(plan.orientations[sl], plan.src_mask[sl], ff)
    return out


def apply_kernels(kernels: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """``G @ [s_1; ...; s_D]`` per sample: ``(M, C, DC), (M, D, C) -> (C, M)``."""
    m = sources.shape[0]
    return np.einsum("mcs,ms->cm", kernels, sources.reshape(m, -1))


def _check_distribution(net: KernelNet, plan: GriddingPlan, sel: np.ndarray) -> int:
    radius = np.linalg.norm(plan.orientations[sel], axis=-1).max(axis=1)
    n_out = int(np.sum(radius > net.orient_radius + 1e-9))
    if n_out:
        log.warning("%d samples have orientations outside the training distribution", n_out)
    return n_out


def igrog_grid(
    data: np.ndarray,
    traj: Trajectory,
    net: KernelNet,
    plan: GriddingPlan,
    weights: Optional[np.ndarray] = None,
    kernels: Optional[np.ndarray] = None,
    merge: bool = True,
):
    """Grid non-Cartesian data with network-generated kernels.

    Parameters
    ----------
    data : (C, M) raw samples, aligned with ``traj``.
    traj : Trajectory
    net : KernelNet
    plan : GriddingPlan
        Built from ``traj``.
    weights : (M,), optional
        Pre-gridding DCF used to average colliding targets.
    kernels : optional
        Output of :func:`query_kernels` on the valid samples, to skip the
        network evaluation when gridding many datasets.

    Returns
    -------
    gridded : (C, M') and coords : (M', d) int
    """
    if plan.nsamples != len(traj):
        raise ValueError("plan was built for a different trajectory")
    up = readout_interpolate(data, traj, plan.factor)
    sel = plan.valid
    if kernels is None:
        _check_distribution(net, plan, sel)
        kernels = query_kernels(net, plan, select=sel)
    src = gather_sources(plan, up.data)[sel]
    est = apply_kernels(kernels, src)
    if not merge:
        return est, plan.targets[sel]
    w = None if weights is None else np.asarray(weights)[sel]
    uniq, out, _, _ = merge_collisions(plan.targets[sel], est, w)
    return out, uniq


def grog_grid_along_readout(
    data: np.ndarray,
    traj: Trajectory,
    kernels: AxisKernels,
    plan: GriddingPlan,
    weights: Optional[np.ndarray] = None,
    merge: bool = True,
):
    """GROG from the interpolated readout point closest to each target.

    ``plan`` must be a single-source plan (``nsrc == 1``).
    """
    if plan.nsrc != 1:
        raise ValueError("GROG uses a single source per target")
    up = readout_interpolate(data, traj, plan.factor)
    sel = plan.valid
    src = gather_sources(plan, up.data)[sel, 0, :].T  # (C, M')
    w = None if weights is None else np.asarray(weights)[sel]
    return grog_grid(
        src,
        plan.src_coords[sel, 0, :],
        kernels,
        targets=plan.targets[sel],
        weights=w,
        merge=merge,
    )
