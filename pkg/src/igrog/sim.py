"""Ground-truth generators and the direct-summation forward model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    Calibration,
    CoilMaps,
    Grid,
    Trajectory,
    crop_center,
    fftc,
    image_coords,
    spatial_axes,
)

__all__ = [
    "Phantom",
    "FieldMap",
    "SHEPP_LOGAN",
    "MODIFIED_SHEPP_LOGAN",
    "shepp_logan",
    "synth_coil_maps",
    "vds_spiral",
    "quadratic_field_map",
    "brute_force_forward",
    "add_noise",
    "cartesian_kspace",
    "make_calibration",
]

# (x0, y0, a, b, angle_deg, intensity) in normalized [-1, 1] coordinates
SHEPP_LOGAN = (
    (0.0, 0.0, 0.69, 0.92, 0.0, 2.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98),
    (0.22, 0.0, 0.11, 0.31, -18.0, -0.02),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -0.02),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.01),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.01),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.01),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.01),
    (0.0, -0.605, 0.023, 0.023, 0.0, 0.01),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.01),
)

# Toft's higher-contrast intensities, same geometry
MODIFIED_SHEPP_LOGAN = tuple(
    e[:5] + (v,) for e, v in zip(SHEPP_LOGAN, (1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1))
)


@dataclass(frozen=True, eq=False)
class Phantom:
    ellipses: tuple
    image: np.ndarray


@dataclass(frozen=True, eq=False)
class FieldMap:
    """Separable phase model ``phi(r, t) = sum_p basis[p](r) * alpha_p(t)``.

    ``basis`` has shape ``(P, *grid)`` and is expressed in cycles per unit of
    the temporal coefficient (Hz when ``alpha(t) = t``). ``fn``, when given,
    evaluates the basis at arbitrary physical positions so the map can be
    re-sampled exactly on another grid (e.g. the calibration grid).
    """

    basis: np.ndarray
    temporal: Callable[[np.ndarray], np.ndarray] = field(default=None)
    fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    fov: float = 1.0

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=np.float64)
        if basis.ndim not in (3, 4):
            raise ValueError("basis must be (P, *grid)")
        object.__setattr__(self, "basis", basis)
        if self.temporal is None:
            object.__setattr__(self, "temporal", _b0_temporal)

    @property
    def nbasis(self) -> int:
        return self.basis.shape[0]

    def alphas(self, times) -> np.ndarray:
        """Temporal coefficients, shape ``(M, P)``."""
        a = np.asarray(self.temporal(np.asarray(times, dtype=np.float64)), dtype=np.float64)
        return a.reshape(len(np.atleast_1d(times)), self.nbasis)

    def phase(self, times) -> np.ndarray:
        """``phi(r, t)`` in cycles, shape ``(M, *grid)``."""
        a = self.alphas(times)
        return np.tensordot(a, self.basis, axes=(1, 0))

    def on_grid(self, grid: Grid) -> np.ndarray:
        """Basis maps sampled on ``grid`` (same FOV), shape ``(P, *grid.shape)``."""
        if grid.shape == self.basis.shape[1:]:
            return self.basis
        if self.fn is not None:
            pos = image_coords(grid.n, grid.dim) * (self.fov / grid.n)
            return np.asarray(self.fn(pos), dtype=np.float64).reshape((self.nbasis,) + grid.shape)
        from scipy.ndimage import zoom

        n0 = self.basis.shape[1]
        return np.stack([zoom(b, grid.n / n0, order=1) for b in self.basis])


def _b0_temporal(t):
    return np.asarray(t, dtype=np.float64)[:, None]


def _ellipse_coords(n: int, dim: int):
    # axis 0 runs top to bottom, axis 1 left to right
    pos = image_coords(n, dim) / (n / 2)
    if dim == 2:
        return pos[1], -pos[0], None
    return pos[1], -pos[0], pos[2]


def shepp_logan(grid: Grid, modified: bool = False) -> Phantom:
    """Render the 10-ellipse Shepp-Logan phantom by point sampling.

    For a 3D grid each ellipse is extended to an ellipsoid whose third
    semi-axis equals its second; the result is a stack of scaled slices.
    """
    table = MODIFIED_SHEPP_LOGAN if modified else SHEPP_LOGAN
    x, y, z = _ellipse_coords(grid.n, grid.dim)
    img = np.zeros(grid.shape)
    for x0, y0, a, b, ang, val in table:
        th = np.deg2rad(ang)
        xr = (x - x0) * np.cos(th) + (y - y0) * np.sin(th)
        yr = -(x - x0) * np.sin(th) + (y - y0) * np.cos(th)
        q = (xr / a) ** 2 + (yr / b) ** 2
        if z is not None:
            q = q + (z / b) ** 2
        img[q <= 1.0] += val
    return Phantom(ellipses=table, image=img.astype(np.complex128))


def _sphere_points(c: int) -> np.ndarray:
    i = np.arange(c) + 0.5
    polar = np.arccos(1 - 2 * i / c)
    azim = np.pi * (1 + 5**0.5) * i
    return np.stack([np.cos(polar), np.sin(polar) * np.cos(azim), np.sin(polar) * np.sin(azim)], axis=1)


def synth_coil_maps(grid: Grid, ncoil: int, seed: int = 0, width: float = 0.3) -> CoilMaps:
    """Gaussian-profile coil maps around the FOV, RSS-normalized to one.

    Parameters
    ----------
    grid : Grid
    ncoil : int
        Number of coils.
    seed : int
        Seeds the per-coil phase ramps.
    width : float
        Gaussian standard deviation as a fraction of the FOV.
    """
    if ncoil < 1:
        raise ValueError("ncoil must be >= 1")
    rng = np.random.default_rng(seed)
    n, dim = grid.n, grid.dim
    pos = image_coords(n, dim).astype(np.float64)
    if dim == 2:
        ang = 2 * np.pi * np.arange(ncoil) / ncoil
        centers = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        centers = _sphere_points(ncoil)
    centers = 0.45 * n * centers
    sigma = width * n
    ramps = rng.uniform(-0.5, 0.5, size=(ncoil, dim))
    offsets = rng.uniform(0, 2 * np.pi, size=ncoil)
    maps = np.empty((ncoil,) + grid.shape, dtype=np.complex128)
    for c in range(ncoil):
        d2 = sum((pos[i] - centers[c, i]) ** 2 for i in range(dim))
        mag = np.exp(-d2 / (2 * sigma**2))
        ph = offsets[c] + 2 * np.pi * sum(ramps[c, i] * pos[i] for i in range(dim)) / n
        maps[c] = mag * np.exp(1j * ph)
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return CoilMaps(maps / rss)


def vds_spiral(
    grid: Grid,
    shots: int = 16,
    accel: float = 2.0,
    density_power: float = 1.5,
    samples_per_shot: int = 2048,
    duration: float = 10e-3,
    t0: float = 0.0,
    kmax_frac: float = 1.0,
) -> Trajectory:
    """Interleaved variable-density spiral-out trajectory.

    Each interleave follows ``r = kmax * tau**density_power`` and
    ``theta = 2 pi turns tau + 2 pi shot / shots`` for ``tau`` in [0, 1]
    sampled uniformly in time. ``turns`` is chosen so that neighbouring
    interleaves are ``accel`` grid units apart at the edge of k-space.
    """
    if grid.dim != 2:
        raise ValueError("vds_spiral generates 2D trajectories")
    if shots < 1 or accel < 1 or samples_per_shot < 2:
        raise ValueError("need shots >= 1, accel >= 1, samples_per_shot >= 2")
    kmax = kmax_frac * (grid.n / 2) * (1 - 1e-7)
    if kmax >= grid.n / 2:
        raise ValueError("spiral leaves the grid: max |k| >= N/2")
    turns = kmax * density_power / (accel * shots)
    tau = np.linspace(0.0, 1.0, samples_per_shot)
    r = kmax * tau**density_power
    coords, times, rid = [], [], []
    dwell = duration / samples_per_shot
    for s in range(shots):
        th = 2 * np.pi * turns * tau + 2 * np.pi * s / shots
        coords.append(np.stack([r * np.cos(th), r * np.sin(th)], axis=1))
        times.append(t0 + dwell * np.arange(samples_per_shot))
        rid.append(np.full(samples_per_shot, s))
    return Trajectory(np.concatenate(coords), np.concatenate(times), np.concatenate(rid), accel=accel)


_POLY_TERMS = {
    "1": (0, 0, 0),
    "x": (1, 0, 0),
    "y": (0, 1, 0),
    "z": (0, 0, 1),
    "x2": (2, 0, 0),
    "y2": (0, 2, 0),
    "z2": (0, 0, 2),
    "xy": (1, 1, 0),
    "xz": (1, 0, 1),
    "yz": (0, 1, 1),
}


def quadratic_field_map(grid: Grid, coeffs: dict) -> FieldMap:
    """Polynomial off-resonance map (Hz) up to second order.

    ``coeffs`` maps term names (``"1"``, ``"x"``, ``"y"``, ``"z"``, ``"x2"``,
    ``"xy"``, ``"y2"``, ...) to coefficients; positions are physical, in units
    of the grid FOV, with the origin at the grid center. ``x`` runs along
    array axis 0.
    """
    unknown = set(coeffs) - set(_POLY_TERMS)
    if unknown:
        raise ValueError(f"unknown polynomial terms: {sorted(unknown)}")
    items = [(_POLY_TERMS[k], float(v)) for k, v in coeffs.items()]
    dim = grid.dim

    def fn(pos):
        out = np.zeros(pos.shape[1:])
        for powers, c in items:
            term = np.full(pos.shape[1:], c)
            for ax, p in enumerate(powers):
                if p:
                    if ax >= dim:
                        term = term * 0.0
                    else:
                        term = term * pos[ax] ** p
            out = out + term
        return out[None]

    pos = image_coords(grid.n, dim) * (grid.fov / grid.n)
    return FieldMap(basis=fn(pos), fn=fn, fov=grid.fov)


def brute_force_forward(
    img: np.ndarray,
    maps: CoilMaps,
    traj: Trajectory,
    field: Optional[FieldMap] = None,
    chunk: int = 2048,
) -> np.ndarray:
    """Direct evaluation of the multi-coil signal model.

    ``b_c(t_i) = sum_r m(r) s_c(r) exp(-j2pi k_i.r/N) exp(-j2pi phi(r, t_i))``

    Returns an array of shape ``(C, M)``. Cost is ``O(C M N^d)``.
    """
    dim = traj.dim
    n = img.shape[-1]
    if img.shape != maps.maps.shape[1:] or img.ndim != dim:
        raise ValueError("image, maps and trajectory shapes are inconsistent")
    coil_img = maps.maps * img  # (C, *grid)
    ncoil = coil_img.shape[0]
    m_total = len(traj)
    out = np.empty((ncoil, m_total), dtype=np.complex128)
    ax = np.arange(n) - n // 2
    for start in range(0, m_total, chunk):
        stop = min(start + chunk, m_total)
        k = traj.coords[start:stop]
        if field is None and dim == 2:
            ex = np.exp(-2j * np.pi * np.outer(k[:, 0], ax) / n)  # (m, X)
            ey = np.exp(-2j * np.pi * np.outer(k[:, 1], ax) / n)  # (m, Y)
            tmp = coil_img @ ey.T  # (C, X, m)
            out[:, start:stop] = np.einsum("cxm,mx->cm", tmp, ex)
            continue
        pos = image_coords(n, dim).reshape(dim, -1).astype(np.float64)
        arg = (k @ pos) / n
        if field is not None:
            arg = arg + field.phase(traj.times[start:stop]).reshape(stop - start, -1)
        enc = np.exp(-2j * np.pi * arg)
        out[:, start:stop] = coil_img.reshape(ncoil, -1) @ enc.T
    return out


def add_noise(data: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    """Add circular complex Gaussian noise with per-component std ``sigma``."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return np.array(data, dtype=np.complex128, copy=True)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(data.shape) + 1j * rng.standard_normal(data.shape)
    return data + sigma * noise


def cartesian_kspace(img: np.ndarray, maps: CoilMaps, phase: Optional[np.ndarray] = None) -> np.ndarray:
    """Full centered Cartesian k-space of every coil image, ``(C, *grid)``."""
    x = maps.maps * img
    if phase is not None:
        x = x * np.exp(-2j * np.pi * phase)
    return fftc(x, axes=spatial_axes(img.ndim))


def make_calibration(
    img: np.ndarray,
    maps: CoilMaps,
    n_cal: int,
    field: Optional[FieldMap] = None,
    te=(0.0,),
    fov: float = 1.0,
) -> Calibration:
    """Fully sampled center of k-space, optionally one block per echo time."""
    dim = img.ndim
    te = np.atleast_1d(np.asarray(te, dtype=np.float64))
    echoes = []
    for t in te:
        phase = None
        if field is not None:
            phase = field.phase(np.array([t]))[0]
        k = cartesian_kspace(img, maps, phase)
        echoes.append(crop_center(k, (n_cal,) * dim))
    return Calibration(Grid(dim, n_cal, fov=fov), np.stack(echoes), te)
