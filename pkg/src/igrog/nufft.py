"""Kaiser-Bessel gridding NUFFT and the Toeplitz normal operator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import i0

from .core import Grid, Trajectory, crop_center, fftc, ifftc_adj, image_coords, pad_center, spatial_axes

__all__ = [
    "NufftPlan",
    "ToeplitzPsf",
    "kb_beta",
    "kaiser_bessel",
    "kb_transform",
    "interp_matrix",
    "plan",
    "forward",
    "adjoint",
    "degrid",
    "spread",
    "toeplitz_psf",
    "normal_toeplitz",
]


def kb_beta(alpha: float, width: float) -> float:
    """Beatty et al. shape parameter for oversampling ``alpha`` and width ``width``."""
    return math.pi * math.sqrt((width / alpha) ** 2 * (alpha - 0.5) ** 2 - 0.8)


def kaiser_bessel(u, width: float, beta: float):
    """Kaiser-Bessel kernel, zero outside ``|u| <= width/2``."""
    u = np.asarray(u, dtype=np.float64)
    arg = 1.0 - (2.0 * u / width) ** 2
    out = np.zeros_like(u)
    inside = arg >= 0
    out[inside] = i0(beta * np.sqrt(arg[inside]))
    return out


def kb_transform(x, width: float, beta: float):
    """Continuous Fourier transform of :func:`kaiser_bessel` at frequency ``x``."""
    x = np.asarray(x, dtype=np.float64)
    z2 = beta**2 - (np.pi * width * x) ** 2
    out = np.empty_like(x)
    pos = z2 > 1e-12
    neg = z2 < -1e-12
    mid = ~(pos | neg)
    z = np.sqrt(z2[pos])
    out[pos] = width * np.sinh(z) / z
    z = np.sqrt(-z2[neg])
    out[neg] = width * np.sin(z) / z
    out[mid] = width
    return out


def interp_matrix(coords: np.ndarray, alpha: float, os_n: int, width: float, beta: float) -> sp.csr_matrix:
    """Sparse KB interpolation from the centered oversampled grid to ``coords``.

    Row ``m`` holds the ``ceil(width)**d`` kernel weights of sample ``m``;
    grid indices wrap periodically.
    """
    coords = np.asarray(coords, dtype=np.float64)
    m, dim = coords.shape
    taps = int(math.ceil(width))
    u = alpha * coords
    start = np.ceil(u - width / 2.0)
    offs = np.arange(taps)
    idx1 = start[:, :, None] + offs  # (M, d, taps)
    w1 = kaiser_bessel(u[:, :, None] - idx1, width, beta)
    idx1 = (idx1.astype(np.int64) + os_n // 2) % os_n
    vals = w1[:, 0, :]
    cols = idx1[:, 0, :]
    for ax in range(1, dim):
        vals = (vals[:, :, None] * w1[:, ax, None, :]).reshape(m, -1)
        cols = (cols[:, :, None] * os_n + idx1[:, ax, None, :]).reshape(m, -1)
    nnz = vals.shape[1]
    indptr = np.arange(0, m * nnz + 1, nnz, dtype=np.int64)
    mat = sp.csr_matrix((vals.ravel(), cols.ravel(), indptr), shape=(m, os_n**dim))
    mat.sum_duplicates()
    return mat


@dataclass(frozen=True, eq=False)
class NufftPlan:
    """Precomputed state for one grid/trajectory pair.

    ``apod`` is the image-domain correction (inverse kernel transform)
    applied before the oversampled FFT.
    """

    grid: Grid
    coords: np.ndarray
    alpha: float
    width: float
    beta: float
    os_n: int
    apod: np.ndarray
    interp: Optional[sp.csr_matrix] = None

    @property
    def nsamples(self) -> int:
        return self.coords.shape[0]

    @property
    def os_shape(self) -> tuple:
        return (self.os_n,) * self.grid.dim

    def matrix(self) -> sp.csr_matrix:
        if self.interp is not None:
            return self.interp
        return interp_matrix(self.coords, self.alpha, self.os_n, self.width, self.beta)


def plan(grid: Grid, traj, alpha: float = 1.5, width: float = 6.0, precompute: bool = True) -> NufftPlan:
    """Build a NUFFT plan.

    Parameters
    ----------
    grid : Grid
        Image grid.
    traj : Trajectory or ndarray
        Sample locations (``(M, d)`` array or a :class:`Trajectory`).
    alpha : float
        Oversampling factor, ``1 < alpha <= 2``; ``alpha * N`` is rounded up
        to an even integer and the effective value is stored.
    width : float
        Kernel width in oversampled-grid units (``>= 2``).
    precompute : bool
        Keep the sparse interpolation matrix in the plan instead of
        rebuilding it on every call.
    """
    if alpha <= 1:
        raise ValueError("oversampling alpha must be > 1")
    if width < 2:
        raise ValueError("kernel width must be >= 2")
    coords = traj.coords if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != grid.dim:
        raise ValueError("coords must be (M, grid.dim)")
    if coords.size and (coords.min() < -grid.n / 2 or coords.max() >= grid.n / 2):
        raise ValueError("trajectory leaves the grid [-N/2, N/2)")
    os_n = int(math.ceil(alpha * grid.n))
    os_n += os_n % 2
    alpha = os_n / grid.n
    beta = kb_beta(alpha, width)
    pos = image_coords(grid.n, grid.dim) / os_n
    apod = np.ones(grid.shape)
    for ax in range(grid.dim):
        apod = apod / kb_transform(pos[ax], width, beta)
    interp = interp_matrix(coords, alpha, os_n, width, beta) if precompute else None
    return NufftPlan(grid, np.array(coords), alpha, width, beta, os_n, apod, interp)


def _check_image(p: NufftPlan, img):
    if img.shape[img.ndim - p.grid.dim :] != p.grid.shape:
        raise ValueError(f"image trailing shape {img.shape} does not match grid {p.grid.shape}")


def degrid(p: NufftPlan, kgrid: np.ndarray) -> np.ndarray:
    """Interpolate oversampled-grid values to the samples: ``(..., K^d) -> (..., M)``."""
    lead = kgrid.shape[: kgrid.ndim - p.grid.dim]
    flat = kgrid.reshape((-1, p.os_n**p.grid.dim))
    out = (p.matrix() @ flat.T).T
    return out.reshape(lead + (p.nsamples,))


def spread(p: NufftPlan, samples: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`degrid`: ``(..., M) -> (..., K^d)``."""
    lead = samples.shape[:-1]
    flat = samples.reshape((-1, p.nsamples))
    out = (p.matrix().T @ flat.T).T
    return out.reshape(lead + p.os_shape)


def forward(p: NufftPlan, img: np.ndarray) -> np.ndarray:
    """Apodize, zero-pad, FFT and interpolate: ``(..., *N^d) -> (..., M)``."""
    _check_image(p, img)
    x = pad_center(img * p.apod, p.os_shape)
    k = fftc(x, axes=spatial_axes(p.grid.dim))
    return degrid(p, k)


def adjoint(p: NufftPlan, samples: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Exact adjoint of :func:`forward`, with optional sample pre-weighting."""
    samples = np.asarray(samples)
    if samples.shape[-1] != p.nsamples:
        raise ValueError(f"expected {p.nsamples} samples, got {samples.shape[-1]}")
    if weights is not None:
        samples = samples * weights
    k = spread(p, samples)
    x = ifftc_adj(k, axes=spatial_axes(p.grid.dim))
    return crop_center(x, p.grid.shape) * p.apod


@dataclass(frozen=True, eq=False)
class ToeplitzPsf:
    """Spectrum of the ``(2N)^d`` circulant embedding of ``A^H W A``."""

    grid: Grid
    psf: np.ndarray  # centered kernel h(delta), delta in [-N, N)^d
    spectrum: np.ndarray


def toeplitz_psf(p: NufftPlan, weights: Optional[np.ndarray] = None) -> ToeplitzPsf:
    """Point spread function such that ``normal_toeplitz == adjoint(forward(.), weights)``."""
    n, dim = p.grid.n, p.grid.dim
    w = np.ones(p.nsamples) if weights is None else np.asarray(weights)
    big = Grid(dim, 2 * n, p.grid.fov)
    p2 = plan(big, 2.0 * p.coords, alpha=p.alpha, width=p.width)
    h = adjoint(p2, w.astype(np.complex128))
    # shifts of exactly -N never occur between two voxels of the N-grid
    for ax in range(dim):
        sl = [slice(None)] * dim
        sl[ax] = 0
        h[tuple(sl)] = 0
    axes = spatial_axes(dim)
    spec = np.fft.fftn(np.fft.ifftshift(h, axes=axes), axes=axes)
    return ToeplitzPsf(p.grid, h, spec)


def normal_toeplitz(psf: ToeplitzPsf, img: np.ndarray) -> np.ndarray:
    """Apply ``A^H W A`` by zero-padded FFT convolution."""
    dim = psf.grid.dim
    axes = spatial_axes(dim)
    big = (2 * psf.grid.n,) * dim
    x = np.fft.ifftshift(pad_center(img, big), axes=axes)
    y = np.fft.ifftn(np.fft.fftn(x, axes=axes) * psf.spectrum, axes=axes)
    return crop_center(np.fft.fftshift(y, axes=axes), psf.grid.shape)
