"""Shared domain types, coordinate conventions and the array file format.

Conventions used throughout the package:

* k-space coordinates are in grid units (cycles per FOV, ``dk = 1``).
* Image voxel positions are integers in ``[-N/2, N/2)``; the voxel at array
  index ``N/2`` is the origin.
* Cartesian k-space arrays are stored centered: array index 0 is the most
  negative frequency and DC sits at index ``N/2``.
* The forward transform is ``b(k) = sum_r m(r) exp(-j 2 pi k.r / N)``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Grid",
    "Trajectory",
    "CoilMaps",
    "Calibration",
    "FormatError",
    "usable_calibration_region",
    "usable_coordinate_bounds",
    "spatial_axes",
    "write_array",
    "read_array",
    "fftc",
    "ifftc",
    "ifftc_adj",
    "image_coords",
    "cartesian_coords",
    "pad_center",
    "crop_center",
]

CAL_MARGIN = 2


class FormatError(ValueError):
    """Raised when an array file pair is inconsistent."""


@dataclass(frozen=True)
class Grid:
    """Isotropic Cartesian grid with ``n`` points per axis."""

    dim: int
    n: int
    fov: float = 1.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"grid dim must be 2 or 3, got {self.dim}")
        if self.n < 8:
            raise ValueError(f"grid extent must be >= 8, got {self.n}")

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Non-Cartesian sample locations grouped into readouts.

    Parameters
    ----------
    coords : ndarray, shape (M, d)
        k-space coordinates in grid units.
    times : ndarray, shape (M,)
        Sample times in seconds.
    readout_id : ndarray, shape (M,)
        Readout each sample belongs to. Readouts are contiguous blocks.
    """

    coords: np.ndarray
    times: np.ndarray
    readout_id: np.ndarray
    accel: float = 1.0

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] not in (2, 3):
            raise ValueError("coords must be (M, d) with d in {2, 3}")
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        rid = np.asarray(self.readout_id, dtype=np.int64).reshape(-1)
        if times.shape[0] != coords.shape[0] or rid.shape[0] != coords.shape[0]:
            raise ValueError("coords, times and readout_id lengths differ")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "readout_id", rid)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def __len__(self) -> int:
        return self.coords.shape[0]

    def readouts(self) -> list:
        """Return ``(start, stop)`` index pairs of each readout, in order."""
        rid = self.readout_id
        if len(rid) == 0:
            return []
        breaks = np.flatnonzero(np.diff(rid) != 0) + 1
        starts = np.concatenate([[0], breaks])
        stops = np.concatenate([breaks, [len(rid)]])
        if len(np.unique(rid)) != len(starts):
            raise ValueError("readouts must be contiguous blocks of samples")
        return list(zip(starts.tolist(), stops.tolist()))

    def check_within(self, grid: Grid) -> None:
        if self.dim != grid.dim:
            raise ValueError("trajectory and grid dimensionality differ")
        if len(self) and (self.coords.min() < -grid.n / 2 or self.coords.max() >= grid.n / 2):
            raise ValueError("trajectory leaves the grid [-N/2, N/2)")


@dataclass(frozen=True, eq=False)
class CoilMaps:
    """Complex coil sensitivities, shape ``(C, *grid.shape)``."""

    maps: np.ndarray

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=np.complex128)
        if maps.ndim not in (3, 4) or maps.shape[0] < 1:
            raise ValueError("maps must be (C, *grid) with C >= 1")
        object.__setattr__(self, "maps", maps)

    @property
    def ncoil(self) -> int:
        return self.maps.shape[0]


@dataclass(frozen=True, eq=False)
class Calibration:
    """Fully sampled Cartesian center of k-space.

    ``kdata`` has shape ``(E, C, *grid.shape)``; ``te`` holds the echo times
    (length ``E``). A single-echo calibration uses ``E = 1``.
    """

    grid: Grid
    kdata: np.ndarray
    te: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        kdata = np.asarray(self.kdata, dtype=np.complex128)
        if kdata.ndim == self.grid.dim + 1:
            kdata = kdata[None]
        if kdata.shape[2:] != self.grid.shape:
            raise ValueError("calibration data does not match its grid")
        te = np.atleast_1d(np.asarray(self.te, dtype=np.float64))
        if te.shape[0] != kdata.shape[0]:
            raise ValueError("one echo time per calibration echo is required")
        if te.shape[0] > 1 and np.any(np.diff(te) <= 0):
            raise ValueError("echo times must be strictly increasing")
        if not np.all(np.isfinite(kdata)):
            raise ValueError("calibration data must be finite")
        object.__setattr__(self, "kdata", kdata)
        object.__setattr__(self, "te", te)

    @property
    def ncoil(self) -> int:
        return self.kdata.shape[1]

    @property
    def necho(self) -> int:
        return self.kdata.shape[0]


def usable_calibration_region(cal: Calibration, margin: int = CAL_MARGIN):
    """Index bounds of the calibration region after dropping the border.

    Returns
    -------
    lo, hi : int
        Inclusive array-index bounds, identical on every axis.
    """
    n = cal.grid.n
    if n < 2 * 2 * margin + 1:
        raise ValueError("calibration too small")
    return margin, n - 1 - margin


def usable_coordinate_bounds(cal: Calibration, margin: int = CAL_MARGIN):
    """Same as :func:`usable_calibration_region` but in k-space units."""
    lo, hi = usable_calibration_region(cal, margin)
    half = cal.grid.n // 2
    return float(lo - half), float(hi - half)


# ---------------------------------------------------------------------------
# array file format
# ---------------------------------------------------------------------------

_DTYPES = {"c64": np.complex64, "c128": np.complex128}


def _paths(path):
    path = os.fspath(path)
    base = path[: -len(".carr")] if path.endswith(".carr") else path
    return base + ".carr", base + ".json"


def write_array(path, arr, meta: Optional[dict] = None) -> None:
    """Write ``arr`` as ``<path>.carr`` (raw little-endian) + ``<path>.json``."""
    arr = np.asarray(arr)
    if arr.dtype == np.complex64:
        tag = "c64"
    else:
        arr = arr.astype(np.complex128, copy=False)
        tag = "c128"
    bin_path, hdr_path = _paths(path)
    header = {
        "shape": [int(s) for s in arr.shape],
        "dtype": tag,
        "order": "row-major",
        "endian": "little",
    }
    if meta:
        header["meta"] = meta
    data = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False)
    with open(bin_path, "wb") as f:
        f.write(data.tobytes(order="C"))
    with open(hdr_path, "w") as f:
        json.dump(header, f, indent=2, sort_keys=True)


def read_array(path, with_meta: bool = False):
    bin_path, hdr_path = _paths(path)
    with open(hdr_path) as f:
        header = json.load(f)
    try:
        shape = tuple(int(s) for s in header["shape"])
        dtype = np.dtype(_DTYPES[header["dtype"]]).newbyteorder("<")
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad header in {hdr_path}: {exc}") from None
    if header.get("order", "row-major") != "row-major" or header.get("endian", "little") != "little":
        raise FormatError("only row-major little-endian arrays are supported")
    raw = open(bin_path, "rb").read()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"payload has {len(raw)} bytes, header implies {expected} ({int(np.prod(shape))} elements)"
        )
    arr = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if with_meta:
        return arr, header.get("meta", {})
    return arr


# ---------------------------------------------------------------------------
# centered FFTs and grid helpers
# ---------------------------------------------------------------------------


def fftc(x, axes: Sequence[int]):
    """Centered, unnormalized forward DFT over ``axes``."""
    x = np.fft.ifftshift(x, axes=axes)
    x = np.fft.fftn(x, axes=axes)
    return np.fft.fftshift(x, axes=axes)


def ifftc(x, axes: Sequence[int]):
    """Centered inverse DFT (normalized, so ``ifftc(fftc(x)) == x``)."""
    x = np.fft.ifftshift(x, axes=axes)
    x = np.fft.ifftn(x, axes=axes)
    return np.fft.fftshift(x, axes=axes)


def ifftc_adj(x, axes: Sequence[int]):
    """Exact adjoint of :func:`fftc` (unnormalized inverse)."""
    x = np.fft.ifftshift(x, axes=axes)
    x = np.fft.ifftn(x, axes=axes, norm="forward")
    return np.fft.fftshift(x, axes=axes)


def image_coords(n: int, dim: int) -> np.ndarray:
    """Voxel positions, shape ``(dim, n, ..., n)``, values in ``[-n/2, n/2)``."""
    ax = np.arange(n) - n // 2
    return np.stack(np.meshgrid(*([ax] * dim), indexing="ij"))


def cartesian_coords(n: int, dim: int) -> np.ndarray:
    """All integer k-space locations of an ``n^dim`` grid, shape ``(n^dim, dim)``."""
    return image_coords(n, dim).reshape(dim, -1).T.astype(np.float64)


def pad_center(x, shape: Sequence[int]):
    """Zero-pad the trailing ``len(shape)`` axes symmetrically about index n/2."""
    nd = len(shape)
    out = np.zeros(x.shape[: x.ndim - nd] + tuple(shape), dtype=x.dtype)
    sl = tuple(slice(s // 2 - n // 2, s // 2 - n // 2 + n) for s, n in zip(shape, x.shape[-nd:]))
    out[(Ellipsis,) + sl] = x
    return out


def crop_center(x, shape: Sequence[int]):
    """Adjoint of :func:`pad_center`."""
    nd = len(shape)
    sl = tuple(slice(s // 2 - n // 2, s // 2 - n // 2 + n) for s, n in zip(x.shape[-nd:], shape))
    return x[(Ellipsis,) + sl]


def spatial_axes(dim: int) -> tuple:
    return tuple(range(-dim, 0))
