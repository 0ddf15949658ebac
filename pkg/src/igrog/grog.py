"""GRAPPA operator gridding with per-axis unit-shift kernels."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Calibration, Trajectory, usable_calibration_region

__all__ = [
    "AxisKernels",
    "calibrate_axis_kernels",
    "frac_power",
    "grog_grid",
    "merge_collisions",
    "DEFAULT_LAMBDAS",
]

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (1e-4, 1e-3, 1e-2, 1e-1)


@dataclass(frozen=True, eq=False)
class AxisKernels:
    """Unit-shift kernels ``G[axis]`` (C x C) with cached eigendecompositions.

    ``G[a] @ s(k)`` estimates ``s(k + e_a)``.
    """

    G: tuple
    lam: float
    evals: tuple
    evecs: tuple
    evecs_inv: tuple
    flagged: tuple

    @classmethod
    def from_matrices(cls, mats: Sequence[np.ndarray], lam: float = 0.0) -> "AxisKernels":
        evals, evecs, inv, flagged = [], [], [], []
        for g in mats:
            w, v = np.linalg.eig(g)
            if np.min(np.abs(w)) < 1e-12:
                raise ValueError("defective kernel: eigenvalue at zero")
            cond = np.linalg.cond(v)
            flagged.append(bool(cond > 1e8))
            if cond > 1e8:
                log.warning("kernel eigenvectors ill-conditioned (cond=%.3g)", cond)
            near_cut = np.abs(np.angle(w)) > np.pi - 1e-6
            if np.any(near_cut):
                log.warning("%d eigenvalues near the negative real axis", int(near_cut.sum()))
            evals.append(w)
            evecs.append(v)
            inv.append(np.linalg.inv(v))
        return cls(tuple(np.asarray(g) for g in mats), lam, tuple(evals), tuple(evecs), tuple(inv), tuple(flagged))

    @property
    def dim(self) -> int:
        return len(self.G)


def calibrate_axis_kernels(cal: Calibration, lam: float = 1e-3, echo: int = 0) -> AxisKernels:
    """Least-squares unit-shift kernels from the usable calibration region.

    Solves ``G = T S^H (S S^H + lam_eff I)^-1`` per axis, where ``S`` and ``T``
    stack the C-coil vectors at ``k`` and ``k + e_axis``. ``lam`` is relative:
    ``lam_eff = lam * trace(S S^H) / C``.
    """
    lo, hi = usable_calibration_region(cal)
    if hi - lo + 1 < 8:
        raise ValueError("usable calibration region must span at least 8 points per axis")
    k = cal.kdata[echo]
    ncoil, dim = k.shape[0], cal.grid.dim
    region = k[(slice(None),) + (slice(lo, hi + 1),) * dim]
    mats = []
    for ax in range(dim):
        src = [slice(None)] * (dim + 1)
        tgt = [slice(None)] * (dim + 1)
        src[ax + 1] = slice(0, -1)
        tgt[ax + 1] = slice(1, None)
        S = region[tuple(src)].reshape(ncoil, -1)
        T = region[tuple(tgt)].reshape(ncoil, -1)
        SSh = S @ S.conj().T
        lam_eff = lam * np.real(np.trace(SSh)) / ncoil
        A = SSh + lam_eff * np.eye(ncoil)
        if lam <= 0 and np.linalg.cond(A) > 1e14:
            raise ValueError("normal matrix is singular; use lam > 0")
        # G A = T S^H  ->  A^H G^H = S T^H
        G = np.linalg.solve(A.conj().T, S @ T.conj().T).conj().T
        mats.append(G)
    return AxisKernels.from_matrices(mats, lam)


def frac_power(G, delta: float, *, evals=None, evecs=None, evecs_inv=None) -> np.ndarray:
    """``G**delta`` through the eigendecomposition, principal branch."""
    if evals is None:
        evals, evecs = np.linalg.eig(G)
        if np.min(np.abs(evals)) < 1e-12:
            raise ValueError("defective kernel: eigenvalue at zero")
        evecs_inv = np.linalg.inv(evecs)
    powered = np.exp(delta * np.log(evals.astype(np.complex128)))
    return (evecs * powered) @ evecs_inv


def _apply_axis(kern: AxisKernels, ax: int, z: np.ndarray, delta: np.ndarray) -> np.ndarray:
    # z: (C, M); per-sample G_ax**delta[m] @ z[:, m]
    logw = np.log(kern.evals[ax].astype(np.complex128))
    y = kern.evecs_inv[ax] @ z
    y = y * np.exp(logw[:, None] * delta[None, :])
    return kern.evecs[ax] @ y


def merge_collisions(targets: np.ndarray, data: np.ndarray, weights: Optional[np.ndarray] = None, key=None):
    """Weighted average of samples sharing a target (and ``key``, if given).

    Returns ``(unique_targets, merged_data, unique_keys, inverse)`` where
    ``inverse`` maps each input sample to its merged output row.
    """
    targets = np.asarray(targets, dtype=np.int64)
    cols = [targets]
    if key is not None:
        cols = [np.asarray(key, dtype=np.int64)[:, None], targets]
    table = np.concatenate(cols, axis=1)
    uniq, inverse = np.unique(table, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n = uniq.shape[0]
    w = np.ones(targets.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    wsum = np.bincount(inverse, weights=w, minlength=n)
    out = np.empty((data.shape[0], n), dtype=np.complex128)
    for c in range(data.shape[0]):
        re = np.bincount(inverse, weights=w * data[c].real, minlength=n)
        im = np.bincount(inverse, weights=w * data[c].imag, minlength=n)
        out[c] = (re + 1j * im) / wsum
    if key is not None:
        return uniq[:, 1:], out, uniq[:, 0], inverse
    return uniq, out, None, inverse


def grog_grid(
    data: np.ndarray,
    traj,
    kernels: AxisKernels,
    *,
    targets: Optional[np.ndarray] = None,
    weights: Optional[np.ndarray] = None,
    order: Optional[Sequence[int]] = None,
    merge: bool = True,
):
    """Shift every sample onto a Cartesian point with fractional kernel powers.

    Parameters
    ----------
    data : ndarray, shape (C, M)
    traj : Trajectory or ndarray (M, d)
        Source sample locations.
    kernels : AxisKernels
    targets : ndarray (M, d) of int, optional
        Destination grid points; nearest grid point by default.
    weights : ndarray (M,), optional
        Collision-averaging weights (pre-gridding DCF).
    order : sequence of int, optional
        Axis application order; ``(0, 1[, 2])`` by default.
    merge : bool
        Average samples landing on the same target.

    Returns
    -------
    gridded : ndarray (C, M') and coords : ndarray (M', d) of int
    """
    coords = traj.coords if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    if targets is None:
        targets = np.round(coords).astype(np.int64)
    delta = targets - coords
    z = np.asarray(data, dtype=np.complex128)
    for ax in order if order is not None else range(kernels.dim):
        nz = delta[:, ax] != 0
        if np.any(nz):
            z = z.copy()
            z[:, nz] = _apply_axis(kernels, ax, z[:, nz], delta[nz, ax])
    if not merge:
        return z, targets
    uniq, out, _, _ = merge_collisions(targets, z, weights)
    return out, uniq
