"""SENSE forward models and iterative solvers (CG-SENSE, FISTA with L1-Haar)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import nufft
from .core import CoilMaps, Grid, fftc, ifftc_adj, spatial_axes

__all__ = [
    "LinearOp",
    "SolverTrace",
    "make_sense_op",
    "max_eigen",
    "cg_sense",
    "fista_l1",
    "haar_forward",
    "haar_inverse",
]


@dataclass(eq=False)
class LinearOp:
    """Linear map with an explicit adjoint.

    ``normal(x, w)`` evaluates ``A^H diag(w) A x``; it defaults to composing
    the adjoint with the forward map, and concrete operators override it with
    a cheaper equivalent when one exists.
    """

    ishape: tuple
    oshape: tuple
    forward: Callable
    adjoint: Callable
    normal_fn: Optional[Callable] = None
    scale: float = 1.0
    name: str = "op"

    def apply(self, x):
        return self.scale * self.forward(x)

    def apply_adjoint(self, y):
        return self.scale * self.adjoint(y)

    def normal(self, x, weights=None):
        if self.normal_fn is not None:
            return self.scale**2 * self.normal_fn(x, weights)
        y = self.forward(x)
        if weights is not None:
            y = y * weights
        return self.scale**2 * self.adjoint(y)

    def scaled(self, s: float) -> "LinearOp":
        return LinearOp(self.ishape, self.oshape, self.forward, self.adjoint, self.normal_fn, self.scale * s, self.name)


def _segment_phases(ts, field_basis: np.ndarray) -> np.ndarray:
    # exp(-j 2 pi sum_p phi_p(r) beta_lp) per segment, shape (L, *grid)
    arg = np.tensordot(ts.centers, field_basis, axes=(1, 0))
    return np.exp(-2j * np.pi * arg)


def make_sense_op(
    maps,
    plan: Optional[nufft.NufftPlan] = None,
    coords: Optional[np.ndarray] = None,
    ts=None,
    field_basis: Optional[np.ndarray] = None,
    toeplitz_weights: Optional[np.ndarray] = None,
    toeplitz: bool = True,
) -> LinearOp:
    """Multi-coil SENSE operator ``image -> (C, M)``.

    Parameters
    ----------
    maps : CoilMaps or ndarray (C, *grid)
    plan : NufftPlan, optional
        Non-gridded model: coil weighting followed by a NUFFT.
    coords : ndarray (M, d) of int, optional
        Gridded model: coil weighting, centered FFT, gather at ``coords``.
    ts : TimeSegmentation, optional
        Adds ``sum_l h_l(t) exp(-j 2 pi phi(r) . beta_l)`` to either model;
        needs ``field_basis`` (``(P, *grid)``, cycles per unit of alpha).
    toeplitz_weights : ndarray (M,), optional
        For the non-gridded model without time segmentation, precompute a
        Toeplitz PSF for these weights so that ``normal(x, w)`` with the same
        ``w`` avoids the NUFFT.
    """
    s = maps.maps if isinstance(maps, CoilMaps) else np.asarray(maps, dtype=np.complex128)
    ncoil = s.shape[0]
    gshape = s.shape[1:]
    dim = len(gshape)
    axes = spatial_axes(dim)
    if (plan is None) == (coords is None):
        raise ValueError("give exactly one of plan or coords")
    if ts is not None:
        if field_basis is None:
            field_basis = getattr(ts, "phase_basis", None)
        if field_basis is None:
            raise ValueError("time segmentation needs field_basis")
        phases = _segment_phases(ts, field_basis)
        h = np.asarray(ts.h, dtype=np.float64)
    else:
        phases = None
        h = None

    if coords is not None:
        coords = np.asarray(coords)
        n = gshape[0]
        if coords.size and (coords.min() < -n // 2 or coords.max() >= n // 2):
            raise ValueError("gridded coordinates outside the grid")
        idx = np.ravel_multi_index(tuple((coords + n // 2).astype(np.int64).T), gshape)
        m = len(idx)
        if h is not None and h.shape[0] != m:
            raise ValueError("time segmentation does not match the gridded samples")

        def fwd_single(x):
            k = fftc(s * x, axes=axes).reshape(ncoil, -1)
            return k[:, idx]

        def adj_single(y):
            k = np.zeros((ncoil, int(np.prod(gshape))), dtype=np.complex128)
            for c in range(ncoil):
                k[c] = np.bincount(idx, weights=y[c].real, minlength=k.shape[1]) + 1j * np.bincount(
                    idx, weights=y[c].imag, minlength=k.shape[1]
                )
            return np.sum(s.conj() * ifftc_adj(k.reshape((ncoil,) + gshape), axes=axes), axis=0)

        def mask_of(w):
            wm = np.ones(m) if w is None else np.asarray(w, dtype=np.float64)
            return np.bincount(idx, weights=wm, minlength=int(np.prod(gshape))).reshape(gshape)

        _mask_cache = [object(), None]

        def cached_mask(w):
            # keyed on identity; holding the reference keeps the key valid
            if _mask_cache[0] is not w:
                _mask_cache[:] = [w, mask_of(w)]
            return _mask_cache[1]

        if phases is None:

            def normal_fn(x, w):
                msk = cached_mask(w)
                k = fftc(s * x, axes=axes) * msk
                return np.sum(s.conj() * ifftc_adj(k, axes=axes), axis=0)

            return LinearOp(gshape, (ncoil, m), fwd_single, adj_single, normal_fn, name="gridded")

        def fwd_ts(x):
            out = np.zeros((ncoil, m), dtype=np.complex128)
            for l in range(phases.shape[0]):
                sel = h[:, l] != 0
                if np.any(sel):
                    out[:, sel] += h[sel, l] * fwd_single(x * phases[l])[:, sel]
            return out

        def adj_ts(y):
            out = np.zeros(gshape, dtype=np.complex128)
            for l in range(phases.shape[0]):
                if np.any(h[:, l] != 0):
                    out += phases[l].conj() * adj_single(y * h[:, l])
            return out

        zero_order = bool(np.all(np.sum(h != 0, axis=1) <= 1))
        if not zero_order:
            return LinearOp(gshape, (ncoil, m), fwd_ts, adj_ts, name="gridded-ts")

        def normal_ts(x, w):
            wm = np.ones(m) if w is None else np.asarray(w, dtype=np.float64)
            out = np.zeros(gshape, dtype=np.complex128)
            for l in range(phases.shape[0]):
                wl = wm * h[:, l] ** 2
                if not np.any(wl):
                    continue
                msk = mask_of(wl)
                k = fftc(s * (x * phases[l]), axes=axes) * msk
                out += phases[l].conj() * np.sum(s.conj() * ifftc_adj(k, axes=axes), axis=0)
            return out

        return LinearOp(gshape, (ncoil, m), fwd_ts, adj_ts, normal_ts, name="gridded-ts")

    m = plan.nsamples
    if h is not None and h.shape[0] != m:
        raise ValueError("time segmentation does not match the trajectory")

    def nfwd(x):
        return nufft.forward(plan, s * x)

    def nadj(y):
        return np.sum(s.conj() * nufft.adjoint(plan, y), axis=0)

    if phases is not None:

        def fwd_ts(x):
            out = np.zeros((ncoil, m), dtype=np.complex128)
            for l in range(phases.shape[0]):
                out += h[:, l] * nfwd(x * phases[l])
            return out

        def adj_ts(y):
            out = np.zeros(gshape, dtype=np.complex128)
            for l in range(phases.shape[0]):
                out += phases[l].conj() * nadj(y * h[:, l])
            return out

        return LinearOp(gshape, (ncoil, m), fwd_ts, adj_ts, name="nufft-ts")

    normal_fn = None
    if toeplitz:
        psfs = []
        if toeplitz_weights is not None:
            psfs.append((toeplitz_weights, nufft.toeplitz_psf(plan, toeplitz_weights)))

        def normal_fn(x, w):
            psf = next((p for key, p in psfs if key is w), None)
            if psf is None:
                if w is not None:
                    return nadj(nfwd(x) * w)
                psf = nufft.toeplitz_psf(plan)
                psfs.append((None, psf))
            return np.sum(s.conj() * nufft.normal_toeplitz(psf, s * x), axis=0)

    return LinearOp(gshape, (ncoil, m), nfwd, nadj, normal_fn, name="nufft")


def max_eigen(op: LinearOp, iters: int = 30, seed: int = 0, weights=None) -> float:
    """Largest eigenvalue of ``A^H W A`` by power iteration (Rayleigh quotient)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.ishape) + 1j * rng.standard_normal(op.ishape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = op.normal(x, weights)
        lam = float(np.real(np.vdot(x, y)))
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0
        x = y / nrm
    return lam


@dataclass
class SolverTrace:
    """Per-iteration residual, objective and wall time (ms)."""

    residual: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    lam_max: float = float("nan")

    def to_csv(self, path: str) -> None:
        with open(path, "w") as f:
            f.write("iter,residual,objective,wall_ms\n")
            for i, (r, o, t) in enumerate(zip(self.residual, self.objective, self.wall_ms)):
                f.write(f"{i},{r:.10g},{o:.10g},{t:.4f}\n")


def cg_sense(
    op: LinearOp,
    data: np.ndarray,
    iters: int = 20,
    weights: Optional[np.ndarray] = None,
    lam_max: Optional[float] = None,
    tol: float = 1e-8,
    x0: Optional[np.ndarray] = None,
    return_trace: bool = False,
):
    """Conjugate gradients on ``A^H W A x = A^H W b``.

    The operator is normalized by ``1/sqrt(lam_max)`` before iterating and
    the result is mapped back to the scale of the unnormalized problem.
    """
    if lam_max is None:
        lam_max = max_eigen(op, weights=weights)
    if not lam_max > 0:
        raise ValueError("normal operator has no positive eigenvalue")
    a = op.scaled(1.0 / np.sqrt(lam_max))
    b = data if weights is None else data * weights
    rhs = a.apply_adjoint(b)
    x = np.zeros(op.ishape, dtype=np.complex128) if x0 is None else np.array(x0, dtype=np.complex128) * np.sqrt(lam_max)
    r = rhs - a.normal(x, weights) if x0 is not None else rhs.copy()
    p = r.copy()
    rr = float(np.real(np.vdot(r, r)))
    r0 = np.sqrt(float(np.real(np.vdot(rhs, rhs)))) or 1.0
    trace = SolverTrace(lam_max=lam_max)
    t0 = time.perf_counter()
    for it in range(iters):
        if np.sqrt(rr) / r0 <= tol:
            break
        q = a.normal(p, weights)
        pq = float(np.real(np.vdot(p, q)))
        if not np.isfinite(pq) or pq <= 0:
            if not np.isfinite(pq):
                raise FloatingPointError(f"CG breakdown at iteration {it}: p^H A p = {pq}")
            break
        alpha = rr / pq
        x += alpha * p
        r -= alpha * q
        rr_new = float(np.real(np.vdot(r, r)))
        if not np.isfinite(rr_new):
            raise FloatingPointError(f"non-finite CG residual at iteration {it}")
        p = r + (rr_new / rr) * p
        rr = rr_new
        trace.residual.append(np.sqrt(rr) / r0)
        trace.objective.append(float("nan"))
        trace.wall_ms.append(1e3 * (time.perf_counter() - t0))
    x = x / np.sqrt(lam_max)
    if return_trace:
        return x, trace
    return x


# ---------------------------------------------------------------------------
# Haar wavelet and FISTA
# ---------------------------------------------------------------------------


def _haar_axis(x, axis, inverse=False):
    x = np.moveaxis(x, axis, 0)
    half = x.shape[0] // 2
    out = np.empty_like(x)
    r2 = np.sqrt(0.5)
    if not inverse:
        out[:half] = (x[0::2] + x[1::2]) * r2
        out[half:] = (x[0::2] - x[1::2]) * r2
    else:
        a, d = x[:half], x[half:]
        out[0::2] = (a + d) * r2
        out[1::2] = (a - d) * r2
    return np.moveaxis(out, 0, axis)


def haar_forward(x: np.ndarray, levels: int = 3) -> np.ndarray:
    """Orthonormal separable Haar transform, coefficients in Mallat layout."""
    x = np.array(x, dtype=np.complex128)
    n = x.shape[0]
    if n % (2**levels):
        raise ValueError(f"grid size {n} not divisible by 2**{levels}")
    size = n
    for _ in range(levels):
        sl = (slice(0, size),) * x.ndim
        blk = x[sl]
        for ax in range(x.ndim):
            blk = _haar_axis(blk, ax)
        x[sl] = blk
        size //= 2
    return x


def haar_inverse(c: np.ndarray, levels: int = 3) -> np.ndarray:
    x = np.array(c, dtype=np.complex128)
    size = x.shape[0] // 2 ** (levels - 1)
    for _ in range(levels):
        sl = (slice(0, size),) * x.ndim
        blk = x[sl]
        for ax in range(x.ndim):
            blk = _haar_axis(blk, ax, inverse=True)
        x[sl] = blk
        size *= 2
    return x


def _soft(z, t):
    mag = np.abs(z)
    return np.where(mag > t, (1 - t / np.maximum(mag, 1e-300)) * z, 0.0)


def fista_l1(
    op: LinearOp,
    data: np.ndarray,
    lam_reg: float,
    iters: int = 40,
    weights: Optional[np.ndarray] = None,
    levels: int = 3,
    lam_max: Optional[float] = None,
    return_trace: bool = False,
):
    """FISTA for ``0.5 ||W^(1/2) (A x - b)||^2 + lam_reg ||Psi x||_1``.

    ``Psi`` is the orthonormal Haar transform; the step is ``1/lam_max``.
    """
    if lam_reg < 0:
        raise ValueError("lam_reg must be >= 0")
    if lam_max is None:
        lam_max = max_eigen(op, weights=weights)
    step = 1.0 / lam_max
    b = data if weights is None else data * weights
    atb = op.apply_adjoint(b)
    wsum = None if weights is None else weights
    x = np.zeros(op.ishape, dtype=np.complex128)
    z = x.copy()
    tk = 1.0
    trace = SolverTrace(lam_max=lam_max)
    t0 = time.perf_counter()

    def objective(v):
        r = op.apply(v) - data
        fid = 0.5 * float(np.sum((np.abs(r) ** 2) * (1.0 if wsum is None else wsum)))
        return fid + lam_reg * float(np.sum(np.abs(haar_forward(v, levels))))

    for _ in range(iters):
        grad = op.normal(z, weights) - atb
        c = haar_forward(z - step * grad, levels)
        x_new = haar_inverse(_soft(c, lam_reg * step), levels)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
        z = x_new + ((tk - 1) / t_new) * (x_new - x)
        diff = np.linalg.norm(x_new - x) / max(np.linalg.norm(x_new), 1e-300)
        x, tk = x_new, t_new
        trace.residual.append(diff)
        trace.objective.append(objective(x) if return_trace else float("nan"))
        trace.wall_ms.append(1e3 * (time.perf_counter() - t0))
    if return_trace:
        return x, trace
    return x
