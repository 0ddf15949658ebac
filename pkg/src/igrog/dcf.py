"""Pipe-Menon iterative density compensation."""

from __future__ import annotations

import numpy as np

from .nufft import NufftPlan, degrid, spread

__all__ = ["pipe_menon", "fixed_point_residual"]


def _density(p: NufftPlan, w: np.ndarray) -> np.ndarray:
    return np.real(degrid(p, spread(p, w.astype(np.float64))))


def pipe_menon(p: NufftPlan, iters: int = 30, normalize: bool = True) -> np.ndarray:
    """Iterate ``w <- w / (G G^H w)`` with the plan's KB kernel, from ``w = 1``.

    The returned weights are divided by their maximum unless ``normalize``
    is False.
    """
    w = np.ones(p.nsamples)
    for _ in range(iters):
        den = _density(p, w)
        den = np.maximum(den, 1e-12 * den.max())
        w = w / den
    if normalize:
        w = w / w.max()
    return w


def fixed_point_residual(p: NufftPlan, w: np.ndarray) -> float:
    """``||w * (G G^H w) - w||_inf / ||w||_inf`` for un-normalized weights."""
    return float(np.abs(w * _density(p, w) - w).max() / np.abs(w).max())
