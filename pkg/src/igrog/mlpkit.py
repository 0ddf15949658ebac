"""Small fully-connected network with hand-written backprop and Adam.

Parameters are a list of ``(W, b)`` pairs with ``W`` of shape
``(fan_in, fan_out)``; a layer computes ``x @ W + b``. Everything runs in
float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "MlpParams",
    "AdamState",
    "mlp_init",
    "mlp_forward",
    "mlp_grad",
    "adam_init",
    "adam_step",
    "l1_loss",
    "l2_loss",
    "save_params",
    "load_params",
]

_ACTIVATIONS = ("relu", "tanh")


@dataclass
class MlpParams:
    layers: List[Tuple[np.ndarray, np.ndarray]]
    activation: str = "relu"

    @property
    def widths(self) -> list:
        return [self.layers[0][0].shape[0]] + [w.shape[1] for w, _ in self.layers]

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in self.layers])

    def copy(self) -> "MlpParams":
        return MlpParams([(w.copy(), b.copy()) for w, b in self.layers], self.activation)


def mlp_init(widths: Sequence[int], seed: int = 0, activation: str = "relu") -> MlpParams:
    """Fan-in scaled uniform init: ``W ~ U(-a, a)``, ``a = sqrt(6 / fan_in)``, zero bias."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ValueError(f"invalid layer widths {widths}")
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        a = np.sqrt(6.0 / fan_in)
        layers.append((rng.uniform(-a, a, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return MlpParams(layers, activation)


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    return 1.0 - a * a


def mlp_forward(params: MlpParams, x: np.ndarray, return_cache: bool = False):
    """Affine + activation for hidden layers, affine output layer."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim == 2 and h.shape[0] == 1 and not return_cache:
        # BLAS takes a gemv path for one row; duplicating keeps results
        # bit-identical to the same row inside a larger batch
        return mlp_forward(params, np.repeat(h, 2, axis=0))[:1]
    cache = [h]
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        z = h @ w + b
        if i < last:
            h = _act(params.activation, z)
            cache.append((z, h))
        else:
            h = z
    if return_cache:
        return h, cache
    return h


def mlp_grad(params: MlpParams, x: np.ndarray, grad_out: np.ndarray, cache=None):
    """Reverse-mode gradients of ``sum(grad_out * mlp_forward(x))``.

    Returns a list of ``(dW, db)`` matching ``params.layers``.
    """
    if cache is None:
        _, cache = mlp_forward(params, x, return_cache=True)
    g = np.asarray(grad_out, dtype=np.float64)
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        h_in = cache[0] if i == 0 else cache[i][1]
        grads[i] = (h_in.T @ g, g.sum(axis=0))
        if i > 0:
            z, a = cache[i]
            g = (g @ w.T) * _act_grad(params.activation, z, a)
    return grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(params: MlpParams, lr: float = 1e-3, **kw) -> AdamState:
    st = AdamState(lr=lr, **kw)
    st.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers]
    st.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers]
    return st


def adam_step(state: AdamState, params: MlpParams, grads, lr: Optional[float] = None) -> MlpParams:
    """Bias-corrected Adam update, in place; returns ``params``."""
    lr = state.lr if lr is None else lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    new_layers = []
    for i, ((w, b), (gw, gb)) in enumerate(zip(params.layers, grads)):
        mw, mb = state.m[i]
        vw, vb = state.v[i]
        for p, g, m, v in ((w, gw, mw, vw), (b, gb, mb, vb)):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_layers.append((w, b))
    params.layers = new_layers
    return params


def l1_loss(pred: np.ndarray, target: np.ndarray):
    """``sum |Re r| + |Im r|`` of the residual and its subgradient w.r.t. ``pred``.

    For complex inputs the subgradient is returned as ``dRe + 1j*dIm``.
    """
    r = np.asarray(pred) - np.asarray(target)
    if np.iscomplexobj(r):
        loss = np.abs(r.real).sum() + np.abs(r.imag).sum()
        return float(loss), np.sign(r.real) + 1j * np.sign(r.imag)
    return float(np.abs(r).sum()), np.sign(r)


def l2_loss(pred: np.ndarray, target: np.ndarray):
    """``sum |r|^2`` and its gradient (``2 r``, packed the same way as :func:`l1_loss`)."""
    r = np.asarray(pred) - np.asarray(target)
    return float(np.sum(np.abs(r) ** 2)), 2.0 * r


def save_params(path_prefix: str, params: MlpParams, extra: Optional[dict] = None) -> None:
    """Store each weight/bias as a core array plus a JSON architecture descriptor."""
    from .core import write_array

    for i, (w, b) in enumerate(params.layers):
        write_array(f"{path_prefix}.W{i}", w)
        write_array(f"{path_prefix}.b{i}", b)
    desc = {"widths": params.widths, "activation": params.activation}
    if extra:
        desc.update(extra)
    with open(path_prefix + ".arch.json", "w") as f:
        json.dump(desc, f, indent=2, sort_keys=True)


def load_params(path_prefix: str):
    from .core import read_array

    with open(path_prefix + ".arch.json") as f:
        desc = json.load(f)
    n = len(desc["widths"]) - 1
    layers = [
        (read_array(f"{path_prefix}.W{i}").real.copy(), read_array(f"{path_prefix}.b{i}").real.copy())
        for i in range(n)
    ]
    return MlpParams(layers, desc["activation"]), desc
