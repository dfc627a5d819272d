"""Numpy layer primitives with explicit adjoints.

Activations are channels-last ``(B, H, W, C)`` float64.  Convolution
weights are ``(O, C, k, k)``; convolutions are stride 1 with zero "same"
padding.  Each ``*_forward`` returns ``(out, cache)`` and the matching
``*_backward`` maps the output adjoint back to input and parameter adjoints.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _cols(x: np.ndarray, k: int) -> np.ndarray:
    B, H, W, C = x.shape
    r = k // 2
    xp = np.pad(x, ((0, 0), (r, r), (r, r), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (B, H, W, C, k, k)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * H * W, k * k * C)


def _wmat(w: np.ndarray) -> np.ndarray:
    O = w.shape[0]
    return w.transpose(0, 2, 3, 1).reshape(O, -1)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    O, C, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {w.shape}")
    if x.shape[-1] != C:
        raise ValueError(f"expected {C} input channels, got {x.shape[-1]}")
    B, H, W, _ = x.shape
    cols = _cols(x, k)
    out = (cols @ _wmat(w).T + b).reshape(B, H, W, O)
    return out, (cols, x.shape, w)


def conv2d_backward(dout: np.ndarray, cache, need_dx: bool = True):
    cols, xshape, w = cache
    O, C, k, _ = w.shape
    B, H, W, _ = xshape
    d2 = dout.reshape(-1, O)
    dw = (d2.T @ cols).reshape(O, k, k, C).transpose(0, 3, 1, 2)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    # adjoint of a same-padded stride-1 conv: conv with the flipped, transposed kernel
    w_adj = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx = (_cols(dout, k) @ _wmat(w_adj).T).reshape(B, H, W, C)
    return dx, dw, db


def tap_masks(H: int, W: int, k: int) -> np.ndarray:
    """``(k, k, H, W)`` indicators: tap ``(i, j)`` lands inside the image."""
    r = k // 2
    ones = np.pad(np.ones((H, W)), r)
    return np.stack([np.stack([ones[i : i + H, j : j + W] for j in range(k)]) for i in range(k)])


def const_conv_forward(v: np.ndarray, w: np.ndarray, H: int, W: int):
    """Convolve channels that are constant over space, ``v`` of shape ``(B, E)``.

    Equal to ``conv2d_forward`` on ``v`` broadcast to ``(B, H, W, E)`` with
    zero bias, at a fraction of the cost.
    """
    O, E, k, _ = w.shape
    masks = tap_masks(H, W, k)
    per_tap = np.einsum("be,oeij->bijo", v, w)
    out = np.einsum("ijhw,bijo->bhwo", masks, per_tap)
    return out, (v, masks, w.shape)


def const_conv_backward(dout: np.ndarray, cache) -> np.ndarray:
    v, masks, _ = cache
    dper_tap = np.einsum("ijhw,bhwo->bijo", masks, dout)
    return np.einsum("bijo,be->oeij", dper_tap, v)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def act_forward(x: np.ndarray, kind: str):
    if kind == "silu":
        sig = _sigmoid(x)
        return x * sig, (kind, x, sig)
    if kind == "tanh":
        y = np.tanh(x)
        return y, (kind, x, y)
    raise ValueError(f"unknown activation {kind!r}")


def act_backward(dout: np.ndarray, cache):
    kind, x, aux = cache
    if kind == "silu":
        return dout * aux * (1.0 + x * (1.0 - aux))
    return dout * (1.0 - aux**2)


def channel_normalize_forward(f: np.ndarray, eps: float = 1e-10):
    """Unit-normalize feature vectors along the (last) channel axis."""
    r = np.sqrt(np.sum(f * f, axis=-1, keepdims=True) + eps)
    n = f / r
    return n, (n, r)


def channel_normalize_backward(dn: np.ndarray, cache):
    n, r = cache
    return (dn - n * np.sum(n * dn, axis=-1, keepdims=True)) / r


def timestep_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal embedding, ``(len(t), dim)``; first half sin, second half cos."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb


def to_nhwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def to_nchw(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))
