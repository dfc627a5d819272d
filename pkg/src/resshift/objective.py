"""Training objectives on the predicted ``x0_hat``.

Every loss returns its value together with the adjoint w.r.t. ``x0_hat``.
The ``*_per_sample`` variants take a leading batch axis and return one value
per sample plus the gradient of their sum; the plain functions treat their
input as a single sample.

The perceptual term is a random-feature distance: a fixed, seeded stack of
``conv -> tanh`` layers whose per-pixel feature vectors are unit-normalized
and compared by squared distance, averaged over pixels and weighted per
layer.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from resshift import nn
from resshift.kernel import elbo_weight
from resshift.rng import make_rng
from resshift.schedule import Schedule


@dataclass(frozen=True)
class PerceptualSpec:
    channels: tuple[int, ...] = (8, 16)
    ksize: int = 3
    seed: int = 0
    per_layer_weights: tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "per_layer_weights", tuple(float(w) for w in self.per_layer_weights))
        if len(self.channels) != len(self.per_layer_weights):
            raise ValueError("need one weight per perceptual layer")
        if any(w < 0 for w in self.per_layer_weights):
            raise ValueError("perceptual layer weights must be nonnegative")
        if self.ksize < 1 or self.ksize % 2 == 0:
            raise ValueError(f"ksize must be odd and positive, got {self.ksize}")

    @property
    def receptive_field(self) -> int:
        return 1 + len(self.channels) * (self.ksize - 1)


@dataclass(frozen=True)
class ObjectiveSpec:
    data_term: str = "L2"
    use_elbo_weights: bool = False
    lam: float = 1.0
    perceptual: PerceptualSpec | None = field(default_factory=PerceptualSpec)

    def __post_init__(self):
        if self.data_term not in ("L2", "L1"):
            raise ValueError(f"data_term must be 'L2' or 'L1', got {self.data_term!r}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.lam > 0 and self.perceptual is None:
            raise ValueError("lambda > 0 needs a perceptual spec")


@functools.lru_cache(maxsize=16)
def _feature_stack(pspec: PerceptualSpec, in_channels: int):
    layers, c_in = [], in_channels
    for i, c_out in enumerate(pspec.channels):
        rng = make_rng(pspec.seed, in_channels, i)
        fan_in = c_in * pspec.ksize**2
        w = rng.standard_normal((c_out, c_in, pspec.ksize, pspec.ksize)) / np.sqrt(fan_in)
        b = 0.1 * rng.standard_normal(c_out)
        w.setflags(write=False)
        b.setflags(write=False)
        layers.append((w, b))
        c_in = c_out
    return tuple(layers)


def _weights_t(t, s: Schedule, B: int) -> np.ndarray:
    t = np.broadcast_to(np.asarray(t), (B,))
    return np.array([elbo_weight(int(ti), s)[0] for ti in t])


def data_loss_per_sample(x0_hat, x0, t, spec: ObjectiveSpec, s: Schedule):
    diff = x0_hat - x0
    B = diff.shape[0]
    n = diff[0].size
    axes = tuple(range(1, diff.ndim))
    if spec.data_term == "L2":
        values = np.mean(diff * diff, axis=axes)
        grad = 2.0 * diff / n
    else:
        values = np.mean(np.abs(diff), axis=axes)
        grad = np.sign(diff) / n
    if spec.use_elbo_weights:
        w = _weights_t(t, s, B)
        values = values * w
        grad = grad * w.reshape((B,) + (1,) * (diff.ndim - 1))
    return values, grad


def perceptual_loss_per_sample(x0_hat, x0, pspec: PerceptualSpec):
    if x0_hat.ndim != 4:
        raise ValueError(f"expected (B, C, H, W), got {x0_hat.shape}")
    B, C, H, W = x0_hat.shape
    rf = pspec.receptive_field
    if H < rf or W < rf:
        raise ValueError(f"input {H}x{W} smaller than perceptual receptive field {rf}")
    layers = _feature_stack(pspec, C)

    def run(x):
        feats, caches = [], []
        for w, b in layers:
            z, c_conv = nn.conv2d_forward(x, w, b)
            x, c_act = nn.act_forward(z, "tanh")
            n, c_norm = nn.channel_normalize_forward(x)
            feats.append(n)
            caches.append((c_conv, c_act, c_norm))
        return feats, caches

    feats_hat, caches = run(nn.to_nhwc(x0_hat))
    feats_ref, _ = run(nn.to_nhwc(x0))
    values = np.zeros(B)
    dnorms = []
    for wl, fh, fr in zip(pspec.per_layer_weights, feats_hat, feats_ref):
        d = fh - fr
        values += wl * np.mean(np.sum(d * d, axis=-1), axis=(1, 2))
        dnorms.append(wl * 2.0 * d / (H * W))
    # every layer's normalized output feeds the loss directly
    dx = np.zeros_like(feats_hat[-1])
    for i in range(len(layers) - 1, -1, -1):
        c_conv, c_act, c_norm = caches[i]
        da = dx + nn.channel_normalize_backward(dnorms[i], c_norm)
        dz = nn.act_backward(da, c_act)
        dx, _, _ = nn.conv2d_backward(dz, c_conv)
    return values, nn.to_nchw(dx)


def total_loss_per_sample(x0_hat, x0, t, spec: ObjectiveSpec, s: Schedule):
    values, grad = data_loss_per_sample(x0_hat, x0, t, spec, s)
    if spec.lam > 0:
        pv, pg = perceptual_loss_per_sample(x0_hat, x0, spec.perceptual)
        values = values + spec.lam * pv
        grad = grad + spec.lam * pg
    return values, grad


def _check_pair(x0_hat, x0):
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0_hat.shape != x0.shape:
        raise ValueError(f"shape mismatch: {x0_hat.shape} vs {x0.shape}")
    return x0_hat, x0


def _as_image_batch(x):
    if x.ndim == 2:
        return x[None, None]
    if x.ndim == 3:
        return x[None]
    raise ValueError(f"perceptual loss needs a 2-D or (C, H, W) signal, got shape {x.shape}")


def data_loss(x0_hat, x0, t: int, spec: ObjectiveSpec, s: Schedule):
    x0_hat, x0 = _check_pair(x0_hat, x0)
    v, g = data_loss_per_sample(x0_hat[None], x0[None], t, spec, s)
    return float(v[0]), g[0]


def perceptual_loss(x0_hat, x0, pspec: PerceptualSpec):
    x0_hat, x0 = _check_pair(x0_hat, x0)
    v, g = perceptual_loss_per_sample(_as_image_batch(x0_hat), _as_image_batch(x0), pspec)
    return float(v[0]), g.reshape(x0_hat.shape)


def total_loss(x0_hat, x0, t: int, spec: ObjectiveSpec, s: Schedule):
    value, grad = data_loss(x0_hat, x0, t, spec, s)
    if spec.lam > 0:
        pv, pg = perceptual_loss(x0_hat, x0, spec.perceptual)
        value += spec.lam * pv
        grad = grad + spec.lam * pg
    return value, grad
