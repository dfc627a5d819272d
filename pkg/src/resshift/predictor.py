"""Reference predictor ``f(x_t, y0, t) -> x0_hat`` with exact gradients.

Architecture (all convolutions ``ksize x ksize``, zero padded)::

    h0  = concat(x_t, y0, emb(t))            # emb broadcast over H, W
    h1  = act(conv0(h0))
    hi  = h{i-1} + act(conv_i(h{i-1}))       # i = 2..blocks (residual)
    out = x_t + head(h_blocks) [+ skip(h0)]

``head`` and ``skip`` start at zero so the untrained network returns ``x_t``.
Parameters live in one flat float64 vector; :class:`Layout` knows how to
slice it.
"""

from __future__ import annotations

import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from resshift import nn
from resshift.schedule import Schedule

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RSHIFT01"
LAYOUT_VERSION = 1


@dataclass(frozen=True)
class Layout:
    channels: int = 1
    width: int = 16
    blocks: int = 3
    ksize: int = 3
    activation: str = "silu"
    residual: bool = True
    input_skip: bool = True
    t_embed_dim: int = 32

    def __post_init__(self):
        for name in ("channels", "width", "blocks", "ksize"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.ksize % 2 == 0:
            raise ValueError(f"ksize must be odd, got {self.ksize}")
        if self.t_embed_dim < 0:
            raise ValueError("t_embed_dim must be >= 0")
        if self.activation not in ("silu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_channels(self) -> int:
        return 2 * self.channels + self.t_embed_dim

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        k, w, c = self.ksize, self.width, self.channels
        out = [("conv0.w", (w, self.in_channels, k, k)), ("conv0.b", (w,))]
        for i in range(1, self.blocks):
            out += [(f"conv{i}.w", (w, w, k, k)), (f"conv{i}.b", (w,))]
        out += [("head.w", (c, w, k, k)), ("head.b", (c,))]
        if self.input_skip:
            out += [("skip.w", (c, self.in_channels, k, k)), ("skip.b", (c,))]
        return out

    @property
    def n_params(self) -> int:
        return sum(math.prod(shape) for _, shape in self.shapes())

    def unpack(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        if theta.shape != (self.n_params,):
            raise ValueError(f"theta has shape {theta.shape}, layout needs ({self.n_params},)")
        views, offset = {}, 0
        for name, shape in self.shapes():
            n = math.prod(shape)
            views[name] = theta[offset : offset + n].reshape(shape)
            offset += n
        return views

    def pack(self, tensors: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([tensors[name].ravel() for name, _ in self.shapes()])


@dataclass
class PredictorParams:
    layout: Layout
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.layout.n_params,):
            raise ValueError(
                f"theta length {self.theta.size} != layout parameter count {self.layout.n_params}"
            )

    @property
    def t_embed_dim(self) -> int:
        return self.layout.t_embed_dim

    def copy(self) -> PredictorParams:
        return PredictorParams(self.layout, self.theta.copy())


def init_params(layout: Layout, rng: np.random.Generator) -> PredictorParams:
    tensors = {}
    for name, shape in layout.shapes():
        if name.startswith(("head", "skip")) or name.endswith(".b"):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = math.prod(shape[1:])
            tensors[name] = rng.standard_normal(shape) / math.sqrt(fan_in)
    return PredictorParams(layout, layout.pack(tensors))


def _batched(x_t, y0, t):
    x_t = np.asarray(x_t, dtype=np.float64)
    y0 = np.asarray(y0, dtype=np.float64)
    if x_t.shape != y0.shape:
        raise ValueError(f"x_t {x_t.shape} and y0 {y0.shape} differ in shape")
    single = x_t.ndim == 3
    if single:
        x_t, y0 = x_t[None], y0[None]
    if x_t.ndim != 4:
        raise ValueError(f"expected (C,H,W) or (B,C,H,W), got {x_t.shape}")
    t = np.broadcast_to(np.asarray(t), (x_t.shape[0],))
    return x_t, y0, t, single


def _input_conv(img, emb, w, b, n_img):
    """Conv over ``concat(img, broadcast(emb))`` split into its two parts."""
    out, c_img = nn.conv2d_forward(img, w[:, :n_img], b)
    c_emb = None
    if emb.shape[1]:
        e, c_emb = nn.const_conv_forward(emb, w[:, n_img:], img.shape[1], img.shape[2])
        out = out + e
    return out, (c_img, c_emb)


def _input_conv_backward(dout, cache):
    c_img, c_emb = cache
    _, dw_img, db = nn.conv2d_backward(dout, c_img, need_dx=False)
    if c_emb is None:
        return dw_img, db
    dw_emb = nn.const_conv_backward(dout, c_emb)
    return np.concatenate([dw_img, dw_emb], axis=1), db


def _forward(params: PredictorParams, x_t, y0, t):
    """Channels-first in and out; channels-last inside."""
    L = params.layout
    if x_t.shape[1] != L.channels:
        raise ValueError(f"layout expects {L.channels} channels, got {x_t.shape[1]}")
    p = L.unpack(params.theta)
    n_img = 2 * L.channels
    img = nn.to_nhwc(np.concatenate([x_t, y0], axis=1))
    emb = nn.timestep_embedding(t, L.t_embed_dim)
    caches = []
    z, c_conv = _input_conv(img, emb, p["conv0.w"], p["conv0.b"], n_img)
    h, c_act = nn.act_forward(z, L.activation)
    caches.append((c_conv, c_act))
    for i in range(1, L.blocks):
        z, c_conv = nn.conv2d_forward(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
        a, c_act = nn.act_forward(z, L.activation)
        h = h + a if L.residual else a
        caches.append((c_conv, c_act))
    out, c_head = nn.conv2d_forward(h, p["head.w"], p["head.b"])
    c_skip = None
    if L.input_skip:
        sk, c_skip = _input_conv(img, emb, p["skip.w"], p["skip.b"], n_img)
        out = out + sk
    return nn.to_nchw(out) + x_t, (caches, c_head, c_skip)


def _backward(params: PredictorParams, dout, cache) -> np.ndarray:
    L = params.layout
    caches, c_head, c_skip = cache
    dout = nn.to_nhwc(dout)
    grads = {}
    dh, grads["head.w"], grads["head.b"] = nn.conv2d_backward(dout, c_head)
    if L.input_skip:
        grads["skip.w"], grads["skip.b"] = _input_conv_backward(dout, c_skip)
    for i in range(L.blocks - 1, 0, -1):
        c_conv, c_act = caches[i]
        dz = nn.act_backward(dh, c_act)
        dprev, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = nn.conv2d_backward(dz, c_conv)
        dh = dh + dprev if L.residual else dprev
    c_conv, c_act = caches[0]
    dz = nn.act_backward(dh, c_act)
    grads["conv0.w"], grads["conv0.b"] = _input_conv_backward(dz, c_conv)
    return L.pack(grads)


def _check_t(t, s: Schedule | None):
    if s is not None:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > s.T):
            raise ValueError(f"timestep outside [1, {s.T}]: {t}")


def predict(params: PredictorParams, x_t, y0, t, s: Schedule | None = None) -> np.ndarray:
    """Estimate ``x0`` from ``(x_t, y0, t)``; accepts single or batched inputs."""
    _check_t(t, s)
    x_t, y0, t, single = _batched(x_t, y0, t)
    out, _ = _forward(params, x_t, y0, t)
    return out[0] if single else out


class NonFiniteLossError(FloatingPointError):
    def __init__(self, index: int, value: float):
        super().__init__(f"non-finite loss {value} at batch index {index}")
        self.index = index
        self.value = value


def loss_and_gradient(params: PredictorParams, batch, objective, s: Schedule):
    """Mean objective over a batch and its exact gradient w.r.t. ``theta``.

    ``batch`` is ``(x_t, y0, t, x0)`` with arrays shaped ``(B, C, H, W)``
    and ``t`` of shape ``(B,)``.
    """
    from resshift.objective import total_loss_per_sample

    x_t, y0, t, x0 = batch
    _check_t(t, s)
    x_t, y0, t, _ = _batched(x_t, y0, t)
    x0 = np.asarray(x0, dtype=np.float64).reshape(x_t.shape)
    if x_t.shape[0] == 0:
        raise ValueError("empty batch")
    out, cache = _forward(params, x_t, y0, t)
    values, dvals = total_loss_per_sample(out, x0, t, objective, s)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NonFiniteLossError(int(bad[0]), float(values[bad[0]]))
    B = x_t.shape[0]
    grad = _backward(params, dvals / B, cache)
    return float(values.mean()), grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), 0)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def sgd_adam_step(params: PredictorParams, grad: np.ndarray, state: AdamState, lr: float):
    """Bias-corrected Adam update; returns new ``(params, state)``.

    A non-finite gradient is rejected: inputs come back unchanged.
    """
    if not lr > 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.theta.shape:
        raise ValueError(f"gradient shape {grad.shape} != theta shape {params.theta.shape}")
    if not np.all(np.isfinite(grad)):
        log.warning("rejected Adam step %d: non-finite gradient", state.step)
        return params, state
    step = state.step + 1
    m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * grad * grad
    m_hat = m / (1 - ADAM_BETA1**step)
    v_hat = v / (1 - ADAM_BETA2**step)
    theta = params.theta - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return PredictorParams(params.layout, theta), AdamState(m, v, step)


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float) -> float:
    """Cosine annealing from ``lr_max`` at step 0 to ``lr_min`` at ``total - 1``."""
    if total <= 1:
        return lr_max
    frac = min(max(step / (total - 1), 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * frac))


# --- checkpoint file -------------------------------------------------------


def save_checkpoint(path, params: PredictorParams, state: AdamState | None = None, meta: dict | None = None):
    """Write ``RSHIFT01 | u32 len | layout JSON | u64 n | theta | u64 step | m | v``."""
    descriptor = {"version": LAYOUT_VERSION, "layout": asdict(params.layout), "meta": meta or {}}
    blob = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    if state is None:
        state = AdamState.zeros(params.layout.n_params)
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<Q", params.theta.size))
    buf.write(params.theta.astype("<f8").tobytes())
    buf.write(struct.pack("<Q", state.step))
    buf.write(state.m.astype("<f8").tobytes())
    buf.write(state.v.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


@dataclass
class Checkpoint:
    params: PredictorParams
    state: AdamState
    meta: dict = field(default_factory=dict)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:8]!r}")
    pos = 8
    (n_blob,) = struct.unpack_from("<I", data, pos)
    pos += 4
    descriptor = json.loads(data[pos : pos + n_blob].decode("utf-8"))
    pos += n_blob
    if descriptor.get("version") != LAYOUT_VERSION:
        raise ValueError(f"{path}: unsupported layout version {descriptor.get('version')}")
    layout = Layout(**descriptor["layout"])
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if n != layout.n_params:
        raise ValueError(f"{path}: stored {n} parameters, layout needs {layout.n_params}")

    def take(count):
        nonlocal pos
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return arr

    theta = take(n)
    (step,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    m, v = take(n), take(n)
    return Checkpoint(PredictorParams(layout, theta), AdamState(m, v, step), descriptor.get("meta", {}))
