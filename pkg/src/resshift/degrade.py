"""LQ synthesis: blur, downsample, noise, nearest re-upsample, and masks.

Images are ``(C, H, W)`` arrays in ``[0, 1]``; masks are ``(H, W)`` arrays
of 0/1 with 1 marking missing pixels.  All randomness comes from the
generator passed in, so a degradation is reproducible from its seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

RESAMPLE_MODES = ("nearest", "bilinear", "area")
MASK_TYPES = ("box", "irregular", "half", "expand")
INPAINT_FILL = 0.5


@dataclass(frozen=True)
class BlurSpec:
    iso_prob: float = 0.6
    window: int = 13
    width_range: tuple[float, float] = (0.2, 0.8)

    def __post_init__(self):
        object.__setattr__(self, "width_range", tuple(float(w) for w in self.width_range))
        if not 0 <= self.iso_prob <= 1:
            raise ValueError(f"iso_prob must be in [0, 1], got {self.iso_prob}")
        lo, hi = self.width_range
        if not 0 < lo <= hi:
            raise ValueError(f"kernel widths must be positive and ordered, got {self.width_range}")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be odd, got {self.window}")


@dataclass(frozen=True)
class NoiseSpec:
    gaussian_prob: float = 0.5
    gaussian_range: tuple[float, float] = (1.0, 15.0)  # in 8-bit levels
    poisson_range: tuple[float, float] = (0.05, 0.3)

    def __post_init__(self):
        object.__setattr__(self, "gaussian_range", tuple(float(v) for v in self.gaussian_range))
        object.__setattr__(self, "poisson_range", tuple(float(v) for v in self.poisson_range))
        if not 0 <= self.gaussian_prob <= 1:
            raise ValueError(f"gaussian_prob must be in [0, 1], got {self.gaussian_prob}")


@dataclass(frozen=True)
class NoiseDraw:
    """A concrete noise setting; ``level`` is a std in [0, 1] units or a Poisson scale."""

    kind: str
    level: float

    def __post_init__(self):
        if self.kind not in ("gaussian", "poisson"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.level < 0:
            raise ValueError("noise level must be >= 0")


@dataclass(frozen=True)
class MaskSpec:
    type: str = "box"
    seed: int | None = None
    box_frac: tuple[float, float] = (0.1, 0.3)
    strokes: tuple[int, int] = (1, 4)
    stroke_width: tuple[int, int] = (2, 6)
    expand_frac: tuple[float, float] = (0.15, 0.3)

    def __post_init__(self):
        if self.type not in MASK_TYPES:
            raise ValueError(f"mask type must be one of {MASK_TYPES}, got {self.type!r}")
        for name in ("box_frac", "strokes", "stroke_width", "expand_frac"):
            object.__setattr__(self, name, tuple(getattr(self, name)))


@dataclass(frozen=True)
class DegradationSpec:
    kind: str = "superres"
    blur: BlurSpec | None = field(default_factory=BlurSpec)
    scale: int = 4
    resample: tuple[str, ...] = RESAMPLE_MODES
    noise: NoiseSpec | None = field(default_factory=NoiseSpec)
    mask: MaskSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "resample", tuple(self.resample))
        if self.kind not in ("superres", "inpaint", "identity"):
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if not self.resample or any(m not in RESAMPLE_MODES for m in self.resample):
            raise ValueError(f"resample modes must be a non-empty subset of {RESAMPLE_MODES}")
        if self.kind == "inpaint" and self.mask is None:
            object.__setattr__(self, "mask", MaskSpec())

    @classmethod
    def identity(cls) -> DegradationSpec:
        return cls(kind="identity", blur=None, scale=1, noise=None)


# --- blur ------------------------------------------------------------------


def gaussian_kernel(sigma_x: float, sigma_y: float, window: int = 13) -> np.ndarray:
    """Axis-aligned Gaussian sampled at integer offsets, normalized to unit sum."""
    r = np.arange(window) - window // 2
    kx = np.exp(-0.5 * (r / sigma_x) ** 2)
    ky = np.exp(-0.5 * (r / sigma_y) ** 2)
    k = np.outer(ky, kx)
    return k / k.sum()


def sample_blur_kernel(spec: BlurSpec, rng: np.random.Generator) -> np.ndarray:
    lo, hi = spec.width_range
    if rng.random() < spec.iso_prob:
        sx = sy = rng.uniform(lo, hi)
    else:
        sx, sy = rng.uniform(lo, hi, size=2)
    return gaussian_kernel(sx, sy, spec.window)


def blur(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel correlation with mirror padding."""
    return ndimage.correlate(x, kernel[None], mode="mirror")


# --- resampling ------------------------------------------------------------


def _bilinear_axis(x: np.ndarray, s: int, axis: int) -> np.ndarray:
    n_in = x.shape[axis]
    n_out = n_in // s
    src = (np.arange(n_out) + 0.5) * s - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = src - i0
    shape = [1] * x.ndim
    shape[axis] = n_out
    w = w.reshape(shape)
    return np.take(x, i0, axis=axis) * (1 - w) + np.take(x, i1, axis=axis) * w


def downsample(x: np.ndarray, s: int, mode: str) -> np.ndarray:
    """Reduce the last two axes by the integer factor ``s``."""
    H, W = x.shape[-2:]
    if H % s or W % s:
        raise ValueError(f"spatial dims {H}x{W} not divisible by scale {s}")
    if s == 1:
        return x.copy()
    if mode == "nearest":
        return x[..., ::s, ::s].copy()
    if mode == "area":
        return x.reshape(*x.shape[:-2], H // s, s, W // s, s).mean(axis=(-3, -1))
    if mode == "bilinear":
        return _bilinear_axis(_bilinear_axis(x, s, x.ndim - 2), s, x.ndim - 1)
    raise ValueError(f"unknown resample mode {mode!r}")


def upsample_nearest(x: np.ndarray, s: int) -> np.ndarray:
    return np.repeat(np.repeat(x, s, axis=-2), s, axis=-1)


# --- noise -----------------------------------------------------------------

POISSON_LEVELS = 256


def sample_noise(spec: NoiseSpec, rng: np.random.Generator) -> NoiseDraw:
    if rng.random() < spec.gaussian_prob:
        return NoiseDraw("gaussian", rng.uniform(*spec.gaussian_range) / 255.0)
    return NoiseDraw("poisson", rng.uniform(*spec.poisson_range))


def add_noise(x: np.ndarray, noise, rng: np.random.Generator, clamp: bool = True) -> np.ndarray:
    """Add Gaussian or shot noise.

    ``noise`` is a :class:`NoiseDraw` or a :class:`NoiseSpec` to draw one
    from.  Shot noise is ``scale * (Poisson(x * 256) / 256 - x)``, so its
    variance grows linearly with intensity and vanishes at zero.
    """
    if isinstance(noise, NoiseSpec):
        noise = sample_noise(noise, rng)
    x = np.asarray(x, dtype=np.float64)
    if noise.level == 0:
        out = x.copy()
    elif noise.kind == "gaussian":
        out = x + noise.level * rng.standard_normal(x.shape)
    else:
        lam = np.clip(x, 0, None) * POISSON_LEVELS
        shot = rng.poisson(lam) / POISSON_LEVELS - np.clip(x, 0, None)
        out = x + noise.level * shot
    return np.clip(out, 0.0, 1.0) if clamp else out


# --- pipelines -------------------------------------------------------------


def degrade_superres(x0: np.ndarray, spec: DegradationSpec, rng: np.random.Generator) -> np.ndarray:
    """``(x * k) down_s + n``, clamped, then nearest-upsampled back to ``x0``'s shape."""
    x0 = np.asarray(x0, dtype=np.float64)
    H, W = x0.shape[-2:]
    s = spec.scale
    if H % s or W % s:
        raise ValueError(f"spatial dims {H}x{W} not divisible by scale {s}")
    y = x0
    if spec.blur is not None:
        y = blur(y, sample_blur_kernel(spec.blur, rng))
    mode = spec.resample[rng.integers(len(spec.resample))]
    y = downsample(y, s, mode)
    if spec.noise is not None:
        y = add_noise(y, spec.noise, rng, clamp=False)
    y = np.clip(y, 0.0, 1.0)
    return upsample_nearest(y, s)


def degrade_inpaint(x0: np.ndarray, mask: np.ndarray):
    """Fill masked pixels with mid-gray; returns ``(y, mask)``."""
    x0 = np.asarray(x0, dtype=np.float64)
    mask = np.asarray(mask)
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask must be binary")
    if mask.shape != x0.shape[-2:] and mask.shape != x0.shape:
        raise ValueError(f"mask {mask.shape} does not match image {x0.shape}")
    m = mask.astype(np.float64)
    return x0 * (1 - m) + INPAINT_FILL * m, mask


def degrade(x0: np.ndarray, spec: DegradationSpec, rng: np.random.Generator) -> np.ndarray:
    """The ``D(x0)`` used for training pairs."""
    if spec.kind == "identity":
        return np.asarray(x0, dtype=np.float64).copy()
    if spec.kind == "superres":
        return degrade_superres(x0, spec, rng)
    mask = generate_mask(np.shape(x0)[-2:], spec.mask, rng)
    return degrade_inpaint(x0, mask)[0]


# --- masks -----------------------------------------------------------------


def box_mask(shape, rng, area_frac=(0.1, 0.3)) -> np.ndarray:
    H, W = shape
    frac = rng.uniform(*area_frac)
    aspect = rng.uniform(0.5, 2.0)
    h = int(np.clip(round(np.sqrt(frac * H * W * aspect)), 1, H))
    w = int(np.clip(round(frac * H * W / h), 1, W))
    top = rng.integers(0, H - h + 1)
    left = rng.integers(0, W - w + 1)
    m = np.zeros(shape, dtype=np.uint8)
    m[top : top + h, left : left + w] = 1
    return m


def irregular_mask(shape, rng, strokes=(1, 4), width=(2, 6)) -> np.ndarray:
    """Random-walk brush strokes."""
    H, W = shape
    m = np.zeros(shape, dtype=np.uint8)
    yy, xx = np.mgrid[0:H, 0:W]
    for _ in range(rng.integers(strokes[0], strokes[1] + 1)):
        r = rng.integers(width[0], width[1] + 1) / 2.0
        y, x = rng.uniform(0, H), rng.uniform(0, W)
        angle = rng.uniform(0, 2 * np.pi)
        for _ in range(rng.integers(4, 10)):
            angle += rng.normal(0, 0.8)
            step = rng.uniform(0.1, 0.25) * max(H, W)
            ny = np.clip(y + step * np.sin(angle), 0, H - 1)
            nx = np.clip(x + step * np.cos(angle), 0, W - 1)
            for f in np.linspace(0, 1, 8):
                cy, cx = y + f * (ny - y), x + f * (nx - x)
                m[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 1
            y, x = ny, nx
    return m


def half_mask(shape, rng) -> np.ndarray:
    H, W = shape
    m = np.zeros(shape, dtype=np.uint8)
    side = rng.integers(4)
    if side == 0:
        m[: H // 2] = 1
    elif side == 1:
        m[H - H // 2 :] = 1
    elif side == 2:
        m[:, : W // 2] = 1
    else:
        m[:, W - W // 2 :] = 1
    return m


def expand_mask(shape, rng, border_frac=(0.15, 0.3)) -> np.ndarray:
    """Mask everything outside a centered box (outpainting)."""
    H, W = shape
    fy, fx = rng.uniform(*border_frac, size=2)
    by, bx = max(1, int(round(fy * H))), max(1, int(round(fx * W)))
    m = np.ones(shape, dtype=np.uint8)
    m[by : H - by, bx : W - bx] = 0
    return m


def generate_mask(shape, spec: MaskSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    if spec.seed is not None or rng is None:
        from resshift.rng import make_rng

        rng = make_rng(spec.seed or 0)
    shape = tuple(shape)
    if spec.type == "box":
        return box_mask(shape, rng, spec.box_frac)
    if spec.type == "irregular":
        return irregular_mask(shape, rng, spec.strokes, spec.stroke_width)
    if spec.type == "half":
        return half_mask(shape, rng)
    return expand_mask(shape, rng, spec.expand_frac)


# --- procedural HQ data ----------------------------------------------------

TOY_KINDS = ("blobs", "stripes", "checkers")


def _blob(size, rng):
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    img = np.zeros((size, size))
    for _ in range(rng.integers(1, 5)):
        cy, cx = rng.uniform(0, size, size=2)
        sig = rng.uniform(size / 10, size / 4)
        amp = rng.uniform(0.3, 1.0) * rng.choice([-1.0, 1.0])
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig**2))
    return np.clip(0.5 + 0.5 * img, 0.0, 1.0)


def _stripes(size, rng):
    yy, xx = np.mgrid[0:size, 0:size]
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(1.5, 5) / size
    phase = rng.uniform(0, 2 * np.pi)
    return 0.5 + 0.45 * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)


def _checkers(size, rng):
    yy, xx = np.mgrid[0:size, 0:size]
    period = rng.integers(4, max(5, size // 2))
    oy, ox = rng.integers(0, period, size=2)
    lo, hi = np.sort(rng.uniform(0.1, 0.9, size=2))
    board = (((yy + oy) // period + (xx + ox) // period) % 2).astype(np.float64)
    return lo + (hi - lo) * board


def toy_images(kind: str, n: int, size: int, rng: np.random.Generator, channels: int = 1) -> np.ndarray:
    """``(n, channels, size, size)`` procedural images in ``[0, 1]``."""
    makers = {"blobs": _blob, "stripes": _stripes, "checkers": _checkers}
    if kind not in makers:
        raise ValueError(f"toy kind must be one of {TOY_KINDS}, got {kind!r}")
    out = np.empty((n, channels, size, size))
    for i in range(n):
        for c in range(channels):
            out[i, c] = makers[kind](size, rng)
    return out


def toy_point_pairs(n: int, rng: np.random.Generator, shift=(0.3, -0.2), spread: float = 0.05):
    """2-D point-cloud pairs: HQ points on a ring, LQ = shifted, jittered copy."""
    angle = rng.uniform(0, 2 * np.pi, n)
    x0 = 0.5 + 0.3 * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    y0 = x0 + np.asarray(shift) + spread * rng.standard_normal((n, 2))
    return x0, y0
