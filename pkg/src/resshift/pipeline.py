"""Training (forward-marginal regression) and ancestral sampling loops.

Random streams are keyed by ``(seed, iteration, purpose)`` so a run is fully
determined by its config, seed and dataset.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from resshift.degrade import (
    BlurSpec,
    DegradationSpec,
    MaskSpec,
    NoiseSpec,
    degrade,
    toy_images,
)
from resshift.kernel import reverse_step
from resshift.objective import ObjectiveSpec, PerceptualSpec
from resshift.predictor import (
    AdamState,
    Layout,
    NonFiniteLossError,
    PredictorParams,
    cosine_lr,
    init_params,
    loss_and_gradient,
    predict,
    save_checkpoint,
    sgd_adam_step,
)
from resshift.rng import make_rng
from resshift.schedule import Schedule, ScheduleParams, build_schedule

log = logging.getLogger(__name__)

# stream ids for make_rng(seed, iteration, stream, ...)
_INIT, _BATCH, _DEGRADE, _STEP, _NOISE = range(5)


@dataclass(frozen=True)
class RunConfig:
    schedule: ScheduleParams = field(default_factory=lambda: ScheduleParams(T=4, p=0.3, kappa=2.0))
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    degradation: DegradationSpec = field(default_factory=DegradationSpec)
    predictor: Layout = field(default_factory=Layout)
    batch_size: int = 4
    iterations: int = 2000
    lr_max: float = 3e-3
    lr_min: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        # lr_max = lr_min = 0 is allowed: a frozen run that only evaluates the loss
        if not self.lr_max >= self.lr_min >= 0 or (self.lr_min == 0 and self.lr_max > 0):
            raise ValueError(
                f"need lr_max >= lr_min > 0 (or both 0), got {self.lr_max}, {self.lr_min}"
            )
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


_NESTED = {
    RunConfig: {
        "schedule": ScheduleParams,
        "objective": ObjectiveSpec,
        "degradation": DegradationSpec,
        "predictor": Layout,
    },
    ObjectiveSpec: {"perceptual": PerceptualSpec},
    DegradationSpec: {"blur": BlurSpec, "noise": NoiseSpec, "mask": MaskSpec},
}


def _from_dict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ValueError(f"{where}: expected a table, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError(f"{where}: unknown key(s) {unknown}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(cls, {}).get(key)
        if sub is not None and value is not None:
            value = _from_dict(sub, value, f"{where}.{key}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data, "config")


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


@dataclass
class TrainReport:
    losses: np.ndarray
    lrs: np.ndarray
    wall_clock: float
    checkpoint_path: Path | None
    params: PredictorParams
    state: AdamState

    def smoothed(self, window: int = 100) -> np.ndarray:
        w = min(window, len(self.losses))
        return np.convolve(self.losses, np.ones(w) / w, mode="valid")


class TrainingDiverged(RuntimeError):
    pass


def write_loss_csv(path, losses, lrs) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "loss", "lr"])
        for i, (l, r) in enumerate(zip(losses, lrs)):
            writer.writerow([i, repr(float(l)), repr(float(r))])


def make_training_batch(x0_all: np.ndarray, config: RunConfig, s: Schedule, it: int):
    """Algorithm-1 draw for one iteration: ``(x_t, y0, t, x0)``."""
    seed, B = config.seed, config.batch_size
    idx = make_rng(seed, it, _BATCH).integers(len(x0_all), size=B)
    x0 = x0_all[idx]
    y0 = np.stack([degrade(x, config.degradation, make_rng(seed, it, _DEGRADE, b)) for b, x in enumerate(x0)])
    t = make_rng(seed, it, _STEP).integers(1, s.T + 1, size=B)
    eta = s.eta[t - 1].reshape(B, 1, 1, 1)
    xi = make_rng(seed, it, _NOISE).standard_normal(x0.shape)
    x_t = x0 + eta * (y0 - x0) + s.kappa * np.sqrt(eta) * xi
    return x_t, y0, t, x0


def train(config: RunConfig, dataset, out_dir=None, log_every: int = 0) -> TrainReport:
    """Fit the predictor on ``dataset`` (``(N, C, H, W)`` HQ images)."""
    x0_all = np.asarray(dataset, dtype=np.float64)
    if x0_all.ndim != 4 or len(x0_all) == 0:
        raise ValueError(f"dataset must be a non-empty (N, C, H, W) array, got {x0_all.shape}")
    if x0_all.shape[1] != config.predictor.channels:
        raise ValueError(
            f"dataset has {x0_all.shape[1]} channels, predictor expects {config.predictor.channels}"
        )
    s = build_schedule(config.schedule)
    params = init_params(config.predictor, make_rng(config.seed, 0, _INIT))
    state = AdamState.zeros(params.layout.n_params)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"schedule": dataclasses.asdict(config.schedule), "config_digest": config.digest()}

    losses = np.zeros(config.iterations)
    lrs = np.zeros(config.iterations)
    start = time.perf_counter()
    ckpt = None
    for it in range(config.iterations):
        batch = make_training_batch(x0_all, config, s, it)
        try:
            loss, grad = loss_and_gradient(params, batch, config.objective, s)
        except NonFiniteLossError as err:
            if out_dir is not None:
                save_checkpoint(out_dir / "diverged.ckpt", params, state, {**meta, "iteration": it})
            raise TrainingDiverged(
                f"iteration {it}: {err}; t={batch[2].tolist()}, adam step={state.step}"
            ) from err
        lr = cosine_lr(it, config.iterations, config.lr_max, config.lr_min)
        if lr > 0:
            params, state = sgd_adam_step(params, grad, state, lr)
        losses[it], lrs[it] = loss, lr
        if log_every and (it % log_every == 0 or it == config.iterations - 1):
            log.info("iter %d loss %.6f lr %.2e", it, loss, lr)
        if out_dir is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            ckpt = out_dir / f"step{it + 1:07d}.ckpt"
            save_checkpoint(ckpt, params, state, meta)
    if out_dir is not None:
        ckpt = out_dir / "final.ckpt"
        save_checkpoint(ckpt, params, state, meta)
        write_loss_csv(out_dir / "loss.csv", losses, lrs)
    return TrainReport(losses, lrs, time.perf_counter() - start, ckpt, params, state)


Predictor = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


def sample(params, y, s: Schedule, rng, trace: bool = False):
    """Restore ``x0`` from ``y``; returns ``x0`` or ``(x0, [x_T, ..., x_0])``.

    ``params`` is a :class:`PredictorParams` or any callable
    ``(x_t, y, t) -> x0_hat``.
    """
    y = np.asarray(y, dtype=np.float64)
    if isinstance(params, PredictorParams):
        f = lambda x, yy, t: predict(params, x, yy, t, s)  # noqa: E731
    else:
        f = params
    x = y + s.kappa * math.sqrt(s.eta_at(s.T)) * rng.standard_normal(y.shape)
    states = [x] if trace else None
    for t in range(s.T, 0, -1):
        x0_hat = f(x, y, t)
        x = reverse_step(x, x0_hat, t, s, rng)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state produced at step t={t}")
        if trace:
            states.append(x)
    return (x, states) if trace else x


# --- evaluation --------------------------------------------------------------

PSNR_CAP = 99.0


def mse(a, b) -> float:
    return float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))


def psnr(a, b) -> float:
    """PSNR on [0, 1] signals, capped at 99 dB for identical inputs."""
    m = mse(a, b)
    if m == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10 * math.log10(1.0 / m))


def ssim_lite(a, b, window: int = 7) -> float:
    """Single-scale SSIM with a uniform window, averaged over channels."""
    from scipy.ndimage import uniform_filter

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[None], b[None]
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for ca, cb in zip(a, b):
        mu_a, mu_b = uniform_filter(ca, window), uniform_filter(cb, window)
        saa = uniform_filter(ca * ca, window) - mu_a**2
        sbb = uniform_filter(cb * cb, window) - mu_b**2
        sab = uniform_filter(ca * cb, window) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def make_testset(kind: str, n: int, size: int, spec: DegradationSpec, seed: int, channels: int = 1):
    """Held-out ``(y, x0)`` pairs from procedural images."""
    x0 = toy_images(kind, n, size, make_rng(seed, 1), channels)
    y = np.stack([degrade(x, spec, make_rng(seed, 2, i)) for i, x in enumerate(x0)])
    return y, x0


def evaluate(params, testset, s: Schedule, seed: int = 0) -> dict:
    """Restore every LQ image and score it against its HQ target."""
    y, x0 = (np.asarray(a, dtype=np.float64) for a in testset)
    if len(y) == 0:
        raise ValueError("empty test set")
    if y.shape != x0.shape:
        raise ValueError(f"LQ {y.shape} and HQ {x0.shape} shapes differ")
    restored = np.clip(sample(params, y, s, make_rng(seed, 3)), 0.0, 1.0)
    per_image = []
    for i in range(len(y)):
        per_image.append(
            {
                "index": i,
                "mse": mse(restored[i], x0[i]),
                "psnr": psnr(restored[i], x0[i]),
                "ssim": ssim_lite(restored[i], x0[i]),
                "input_mse": mse(y[i], x0[i]),
                "input_psnr": psnr(y[i], x0[i]),
            }
        )
    keys = ("mse", "psnr", "ssim", "input_mse", "input_psnr")
    means = {k: float(np.mean([r[k] for r in per_image])) for k in keys}
    return {"per_image": per_image, "mean": means, "restored": restored}
