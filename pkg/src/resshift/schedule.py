"""Shifting sequence for the residual-shifting chain.

The chain moves the marginal mean from the HQ signal ``x0`` to the LQ signal
``y0`` by cumulative fractions ``eta_t`` of the residual ``y0 - x0``.  The
per-step increments are ``alpha_t = eta_t - eta_{t-1}`` with ``eta_0 = 0``.

``sqrt(eta_t)`` follows a non-uniform geometric curve between pinned
endpoints::

    sqrt(eta_t) = sqrt(eta_1) * b0 ** beta_t,            t = 2..T-1
    beta_t      = ((t - 1) / (T - 1)) ** p * (T - 1)
    b0          = exp(log(eta_T / eta_1) / (2 * (T - 1)))

with ``eta_1 = min((0.04 / kappa) ** 2, eta_1_cap)`` and ``eta_T`` fixed.
Timesteps are 1-based throughout; index 0 of the arrays is ``t = 1``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

# kappa * sqrt(eta_1) target at the first step
FIRST_STEP_NOISE = 0.04


@dataclass(frozen=True)
class ScheduleParams:
    T: int
    p: float = 0.3
    kappa: float = 2.0
    eta_1_cap: float = 0.001
    eta_T: float = 0.999

    def __post_init__(self):
        if not isinstance(self.T, (int, np.integer)) or isinstance(self.T, bool):
            raise ValueError(f"T must be an integer, got {self.T!r}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if not self.p > 0:
            raise ValueError(f"p must be > 0, got {self.p}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if not 0 < self.eta_1_cap < self.eta_T < 1:
            raise ValueError(
                "need 0 < eta_1_cap < eta_T < 1, got "
                f"eta_1_cap={self.eta_1_cap}, eta_T={self.eta_T}"
            )


@dataclass(frozen=True)
class Schedule:
    """Precomputed ``eta``/``alpha`` for one parameter set.

    Arrays are read-only; treat the object as an immutable value.
    """

    params: ScheduleParams
    eta: np.ndarray
    alpha: np.ndarray
    b0: float
    beta: np.ndarray = field(repr=False)
    eta_0: float = 0.0

    @property
    def T(self) -> int:
        return self.params.T

    @property
    def kappa(self) -> float:
        return self.params.kappa

    def eta_at(self, t: int) -> float:
        """``eta_t`` for ``t`` in ``0..T`` (``eta_0 = 0``)."""
        self.check_step(t, allow_zero=True)
        return self.eta_0 if t == 0 else float(self.eta[t - 1])

    def alpha_at(self, t: int) -> float:
        self.check_step(t)
        return float(self.alpha[t - 1])

    def check_step(self, t: int, allow_zero: bool = False) -> None:
        lo = 0 if allow_zero else 1
        if not lo <= t <= self.T:
            raise ValueError(f"timestep {t} outside [{lo}, {self.T}]")


def first_eta(params: ScheduleParams) -> float:
    return min((FIRST_STEP_NOISE / params.kappa) ** 2, params.eta_1_cap)


def build_schedule(params: ScheduleParams) -> Schedule:
    T = params.T
    if T == 1:
        # single full shift
        eta = np.array([params.eta_T])
        beta = np.zeros(1)
        b0 = 1.0
    else:
        eta_1 = first_eta(params)
        b0 = math.exp(math.log(params.eta_T / eta_1) / (2 * (T - 1)))
        t = np.arange(1, T + 1, dtype=np.float64)
        beta = ((t - 1) / (T - 1)) ** params.p * (T - 1)
        eta = (math.sqrt(eta_1) * b0**beta) ** 2
        eta[0] = eta_1
        eta[-1] = params.eta_T
    alpha = np.diff(eta, prepend=0.0)
    if np.any(alpha <= 0):
        raise ValueError(f"schedule is not strictly increasing for {params}")
    for arr in (eta, alpha, beta):
        arr.setflags(write=False)
    return Schedule(params=params, eta=eta, alpha=alpha, b0=b0, beta=beta)


def relative_noise_intensity(s: Schedule, signal_power: float = 1.0) -> np.ndarray:
    """Noise-to-signal amplitude ``sqrt(kappa^2 eta_t / signal_power)``."""
    if not signal_power > 0:
        raise ValueError(f"signal_power must be > 0, got {signal_power}")
    return np.sqrt(s.kappa**2 * s.eta / signal_power)


def shifting_speed(s: Schedule) -> np.ndarray:
    return np.sqrt(s.eta)


def schedule_table(s: Schedule, signal_power: float = 1.0) -> list[dict]:
    rel = relative_noise_intensity(s, signal_power)
    speed = shifting_speed(s)
    return [
        {
            "t": t + 1,
            "eta": float(s.eta[t]),
            "alpha": float(s.alpha[t]),
            "sqrt_eta": float(speed[t]),
            "rel_noise": float(rel[t]),
        }
        for t in range(s.T)
    ]


def format_schedule_csv(s: Schedule, signal_power: float = 1.0) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["t", "eta", "alpha", "sqrt_eta", "rel_noise"], lineterminator="\n")
    writer.writeheader()
    for row in schedule_table(s, signal_power):
        writer.writerow({k: (v if k == "t" else repr(v)) for k, v in row.items()})
    return buf.getvalue()


def write_schedule_csv(s: Schedule, path, signal_power: float = 1.0) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_schedule_csv(s, signal_power))
