"""Gaussian kernels of the residual-shifting chain.

All covariances are isotropic, so a kernel is a mean array plus one scalar
variance.  Timesteps are 1-based; ``eta_0 = 0`` makes the ``t = 1``
posterior a point mass at ``x0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from resshift.schedule import Schedule


@dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray
    var: float

    def __post_init__(self):
        if not self.var >= 0:
            raise ValueError(f"variance must be >= 0, got {self.var}")

    @property
    def std(self) -> float:
        return math.sqrt(self.var)


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _same_shape(*arrays):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {[a.shape for a in arrays]}")


def forward_transition_params(x_prev, x0, y0, t: int, s: Schedule) -> GaussianParams:
    """q(x_t | x_{t-1}, y0) = N(x_{t-1} + alpha_t (y0 - x0), kappa^2 alpha_t)."""
    x_prev, x0, y0 = _as_array(x_prev), _as_array(x0), _as_array(y0)
    _same_shape(x_prev, x0, y0)
    a = s.alpha_at(t)
    return GaussianParams(x_prev + a * (y0 - x0), s.kappa**2 * a)


def marginal_params(x0, y0, t: int, s: Schedule) -> GaussianParams:
    """q(x_t | x0, y0) = N(x0 + eta_t (y0 - x0), kappa^2 eta_t)."""
    x0, y0 = _as_array(x0), _as_array(y0)
    _same_shape(x0, y0)
    s.check_step(t)
    e = s.eta_at(t)
    return GaussianParams(x0 + e * (y0 - x0), s.kappa**2 * e)


def sample_marginal(x0, y0, t: int, s: Schedule, rng) -> np.ndarray:
    g = marginal_params(x0, y0, t, s)
    xi = rng.standard_normal(g.mean.shape)
    return g.mean + g.std * xi


def posterior_params(x_t, x0, t: int, s: Schedule) -> GaussianParams:
    """q(x_{t-1} | x_t, x0, y0); ``y0`` cancels out of the closed form."""
    x_t, x0 = _as_array(x_t), _as_array(x0)
    _same_shape(x_t, x0)
    s.check_step(t)
    eta_t, eta_prev, a = s.eta_at(t), s.eta_at(t - 1), s.alpha_at(t)
    mean = (eta_prev / eta_t) * x_t + (a / eta_t) * x0
    return GaussianParams(mean, s.kappa**2 * eta_prev / eta_t * a)


def reverse_step(x_t, x0_hat, t: int, s: Schedule, rng) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1} with the predicted ``x0_hat``."""
    g = posterior_params(x_t, x0_hat, t, s)
    if t == 1:
        return g.mean
    return g.mean + g.std * rng.standard_normal(g.mean.shape)


def elbo_weight(t: int, s: Schedule) -> tuple[float, bool]:
    """Return ``(w_t, is_sentinel)``.

    ``w_t = alpha_t / (2 kappa^2 eta_t eta_{t-1})`` for ``t >= 2``.  At
    ``t = 1`` the formula divides by ``eta_0 = 0``; the weight is defined as 1
    and flagged.
    """
    s.check_step(t)
    if t == 1:
        return 1.0, True
    return s.alpha_at(t) / (2 * s.kappa**2 * s.eta_at(t) * s.eta_at(t - 1)), False
