"""Independent numerical checks of the chain's closed forms.

Each ``verify_*`` returns an :class:`OracleReport`.  ``statistic`` is the
worst discrepancy divided by its tolerance, so a report passes when
``statistic <= tolerance == 1``; the raw errors sit in ``details``.

Monte Carlo checks use scalar anchors ``x0 = 0.2`` and ``y0 = 0.8``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from resshift.kernel import forward_transition_params, marginal_params, posterior_params, reverse_step
from resshift.rng import ZeroNoise, make_rng
from resshift.schedule import Schedule, ScheduleParams, build_schedule, relative_noise_intensity

X0_ANCHOR = 0.2
Y0_ANCHOR = 0.8

MEAN_SE_TOL = 4.0
VAR_REL_TOL = 0.02
POSTERIOR_ABS_TOL = 1e-4
TELESCOPE_TOL = 1e-12
ENDPOINT_TOL = 1e-6
INVERSION_TOL = 1e-10

CI_SCHEDULES = (
    ScheduleParams(T=15, p=0.3, kappa=2.0),
    ScheduleParams(T=1000, p=0.8, kappa=40.0),
)
FLOW_STEPS = (1, 4, 8, 15)


@dataclass
class OracleReport:
    name: str
    statistic: float
    tolerance: float
    passed: bool
    n_samples: int
    seed: int
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _report(name, ratios: dict, n_samples, seed, details) -> OracleReport:
    worst = max(ratios.values())
    passed = bool(np.isfinite(worst) and worst <= 1.0)
    return OracleReport(name, float(worst), 1.0, passed, int(n_samples), int(seed), details)


def _tag(s: Schedule) -> str:
    p = s.params
    return f"T={p.T},p={p.p:g},kappa={p.kappa:g}"


# --- flow-matching view ----------------------------------------------------


@dataclass(frozen=True)
class FlowPath:
    """Noisy linear path from LQ (coefficient 0) to HQ (coefficient 1).

    Diffusion step ``s`` corresponds to coefficient ``1 - eta_s``.
    """

    schedule: Schedule
    lq_at_time_zero: bool = True

    def coeff(self, step: int) -> float:
        c = 1.0 - self.schedule.eta_at(step)
        return c if self.lq_at_time_zero else 1.0 - c

    def mean(self, x0, y0, coeff: float):
        return coeff * np.asarray(x0) + (1.0 - coeff) * np.asarray(y0)

    def std(self, coeff: float) -> float:
        return self.schedule.kappa * math.sqrt(1.0 - coeff)


def flow_sample(x0, y0, coeff: float, kappa: float, rng) -> np.ndarray:
    """``coeff * x0 + (1 - coeff) * y0 + kappa * sqrt(1 - coeff) * xi``."""
    if not 0.0 <= coeff <= 1.0:
        raise ValueError(f"flow coefficient must be in [0, 1], got {coeff}")
    x0 = np.asarray(x0, dtype=np.float64)
    y0 = np.asarray(y0, dtype=np.float64)
    if x0.shape != y0.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {y0.shape}")
    xi = rng.standard_normal(x0.shape)
    return coeff * x0 + (1.0 - coeff) * y0 + kappa * math.sqrt(1.0 - coeff) * xi


# --- marginal composition --------------------------------------------------


def compose_transitions(s: Schedule, t: int, n_chains: int, rng, x0=X0_ANCHOR, y0=Y0_ANCHOR):
    """Run ``n_chains`` scalar chains through single-step transitions 1..t."""
    x0a = np.full(n_chains, float(x0))
    y0a = np.full(n_chains, float(y0))
    x = x0a.copy()
    for i in range(1, t + 1):
        g = forward_transition_params(x, x0a, y0a, i, s)
        x = g.mean + g.std * rng.standard_normal(n_chains)
    return x


def verify_marginal_composition(s: Schedule, t: int, n_chains: int = 100_000, seed: int = 0) -> OracleReport:
    if n_chains < 10_000:
        raise ValueError("n_chains must be >= 1e4")
    x = compose_transitions(s, t, n_chains, make_rng(seed, 1, s.T, t))
    target = marginal_params(X0_ANCHOR, Y0_ANCHOR, t, s)
    se = target.std / math.sqrt(n_chains)
    mean_err = abs(x.mean() - float(target.mean))
    var_rel = abs(x.var(ddof=1) / target.var - 1.0)
    return _report(
        f"marginal[{_tag(s)},t={t}]",
        {"mean": mean_err / (MEAN_SE_TOL * se), "var": var_rel / VAR_REL_TOL},
        n_chains,
        seed,
        {"mean_err": mean_err, "mean_se": se, "var_rel_err": var_rel},
    )


# --- posterior by grid quadrature ------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    points: int = 20001
    half_width_sigmas: float = 6.0


def _grid_moments(grid, logp):
    w = np.exp(logp - logp.max())
    z = trapezoid(w, grid)
    m = trapezoid(grid * w, grid) / z
    v = trapezoid((grid - m) ** 2 * w, grid) / z
    return m, v


def grid_posterior(x_t: float, x0: float, y0: float, t: int, s: Schedule, grid: GridSpec):
    """Normalize q(x_t | x_{t-1}, y0) q(x_{t-1} | x0, y0) over an x_{t-1} grid.

    Returns ``(mean, var, quadrature_error_estimate)``.
    """
    if t < 2:
        raise ValueError("grid posterior needs t >= 2")
    if grid.points < 101:
        raise ValueError(f"grid too coarse: {grid.points} points")
    k2 = s.kappa**2
    a, eta_prev = s.alpha_at(t), s.eta_at(t - 1)
    e0 = y0 - x0
    closed = posterior_params(x_t, x0, t, s)
    centre, width = float(closed.mean), grid.half_width_sigmas * closed.std
    xs = np.linspace(centre - width, centre + width, grid.points)
    logp = -((x_t - xs - a * e0) ** 2) / (2 * k2 * a) - (xs - x0 - eta_prev * e0) ** 2 / (2 * k2 * eta_prev)
    m, v = _grid_moments(xs, logp)
    m2, v2 = _grid_moments(xs[::2], logp[::2])
    return m, v, max(abs(m - m2), abs(v - v2))


def verify_posterior_bayes(
    s: Schedule,
    t: int,
    grid: GridSpec = GridSpec(),
    x0: float = X0_ANCHOR,
    y0: float = Y0_ANCHOR,
    x_t: float | None = None,
) -> OracleReport:
    if x_t is None:
        m = marginal_params(x0, y0, t, s)
        x_t = float(m.mean) + 0.5 * m.std
    gm, gv, quad = grid_posterior(x_t, x0, y0, t, s, grid)
    closed = posterior_params(x_t, x0, t, s)
    mean_err = abs(gm - float(closed.mean))
    var_err = abs(gv - closed.var)
    return _report(
        f"posterior[{_tag(s)},t={t}]",
        {
            "mean": mean_err / POSTERIOR_ABS_TOL,
            "var": var_err / POSTERIOR_ABS_TOL,
            "quadrature": quad / POSTERIOR_ABS_TOL,
        },
        grid.points,
        0,
        {"mean_err": mean_err, "var_err": var_err, "quadrature_err": quad, "x_t": x_t},
    )


# --- algebraic identities --------------------------------------------------


def verify_variance_telescoping(s: Schedule, alpha=None) -> OracleReport:
    """``kappa^2 eta_{t-1} + kappa^2 alpha_t == kappa^2 eta_t`` for every t."""
    alpha = s.alpha if alpha is None else np.asarray(alpha, dtype=np.float64)
    k2 = s.kappa**2
    eta_prev = np.concatenate([[s.eta_0], s.eta[:-1]])
    err = float(np.max(np.abs(k2 * eta_prev + k2 * alpha - k2 * s.eta)))
    return _report(f"telescoping[{_tag(s)}]", {"identity": err / TELESCOPE_TOL}, s.T, 0, {"max_abs_err": err})


def verify_snr_curve_monotone(s: Schedule) -> OracleReport:
    rel = relative_noise_intensity(s, 1.0)
    p = s.params
    first = p.kappa * math.sqrt(p.eta_T if p.T == 1 else min((0.04 / p.kappa) ** 2, p.eta_1_cap))
    last = p.kappa * math.sqrt(p.eta_T)
    increasing = bool(np.all(np.diff(rel) > 0))
    e_first, e_last = abs(rel[0] - first), abs(rel[-1] - last)
    return _report(
        f"snr[{_tag(s)}]",
        {
            "monotone": 0.0 if increasing else math.inf,
            "first": e_first / ENDPOINT_TOL,
            "last": e_last / ENDPOINT_TOL,
        },
        s.T,
        0,
        {"first": float(rel[0]), "last": float(rel[-1]), "strictly_increasing": increasing},
    )


def verify_flow_equivalence(s: Schedule, step: int, n: int = 100_000, seed: int = 0) -> OracleReport:
    """Flow sample at coefficient ``1 - eta_s`` vs the diffusion marginal at ``s``."""
    path = FlowPath(s)
    c = path.coeff(step)
    target = marginal_params(X0_ANCHOR, Y0_ANCHOR, step, s)
    mean_identity = abs(float(path.mean(X0_ANCHOR, Y0_ANCHOR, c)) - float(target.mean))
    std_identity = abs(path.std(c) - target.std)
    x0a, y0a = np.full(n, X0_ANCHOR), np.full(n, Y0_ANCHOR)
    flow = flow_sample(x0a, y0a, c, s.kappa, make_rng(seed, 2, s.T, step))
    diff = marginal_params(x0a, y0a, step, s)
    ref = diff.mean + diff.std * make_rng(seed, 3, s.T, step).standard_normal(n)
    se = target.std * math.sqrt(2.0 / n)
    mc_mean = abs(flow.mean() - ref.mean())
    var_rel = abs(flow.var(ddof=1) / ref.var(ddof=1) - 1.0)
    return _report(
        f"flow[{_tag(s)},s={step}]",
        {
            "mean_identity": mean_identity / 1e-12,
            "std_identity": std_identity / 1e-12,
            "mc_mean": mc_mean / (MEAN_SE_TOL * se),
            "mc_var": var_rel / VAR_REL_TOL,
        },
        n,
        seed,
        {"coeff": c, "mean_identity_err": mean_identity, "mc_mean_diff": mc_mean, "var_rel_diff": var_rel},
    )


def verify_perfect_inversion(s: Schedule, seed: int = 0, shape=(1, 8, 8)) -> OracleReport:
    """Ancestral chain with ``x0_hat = x0`` and zero noise returns ``x0`` from any ``y``."""
    rng = make_rng(seed, 4, s.T)
    x0 = rng.uniform(0, 1, shape)
    y = rng.uniform(0, 1, shape)
    x = y.copy()
    for t in range(s.T, 0, -1):
        x = reverse_step(x, x0, t, s, ZeroNoise())
    err = float(np.max(np.abs(x - x0)))
    return _report(f"inversion[{_tag(s)}]", {"max_abs": err / INVERSION_TOL}, int(np.prod(shape)), seed, {"max_abs_err": err})


SUITES = ("marginal", "posterior", "flow", "snr", "telescoping", "inversion")


def run_suite(suite: str = "all", seed: int = 0, n_chains: int = 100_000) -> list[OracleReport]:
    if suite != "all" and suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from all, {', '.join(SUITES)}")
    wanted = SUITES if suite == "all" else (suite,)
    main = build_schedule(CI_SCHEDULES[0])
    reports = []
    if "marginal" in wanted:
        reports += [verify_marginal_composition(main, t, n_chains, seed) for t in range(1, main.T + 1)]
    if "posterior" in wanted:
        reports += [verify_posterior_bayes(main, t) for t in range(2, main.T + 1)]
    if "flow" in wanted:
        reports += [verify_flow_equivalence(main, step, n_chains, seed) for step in FLOW_STEPS]
    schedules = [build_schedule(p) for p in CI_SCHEDULES]
    if "snr" in wanted:
        reports += [verify_snr_curve_monotone(s) for s in schedules]
    if "telescoping" in wanted:
        reports += [verify_variance_telescoping(s) for s in schedules]
    if "inversion" in wanted:
        reports += [verify_perfect_inversion(build_schedule(ScheduleParams(T=T)), seed) for T in (1, 4, 15)]
    return reports


def format_table(reports: list[OracleReport]) -> str:
    width = max(len(r.name) for r in reports) if reports else 10
    lines = [f"{'oracle':<{width}}  {'stat/tol':>10}  result"]
    for r in reports:
        lines.append(f"{r.name:<{width}}  {r.statistic:>10.4f}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
