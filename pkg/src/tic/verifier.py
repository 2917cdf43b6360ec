"""Strong-equilibrium checks by expanding exact spike-deviation gains.

For a candidate policy u, a deviation map v = alpha_v x + beta_v applied on
[t, t + eps) and the candidate elsewhere, the gain

    g(eps) = J(t, x; spike) - J(t, x; u)

is computed exactly by moment propagation on a ladder of window widths and
fitted by g = G1 eps + G2 eps^2 + G3 eps^3. A Nash equilibrium only
guarantees G1 <= 0; a deviation with G1 = 0 and G2 > 0 still pays.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from tic.dynamics import CoefficientSet, SpikePolicy, eval_coefficients, sample_central_moments, simulate_terminal
from tic.equilibrium import _gamma1_from, _sensitivity, solve_equilibrium_backward
from tic.errors import ConfigError, NumericalError, TicError
from tic.moments import MomentPolynomials, propagate_transition
from tic.objective import PsiSpec, adjoint_weights, objective_from_raw, psi_eval

DEFAULT_LADDER = (1e-2, 5e-3, 2.5e-3, 1.25e-3)  # fractions of the horizon
TAU1 = 1e-8
TAU2 = 1e-6

WORSE_FIRST = "worse-first-order"
WORSE_SECOND = "worse-second-order"
PROFITABLE = "profitable"
INCONCLUSIVE = "inconclusive"
CLASSES = (WORSE_FIRST, WORSE_SECOND, PROFITABLE, INCONCLUSIVE)


def _as_map(deviation):
    if isinstance(deviation, (tuple, list)):
        return float(deviation[0]), float(deviation[1])
    return 0.0, float(deviation)


def default_ladder(horizon: float) -> tuple[float, ...]:
    return tuple(e * horizon for e in DEFAULT_LADDER)


@dataclass
class DeviationSpec:
    t: float
    x: float
    alpha_v: float
    beta_v: float
    ladder: tuple[float, ...]

    def __post_init__(self):
        self.ladder = _check_ladder(self.ladder)


def _check_ladder(ladder):
    ladder = tuple(float(e) for e in ladder)
    if len(ladder) < 3:
        raise ConfigError("need at least three widths", "verify.epsilon_ladder")
    if any(e <= 0 for e in ladder) or any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError("widths must be positive and strictly decreasing", "verify.epsilon_ladder")
    return ladder


class SpikeGainEvaluator:
    """Exact spike gains for one (coefficients, policy, objective).

    Transitions over (t + eps, T] and the undeviated window are cached, so
    both objective values share every floating-point operation outside the
    window.
    """

    def __init__(self, coeffs: CoefficientSet, policy, spec: PsiSpec, step: float | None = None):
        self.coeffs, self.policy, self.spec, self.step = coeffs, policy, spec, step
        self._tails: dict = {}
        self._windows: dict = {}

    def _propagate(self, policy, t_a, t_b):
        return propagate_transition(self.coeffs, policy, t_a, t_b, self.spec.n, self.step).matrix

    def tail(self, t):
        if t not in self._tails:
            self._tails[t] = self._propagate(self.policy, t, self.coeffs.horizon)
        return self._tails[t]

    def base_window(self, t, eps):
        key = (t, eps)
        if key not in self._windows:
            self._windows[key] = self._propagate(self.policy, t, t + eps)
        return self._windows[key]

    def gain(self, t, x, deviation, eps):
        T = self.coeffs.horizon
        if not (0 <= t and eps >= 0 and t + eps <= T + 1e-12):
            raise ConfigError(f"window [{t}, {t}+{eps}) does not fit in [0, {T}]", "verify")
        if eps == 0:
            return np.zeros(np.shape(x)) if np.ndim(x) else 0.0
        alpha_v, beta_v = _as_map(deviation)
        tail = self.tail(t + eps)
        spiked = self._propagate(SpikePolicy(self.policy, alpha_v, beta_v, t, eps), t, t + eps)
        j_dev = objective_from_raw(self.spec, t, MomentPolynomials(tail @ spiked).values(x))
        j_base = objective_from_raw(self.spec, t, MomentPolynomials(tail @ self.base_window(t, eps)).values(x))
        return j_dev - j_base

    def gamma1(self, t, x, deviation):
        sens = _sensitivity(self.tail(t), self.spec, x)
        x = np.asarray(x, dtype=float)
        alpha_v, beta_v = _as_map(deviation)
        return _gamma1_from(sens, eval_coefficients(self.coeffs, t), self.policy(t, x), alpha_v * x + beta_v)


def exact_spike_gain(coeffs, policy, spec: PsiSpec, deviation, t: float, x, eps: float, step=None):
    """g(eps) = J(t, x; spike) - J(t, x; policy); ``deviation`` is a control
    value or an ``(alpha_v, beta_v)`` map."""
    return SpikeGainEvaluator(coeffs, policy, spec, step).gain(t, x, deviation, eps)


def fit_expansion(ladder, gains):
    """Least-squares fit of g = G1 e + G2 e^2 + G3 e^3 (no constant term).

    Returns ``(G1, G2, G3, residual)``; the residual is the largest absolute
    fit error over the ladder. ``gains`` may carry a trailing point axis.
    """
    ladder = np.asarray(_check_ladder(ladder))
    if np.min(ladder[:-1] / ladder[1:]) < 1.05:
        raise ConfigError("successive widths are too close for a stable fit", "verify.epsilon_ladder")
    gains = np.asarray(gains, dtype=float)
    if gains.shape[0] != ladder.size or not np.all(np.isfinite(gains)):
        raise ConfigError("need one finite gain per ladder width", "gains")
    scale = ladder[0]
    u = ladder / scale
    design = np.column_stack([u, u**2, u**3])
    if np.linalg.cond(design) > 1e12:
        raise ConfigError("ill-conditioned ladder", "verify.epsilon_ladder")
    flat = gains.reshape(ladder.size, -1)
    coef, *_ = np.linalg.lstsq(design, flat, rcond=None)
    residual = np.max(np.abs(design @ coef - flat), axis=0)
    coef = coef / np.array([scale, scale**2, scale**3])[:, None]
    out = [c.reshape(gains.shape[1:]) for c in coef] + [residual.reshape(gains.shape[1:])]
    if gains.ndim == 1:
        out = [float(v) for v in out]
    return tuple(out)


def classify(g1: float, g2: float, tau1: float = TAU1, tau2: float = TAU2) -> str:
    if g1 < -tau1:
        return WORSE_FIRST
    if g1 > tau1:
        return PROFITABLE
    if g2 < -tau2:
        return WORSE_SECOND
    if g2 > tau2:
        return PROFITABLE
    return INCONCLUSIVE


@dataclass
class ExpansionReport:
    t: float
    x: float
    alpha_v: float
    beta_v: float
    gamma1_analytic: float
    gamma1_fit: float
    gamma2_fit: float
    gamma3_fit: float
    fit_residual: float
    classification: str
    gains: tuple = ()

    @property
    def smallest_gain(self) -> float:
        return float(self.gains[-1])

    def key(self):
        return (self.t, self.x, self.alpha_v, self.beta_v)

    def as_dict(self) -> dict:
        return {
            "t": self.t, "x": self.x, "alpha_v": self.alpha_v, "beta_v": self.beta_v,
            "gamma1_analytic": self.gamma1_analytic, "gamma1_fit": self.gamma1_fit,
            "gamma2_fit": self.gamma2_fit, "gamma3_fit": self.gamma3_fit,
            "fit_residual": self.fit_residual, "class": self.classification,
            "smallest_gain": self.smallest_gain,
        }


def _reports_for(evaluator, t, xs, deviation, ladder, tau1, tau2):
    xs = np.asarray(xs, dtype=float)
    gains = np.array([evaluator.gain(t, xs, deviation, e) for e in ladder])
    g1, g2, g3, resid = fit_expansion(ladder, gains)
    analytic = evaluator.gamma1(t, xs, deviation)
    alpha_v, beta_v = _as_map(deviation)
    return [
        ExpansionReport(
            float(t), float(xs[i]), alpha_v, beta_v, float(analytic[i]), float(g1[i]), float(g2[i]),
            float(g3[i]), float(resid[i]), classify(analytic[i], g2[i], tau1, tau2), tuple(gains[:, i]),
        )
        for i in range(xs.size)
    ]


def classify_deviation(
    coeffs, policy, spec: PsiSpec, t: float, x: float, deviation, ladder=None,
    tau1: float = TAU1, tau2: float = TAU2, step=None,
) -> ExpansionReport:
    """Expand the gain of one deviation at one anchor and classify it.

    The first-order decision uses the analytic G1; G2 comes from the fit.
    """
    ladder = default_ladder(coeffs.horizon) if ladder is None else ladder
    evaluator = SpikeGainEvaluator(coeffs, policy, spec, step)
    return _reports_for(evaluator, t, [x], deviation, ladder, tau1, tau2)[0]


@dataclass
class SweepResult:
    verdict: str
    reports: list
    witnesses: list
    inconclusive: list
    excluded: int
    curvature: dict = field(default_factory=dict)

    def counts(self) -> dict:
        out = dict.fromkeys(CLASSES, 0)
        for r in self.reports:
            out[r.classification] += 1
        return out


def strong_equilibrium_sweep(
    coeffs, policy, spec: PsiSpec, t_grid, x_grid, alphas, beta_offsets,
    ladder=None, tau1: float = TAU1, tau2: float = TAU2, step=None, threads: int = 1,
) -> SweepResult:
    """Classify every deviation on a grid of anchors and affine maps.

    At anchor time t the deviation intercepts are ``beta(t) + offset`` with
    ``beta(t)`` the candidate's intercept; slopes ``alphas`` are absolute.
    The deviation identical to the candidate map is skipped.
    """
    ladder = default_ladder(coeffs.horizon) if ladder is None else _check_ladder(ladder)
    t_grid = sorted(float(t) for t in t_grid)
    xs = np.asarray(sorted(float(x) for x in x_grid))
    if not t_grid or xs.size == 0 or len(alphas) == 0 or len(beta_offsets) == 0:
        raise ConfigError("sweep grids must be non-empty", "verify")
    evaluator = SpikeGainEvaluator(coeffs, policy, spec, step)

    jobs, excluded = [], 0
    for t in t_grid:
        a_hat, b_hat = (float(v) for v in policy.rates(t))
        for a in alphas:
            for off in beta_offsets:
                dev = (float(a), b_hat + float(off))
                if abs(dev[0] - a_hat) <= 1e-12 and abs(dev[1] - b_hat) <= 1e-12:
                    excluded += xs.size
                    continue
                jobs.append((t, dev))

    def run(job):
        t, dev = job
        try:
            return _reports_for(evaluator, t, xs, dev, ladder, tau1, tau2)
        except TicError as exc:
            raise NumericalError(f"sweep cell t={t!r}, alpha_v={dev[0]!r}, beta_v={dev[1]!r} failed: {exc}") from exc

    # warm the caches serially so worker threads only read them
    for t in t_grid:
        evaluator.tail(t)
        for e in ladder:
            evaluator.tail(t + e)
            evaluator.base_window(t, e)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            batches = list(pool.map(run, jobs))
    else:
        batches = [run(job) for job in jobs]
    reports = sorted((r for batch in batches for r in batch), key=ExpansionReport.key)

    witnesses = [r for r in reports if r.classification == PROFITABLE]
    inconclusive = [r for r in reports if r.classification == INCONCLUSIVE]
    if witnesses:
        verdict = "not-strong"
    elif inconclusive:
        verdict = "inconclusive"
    else:
        verdict = "strong-candidate"

    curvature = {}
    for r in reports:
        d = r.alpha_v * r.x + r.beta_v - float(policy(r.t, r.x))
        if abs(d) > 1e-9:
            c = -r.gamma1_analytic / d**2
            curvature[(r.t, r.x)] = min(c, curvature.get((r.t, r.x), math.inf))
    return SweepResult(verdict, reports, witnesses, inconclusive, excluded, curvature)


def _sample_objective(spec, sample):
    moments = sample_central_moments(sample, spec.n)
    return moments.mean + psi_eval(spec, 0.0, moments.central), moments


def mc_cross_check(
    coeffs, policy, spec: PsiSpec, t: float, x: float, deviation, eps: float,
    paths: int, seed: int, step: float | None = None, threads: int = 1,
):
    """Monte Carlo estimate of the spike gain with common random numbers.

    Returns ``(gain, standard_error)``; the error is the delta-method one,
    using the adjoint weights as the influence function of the plug-in
    objective.
    """
    alpha_v, beta_v = _as_map(deviation)
    spiked = SpikePolicy(policy, alpha_v, beta_v, t, eps)
    kw = dict(step=step, seed=seed, threads=threads, extra_nodes=(t, t + eps))
    base = simulate_terminal(coeffs, policy, t, x, paths, **kw)
    dev = simulate_terminal(coeffs, spiked, t, x, paths, **kw)
    j_base, m_base = _sample_objective(spec, base)
    j_dev, m_dev = _sample_objective(spec, dev)

    def influence(sample, moments):
        w = adjoint_weights(spec, moments.mean, moments.central)
        powers = sample.terminal[None, :] ** np.arange(spec.n + 1)[:, None]
        return w @ powers

    diff = influence(dev, m_dev) - influence(base, m_base)
    se = float(np.std(diff, ddof=1) / math.sqrt(paths)) if paths > 1 else math.inf
    return float(j_dev - j_base), se


@dataclass
class ParameterPoint:
    weights: dict
    verdict: str
    counts: dict
    error: str = ""


def objective_parameter_sweep(
    coeffs, kind: str, weight_grid, times, solver_xs, t_grid, x_grid, alphas, beta_offsets,
    ladder=None, tau1: float = TAU1, tau2: float = TAU2, step=None, threads: int = 1,
    max_moment: int | None = None, solver_options: dict | None = None,
) -> list[ParameterPoint]:
    """Solve and sweep once per weight set. A numerical failure at one point
    is recorded on that point (verdict ``"failed"``) instead of aborting."""
    points = []
    for weights in weight_grid:
        spec = PsiSpec(kind, dict(weights), max_moment)
        try:
            sol = solve_equilibrium_backward(coeffs, spec, times, solver_xs, step=step, **(solver_options or {}))
            res = strong_equilibrium_sweep(
                coeffs, sol.policy, spec, t_grid, x_grid, alphas, beta_offsets,
                ladder, tau1, tau2, step, threads,
            )
        except NumericalError as exc:
            points.append(ParameterPoint(dict(weights), "failed", dict.fromkeys(CLASSES, 0), str(exc)))
            continue
        points.append(ParameterPoint(dict(weights), res.verdict, res.counts()))
    return points
