"""Nash equilibrium feedback policies from the first-order spike condition.

For a candidate policy u and a deviation value v at (t, x), the first-order
coefficient of the spike gain in the window width is

    G1(v) = sum_k w_k [ B (v - u) dY_k/dx + 1/2 ((D v + F)^2 - (D u + F)^2) d2Y_k/dx2 ]

with w the adjoint weights of the objective. G1 is quadratic in v, so its
stationary point is explicit. The backward sweep fixes the policy on
[t_i, T] and solves for the node value at t_i.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from tic.dynamics import AffinePolicy, CoefficientSet, eval_coefficients
from tic.errors import ConfigError, DegenerateFOCError, NumericalError
from tic.moments import MomentPolynomials, propagate_transition, raw_to_central
from tic.objective import PsiSpec, adjoint_weights

log = logging.getLogger(__name__)

DEGENERACY_FLOOR = 1e-12


def chebyshev_grid(lo: float, hi: float, count: int) -> np.ndarray:
    """Chebyshev-Gauss nodes on ``[lo, hi]`` in increasing order."""
    k = np.arange(count)
    nodes = np.cos((2 * k + 1) * np.pi / (2 * count))[::-1]
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * nodes


@dataclass
class _Sensitivity:
    """Adjoint-weighted x-derivatives of the moment maps at fixed (t, x)."""

    drift: np.ndarray  # sum_k w_k dY_k/dx
    diffusion: np.ndarray  # sum_k w_k d2Y_k/dx2


def _sensitivity(matrix, spec: PsiSpec, x) -> _Sensitivity:
    polys = MomentPolynomials(np.asarray(matrix))
    mean, central = raw_to_central(polys.values(x))
    w = adjoint_weights(spec, mean, central)
    return _Sensitivity(
        np.sum(w[1:] * polys.first(x)[1:], axis=0),
        np.sum(w[1:] * polys.second(x)[1:], axis=0),
    )


def _gamma1_from(sens: _Sensitivity, coeff_values, u, v):
    _, B, _, D, F = coeff_values
    d_sigma2 = (D * v + F) ** 2 - (D * u + F) ** 2
    return B * (v - u) * sens.drift + 0.5 * d_sigma2 * sens.diffusion


def _deviation_value(v, x):
    if isinstance(v, (tuple, list)):
        alpha_v, beta_v = v
        return alpha_v * np.asarray(x, dtype=float) + beta_v
    return v + 0 * np.asarray(x, dtype=float)


def gamma1(coeffs: CoefficientSet, policy, t: float, x, spec: PsiSpec, v, step=None):
    """First-order coefficient of J(t, x; spike) - J(t, x; policy) in the
    window width. ``v`` is a control value or an ``(alpha_v, beta_v)`` map."""
    phi = propagate_transition(coeffs, policy, t, coeffs.horizon, spec.n, step)
    sens = _sensitivity(phi.matrix, spec, x)
    u = policy(t, np.asarray(x, dtype=float))
    value = _gamma1_from(sens, eval_coefficients(coeffs, t), u, _deviation_value(v, x))
    return float(value) if np.ndim(value) == 0 else value


@dataclass
class FOCResult:
    t: float
    x: np.ndarray
    values: np.ndarray  # pointwise maximiser v*(x)
    alpha: float
    beta: float
    affine_residual: float
    concavity_margin: np.ndarray  # D^2 sum_k w_k d2Y_k/dx2, per x
    warnings: list = field(default_factory=list)


def _foc_from_matrix(matrix, coeff_values, t, xs, spec) -> FOCResult:
    _, B, _, D, F = coeff_values
    sens = _sensitivity(matrix, spec, xs)
    curvature = D * D * sens.diffusion
    if np.any(np.abs(curvature) < DEGENERACY_FLOOR):
        raise DegenerateFOCError(f"stationarity condition is degenerate at t={t:.17g}")
    values = -(B * sens.drift + D * F * sens.diffusion) / curvature
    if xs.size > 1:
        design = np.column_stack([xs, np.ones_like(xs)])
        (alpha, beta), *_ = np.linalg.lstsq(design, values, rcond=None)
    else:
        alpha, beta = 0.0, float(values[0])
    residual = float(np.max(np.abs(values - (alpha * xs + beta))))
    warnings = []
    if np.any(curvature >= 0):
        warnings.append(f"t={t:.17g}: stationary point is not a maximiser (concavity margin >= 0)")
    return FOCResult(t, xs, values, float(alpha), float(beta), residual, curvature, warnings)


def foc_solve_pointwise(coeffs: CoefficientSet, policy, t: float, xs, spec: PsiSpec, step=None) -> FOCResult:
    """Maximiser of the first-order coefficient at each x, with ``policy``
    governing (t, T], and its least-squares affine fit."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    phi = propagate_transition(coeffs, policy, t, coeffs.horizon, spec.n, step)
    return _foc_from_matrix(phi.matrix, eval_coefficients(coeffs, t), t, xs, spec)


@dataclass
class EquilibriumSolution:
    policy: AffinePolicy
    foc_residual: np.ndarray
    affine_residual: np.ndarray
    concavity_margin: np.ndarray  # max over the x-grid at each node
    corrector_iterations: np.ndarray
    warnings: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return self.policy.times


def _check_time_grid(times, horizon):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ConfigError("need at least two time nodes", "grids.time_steps")
    if np.any(np.diff(times) <= 0) or abs(times[0]) > 1e-12 or abs(times[-1] - horizon) > 1e-12:
        raise ConfigError("time grid must increase strictly from 0 to the horizon", "grids.time_steps")
    return times


def solve_equilibrium_backward(
    coeffs: CoefficientSet,
    spec: PsiSpec,
    times,
    xs,
    step: float | None = None,
    tol: float = 1e-10,
    max_corrector: int = 8,
    affine_tol: float = 1e-6,
) -> EquilibriumSolution:
    """Backward sweep for an affine Nash equilibrium.

    At node t_i the policy on [t_{i+1}, T] is already fixed. The predictor
    holds the t_{i+1} node value across [t_i, t_{i+1}]; each corrector pass
    interpolates linearly to the latest node estimate. At least one
    corrector pass runs and at most ``max_corrector``.
    """
    times = _check_time_grid(times, coeffs.horizon)
    xs = np.asarray(xs, dtype=float)
    n = spec.n
    D_grid = coeffs.D(times)
    if np.any(D_grid == 0):
        bad = times[np.flatnonzero(D_grid == 0)[0]]
        raise ConfigError(f"D vanishes at t={bad:.17g}; equilibrium solving needs D != 0", "coefficients.D")

    N = times.size - 1
    alpha, beta = np.zeros(N + 1), np.zeros(N + 1)
    foc_res, aff_res, margin = np.zeros(N + 1), np.zeros(N + 1), np.zeros(N + 1)
    iterations = np.zeros(N + 1, dtype=int)
    warnings: list = []

    def record(i, res: FOCResult, matrix):
        alpha[i], beta[i] = res.alpha, res.beta
        aff_res[i] = res.affine_residual
        margin[i] = float(np.max(res.concavity_margin))
        _, B, _, D, F = eval_coefficients(coeffs, times[i])
        sens = _sensitivity(matrix, spec, xs)
        u = res.alpha * xs + res.beta
        foc_res[i] = float(np.max(np.abs(B * sens.drift + D * (D * u + F) * sens.diffusion)))
        warnings.extend(res.warnings)
        if res.affine_residual > affine_tol * max(1.0, abs(res.beta)):
            warnings.append(f"t={times[i]:.17g}: pointwise maximiser is not affine (residual {res.affine_residual:.3g})")

    tail = np.eye(n + 1)
    res = _foc_from_matrix(tail, eval_coefficients(coeffs, times[N]), times[N], xs, spec)
    record(N, res, tail)

    for i in range(N - 1, -1, -1):
        t_i, t_next = times[i], times[i + 1]
        cvals = eval_coefficients(coeffs, t_i)

        def interval(a_i, b_i):
            piece = AffinePolicy(np.array([t_i, t_next]), np.array([a_i, alpha[i + 1]]), np.array([b_i, beta[i + 1]]))
            return tail @ propagate_transition(coeffs, piece, t_i, t_next, n, step).matrix

        res = _foc_from_matrix(interval(alpha[i + 1], beta[i + 1]), cvals, t_i, xs, spec)
        for it in range(1, max_corrector + 1):
            new = _foc_from_matrix(interval(res.alpha, res.beta), cvals, t_i, xs, spec)
            change = max(abs(new.alpha - res.alpha), abs(new.beta - res.beta))
            res = new
            if change <= tol * max(1.0, abs(res.beta)):
                break
        else:
            raise NumericalError(f"corrector did not converge at t={t_i:.17g} (last change {change:.3g})")
        iterations[i] = it
        tail = interval(res.alpha, res.beta)
        record(i, res, tail)

    policy = AffinePolicy(times, alpha, beta)
    for w in warnings:
        log.warning(w)
    return EquilibriumSolution(policy, foc_res, aff_res, margin, iterations, warnings)


def closed_form_mv(coeffs: CoefficientSet, gamma: float, times=None) -> AffinePolicy:
    """Constant-coefficient mean-variance equilibrium,
    u(t) = B / (gamma D^2) exp(-A (T - t)) - F / D, independent of x."""
    if not coeffs.is_constant:
        raise ConfigError("closed form needs constant coefficients", "coefficients")
    if not gamma > 0:
        raise ConfigError("must be positive", "objective.weights.gamma")
    T = coeffs.horizon
    A, B, _, D, F = eval_coefficients(coeffs, 0.0)
    if D == 0:
        raise ConfigError("closed form needs D != 0", "coefficients.D")
    times = np.linspace(0.0, T, 2049) if times is None else np.asarray(times, dtype=float)
    beta = B / (gamma * D * D) * np.exp(-A * (T - times)) - F / D
    return AffinePolicy(times, np.zeros_like(times), beta)
