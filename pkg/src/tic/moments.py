"""Exact raw-moment propagation for the linear SDE under affine feedback.

With u = alpha x + beta the state solves dX = (p X + q) dt + (r X + s) dW,
where p = A + B alpha, q = B beta + C, r = D alpha, s = D beta + F. The raw
moments m_k = E[X^k] then satisfy the closed triangular system

    m_k' = k p m_k + k q m_{k-1} + k(k-1)/2 (r^2 m_k + 2 r s m_{k-1} + s^2 m_{k-2})

so the conditional moments Y_k(t, x) = E[X_T^k | X_t = x] are polynomials in
x whose coefficients are the rows of the transition matrix from t to T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import comb

import numpy as np

from tic.dynamics import CoefficientSet
from tic.errors import ConfigError, ContractError, DomainError, NumericalError

MAX_ORDER = 8
DEFAULT_STEPS_PER_HORIZON = 2048


def reduced_coefficients(coeffs: CoefficientSet, piece, t):
    """``(p, q, r, s)`` of the closed-loop SDE at ``t`` (vectorised)."""
    A, B, C, D, F = coeffs.values(t)
    alpha, beta = piece.rates(t)
    return A + B * alpha, B * beta + C, D * alpha, D * beta + F


def _check_order(n):
    if not 1 <= n <= MAX_ORDER:
        raise ConfigError(f"moment order must be in [1, {MAX_ORDER}]", "max_moment")


def generator_matrix(p, q, r, s, n: int) -> np.ndarray:
    """Generator of the raw-moment hierarchy, ``m' = M m``.

    Scalars give an ``(n+1, n+1)`` matrix; arrays of length L give a stack
    of shape ``(L, n+1, n+1)``.
    """
    _check_order(n)
    p, q, r, s = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (p, q, r, s)))
    M = np.zeros(p.shape + (n + 1, n + 1))
    for k in range(1, n + 1):
        half = 0.5 * k * (k - 1)
        M[..., k, k] = k * p + half * r * r
        M[..., k, k - 1] = k * q + 2 * half * r * s
        if k >= 2:
            M[..., k, k - 2] = half * s * s
    return M


def _rk4_step_matrices(M0, Mh, M1, h):
    """One classical RK4 step of the linear system written as a matrix."""
    eye = np.eye(M0.shape[-1])
    k1 = M0
    k2 = Mh @ (eye + 0.5 * h * k1)
    k3 = Mh @ (eye + 0.5 * h * k2)
    k4 = M1 @ (eye + h * k3)
    return eye + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass(frozen=True)
class MomentTransition:
    """``m(t_b) = matrix @ m(t_a)`` for raw-moment column vectors."""

    t_a: float
    t_b: float
    matrix: np.ndarray

    @property
    def order(self) -> int:
        return self.matrix.shape[0] - 1

    def then(self, later: "MomentTransition") -> "MomentTransition":
        """Compose with a transition starting where this one ends."""
        return MomentTransition(self.t_a, later.t_b, later.matrix @ self.matrix)

    def apply(self, m):
        return self.matrix @ np.asarray(m, dtype=float)


def _segments(coeffs, policy, t_a, t_b):
    cuts = np.union1d(coeffs.breakpoints(), policy.breakpoints())
    cuts = cuts[(cuts > t_a) & (cuts < t_b)]
    edges = np.concatenate(([t_a], cuts, [t_b]))
    return zip(edges[:-1], edges[1:])


def propagate_transition(
    coeffs: CoefficientSet,
    policy,
    t_a: float,
    t_b: float,
    n: int,
    step: float | None = None,
) -> MomentTransition:
    """Integrate ``Phi' = M(tau) Phi`` from the identity at ``t_a`` to ``t_b``.

    Integration is split at every coefficient and policy breakpoint (for a
    spike policy that includes both window edges) and each piece gets
    ``ceil(length / step)`` equal RK4 steps.
    """
    _check_order(n)
    T = coeffs.horizon
    if not (-1e-12 <= t_a <= t_b <= T + 1e-12):
        raise DomainError(f"need 0 <= t_a <= t_b <= {T}, got [{t_a}, {t_b}]", "t")
    step = T / DEFAULT_STEPS_PER_HORIZON if step is None else step
    if not step > 0:
        raise ConfigError("must be positive", "step")
    phi = np.eye(n + 1)
    if t_b > t_a:
        for lo, hi in _segments(coeffs, policy, t_a, t_b):
            k = max(1, math.ceil((hi - lo) / step - 1e-9))
            h = (hi - lo) / k
            grid = lo + h * np.arange(2 * k + 1) / 2.0
            grid[-1] = hi
            M = generator_matrix(*reduced_coefficients(coeffs, policy.segment(lo, hi), grid), n)
            steps = _rk4_step_matrices(M[0:-1:2], M[1::2], M[2::2], h)
            for S in steps:
                phi = S @ phi
    if not np.all(np.isfinite(phi)):
        raise NumericalError(f"moment transition on [{t_a}, {t_b}] is not finite")
    return MomentTransition(float(t_a), float(t_b), phi)


def raw_to_central(m):
    """Split raw moments ``(1, m_1, ..., m_n)`` into the mean and central
    moments ``C_2..C_n`` (array of length n-1, ``C[k-2]`` is order k).

    Works column-wise when ``m`` has shape ``(n+1, npts)``.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0] - 1
    if n < 1:
        raise ContractError("need at least the first moment")
    if not np.allclose(m[0], 1.0, rtol=0, atol=1e-9):
        raise ContractError("m_0 must equal 1")
    mean = m[1]
    shift = -mean
    central = np.zeros((max(n - 1, 0),) + m.shape[1:])
    for k in range(2, n + 1):
        central[k - 2] = sum(comb(k, j) * m[j] * shift ** (k - j) for j in range(k + 1))
    return mean, central


@dataclass(frozen=True)
class MomentPolynomials:
    """Row k of ``coefficients`` holds Y_k(t_a, x) = sum_j c[k, j] x^j."""

    coefficients: np.ndarray

    @property
    def order(self) -> int:
        return self.coefficients.shape[0] - 1

    def derivative_coefficients(self, order: int = 1) -> np.ndarray:
        c = self.coefficients
        for _ in range(order):
            c = c[:, 1:] * np.arange(1, c.shape[1])
        return c

    def _evaluate(self, c, x):
        x = np.asarray(x, dtype=float)
        powers = x[..., None] ** np.arange(c.shape[1])
        return np.moveaxis(powers @ c.T, -1, 0)

    def values(self, x):
        return self._evaluate(self.coefficients, x)

    def first(self, x):
        return self._evaluate(self.derivative_coefficients(1), x)

    def second(self, x):
        if self.order < 2:
            return np.zeros((self.order + 1,) + np.shape(x))
        return self._evaluate(self.derivative_coefficients(2), x)


def moment_polynomials(transition: MomentTransition) -> MomentPolynomials:
    return MomentPolynomials(np.array(transition.matrix, copy=True))


def conditional_central_moments(
    coeffs: CoefficientSet,
    policy,
    t: float,
    x,
    n: int,
    t_end: float | None = None,
    step: float | None = None,
):
    """Mean and central moments ``C_2..C_n`` of X_T given X_t = x."""
    T = coeffs.horizon if t_end is None else t_end
    phi = propagate_transition(coeffs, policy, t, T, n, step)
    return raw_to_central(moment_polynomials(phi).values(x))
