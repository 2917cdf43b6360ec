import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tic import AffinePolicy, CoefficientSet, ContractError, ConfigError, SpikePolicy
from tic.dynamics import sample_central_moments, simulate_terminal
from tic.moments import (
    MomentPolynomials,
    conditional_central_moments,
    generator_matrix,
    moment_polynomials,
    propagate_transition,
    raw_to_central,
)


def test_generator_examples():
    M = generator_matrix(0, 0, 0, 1, 2)
    assert np.array_equal(M, [[0, 0, 0], [0, 0, 0], [1, 0, 0]])
    M = generator_matrix(1, 2, 0, 0, 2)
    assert np.array_equal(M, [[0, 0, 0], [2, 1, 0], [0, 4, 2]])
    with pytest.raises(ConfigError):
        generator_matrix(0, 0, 0, 0, 9)


def test_generator_oracle():
    # independent construction from the Ito formula for d(X^k)
    p, q, r, s, n = 0.3, -0.2, 0.7, 1.1, 5
    ref = np.zeros((n + 1, n + 1))
    for k in range(n + 1):
        ref[k, k] += k * p + k * (k - 1) / 2 * r * r
        if k >= 1:
            ref[k, k - 1] += k * q + k * (k - 1) * r * s
        if k >= 2:
            ref[k, k - 2] += k * (k - 1) / 2 * s * s
    assert np.allclose(generator_matrix(p, q, r, s, n), ref, rtol=0, atol=1e-15)


def test_brownian_moments(brownian, zero_policy):
    start = time.perf_counter()
    mean, c = conditional_central_moments(brownian, zero_policy, 0.0, 0.0, 4, step=1e-3)
    assert time.perf_counter() - start < 1.0
    assert abs(mean) < 1e-14
    assert np.allclose(c, [1, 0, 3], rtol=0, atol=1e-10)


def test_ou_moments(ou, zero_policy):
    mean, c = conditional_central_moments(ou, zero_policy, 0.0, 1.0, 2)
    assert abs(mean - math.exp(-1)) < 1e-8
    assert abs(c[0] - (1 - math.exp(-2)) / 2) < 1e-8


def test_identity_on_empty_interval(brownian, zero_policy):
    phi = propagate_transition(brownian, zero_policy, 0.4, 0.4, 3)
    assert np.array_equal(phi.matrix, np.eye(4))


def test_raw_to_central_examples():
    mean, c = raw_to_central([1, 2, 5, 14])
    assert mean == 2 and np.allclose(c, [1, 0])
    with pytest.raises(ContractError):
        raw_to_central([0.5, 0, 1])


def test_semigroup():
    coeffs = CoefficientSet(1.0, A=0.2, B=1.0, D=0.5, F=0.3)
    policy = AffinePolicy(np.array([0.0, 0.5, 1.0]), np.array([0.1, -0.2, 0.3]), np.array([1.0, 0.0, 2.0]))
    whole = propagate_transition(coeffs, policy, 0.0, 1.0, 6, step=1e-3)
    left = propagate_transition(coeffs, policy, 0.0, 0.37, 6, step=1e-3)
    right = propagate_transition(coeffs, policy, 0.37, 1.0, 6, step=1e-3)
    assert np.allclose(left.then(right).matrix, whole.matrix, rtol=1e-9, atol=1e-9)


def test_mean_variance_polynomials_oracle():
    # state-independent control: X_T = e^{A tau} x + const + Gaussian noise
    A, B, D, beta, tau = 0.3, 0.5, 0.4, 0.8, 1.0
    coeffs = CoefficientSet.constant(tau, A=A, B=B, D=D)
    polys = moment_polynomials(propagate_transition(coeffs, AffinePolicy.constant(tau, beta), 0, tau, 2))
    g = math.exp(A * tau)
    drift = B * beta * (g - 1) / A
    var = (D * beta) ** 2 * (g * g - 1) / (2 * A)
    assert np.allclose(polys.coefficients[1], [drift, g, 0], rtol=1e-12)
    assert np.allclose(polys.coefficients[2], [drift**2 + var, 2 * g * drift, g * g], rtol=1e-12)


def test_polynomial_derivatives():
    polys = MomentPolynomials(np.array([[1.0, 0, 0], [1, 2, 0], [0, 1, 3]]))
    assert np.allclose(polys.first(2.0), [0, 2, 13])
    assert np.allclose(polys.second([0.0, 1.0]), [[0, 0], [0, 0], [6, 6]])


_coef = st.floats(-1.0, 1.0)


@settings(max_examples=30, deadline=None)
@given(_coef, _coef, _coef, _coef, _coef, _coef, _coef, st.floats(-2, 2))
def test_moment_invariants(A, B, C, D, F, alpha, beta, x):
    coeffs = CoefficientSet.constant(1.0, A=A, B=B, C=C, D=D, F=F)
    policy = AffinePolicy.constant(1.0, beta, alpha=alpha)
    phi = propagate_transition(coeffs, policy, 0.0, 1.0, 4)
    raw = moment_polynomials(phi).values(x)
    assert raw[0] == pytest.approx(1.0, abs=1e-12)
    _, c = raw_to_central(raw)
    # central moments come from cancelling raw ones, so judge them on that scale
    scale = 1.0 + np.abs(raw).max()
    assert c[0] >= -1e-10 * scale
    assert c[2] >= c[0] ** 2 - 1e-9 * scale


@settings(max_examples=30, deadline=None)
@given(_coef, _coef, _coef, _coef, _coef, _coef, st.floats(-2, 2))
def test_gaussian_closure_for_state_independent_control(A, B, C, D, F, beta, x):
    coeffs = CoefficientSet.constant(1.0, A=A, B=B, C=C, D=D, F=F)
    mean, c = conditional_central_moments(coeffs, AffinePolicy.constant(1.0, beta), 0.0, x, 4)
    scale = (1 + abs(mean) + math.sqrt(max(c[0], 0))) ** 4
    assert abs(c[1]) < 1e-10 * scale
    assert abs(c[2] - 3 * c[0] ** 2) < 1e-10 * scale


def test_spike_policy_propagation_matches_monte_carlo():
    coeffs = CoefficientSet.constant(1.0, A=0.1, B=1.0, D=0.5, F=0.2)
    base = AffinePolicy.constant(1.0, 0.5, alpha=-0.3)
    spike = SpikePolicy(base, 1.0, 2.0, 0.25, 0.25)
    mean, c = conditional_central_moments(coeffs, spike, 0.0, 0.5, 3)
    sample = simulate_terminal(coeffs, spike, 0.0, 0.5, 50000, step=1 / 512, seed=4)
    mc = sample_central_moments(sample, 3)
    assert abs(mc.mean - mean) < 4 * mc.mean_se + 2e-3
    assert abs(mc.central[0] - c[0]) < 4 * mc.central_se[0] + 2e-3
