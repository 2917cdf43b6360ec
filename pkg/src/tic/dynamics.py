"""Controlled linear SDE, affine feedback policies and an Euler-Maruyama
path simulator.

The state follows

    dX = (A X + B u + C) dt + (D u + F) dW

with scalar time curves A..F and a feedback control u(t, x) = alpha(t) x + beta(t).
The simulator is not used by any of the exact computations; it exists as an
independent Monte Carlo check of them.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from tic.errors import ConfigError, DomainError

#: paths per RNG substream; path k always draws from lane k // LANE_WIDTH
LANE_WIDTH = 4096
_STEP_CHUNK = 256
_TIME_EPS = 1e-12


@dataclass(frozen=True)
class Curve:
    """Piecewise-linear time curve with constant extrapolation at both ends."""

    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.times) == 0 or len(self.times) != len(self.values):
            raise ConfigError("curve needs matching, non-empty times and values")
        if not all(math.isfinite(v) for v in self.times + self.values):
            raise ConfigError("curve entries must be finite")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ConfigError("breakpoint times must be strictly increasing")

    @classmethod
    def constant(cls, value: float) -> "Curve":
        return cls((0.0,), (float(value),))

    @classmethod
    def from_spec(cls, spec) -> "Curve":
        """Build from a number or a list of ``(t, value)`` pairs."""
        if isinstance(spec, Curve):
            return spec
        if isinstance(spec, (int, float, np.floating, np.integer)):
            return cls.constant(float(spec))
        try:
            pairs = [(float(t), float(v)) for t, v in spec]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cannot read curve from {spec!r}") from exc
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @property
    def is_constant(self) -> bool:
        return len(set(self.values)) == 1

    def __call__(self, t):
        if len(self.times) == 1:
            return self.values[0] if np.ndim(t) == 0 else np.full(np.shape(t), self.values[0])
        return np.interp(t, self.times, self.values)

    def to_spec(self):
        if len(self.times) == 1:
            return self.values[0]
        return [[t, v] for t, v in zip(self.times, self.values)]


@dataclass(frozen=True)
class CoefficientSet:
    horizon: float
    A: Curve = field(default_factory=lambda: Curve.constant(0.0))
    B: Curve = field(default_factory=lambda: Curve.constant(0.0))
    C: Curve = field(default_factory=lambda: Curve.constant(0.0))
    D: Curve = field(default_factory=lambda: Curve.constant(0.0))
    F: Curve = field(default_factory=lambda: Curve.constant(0.0))

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ConfigError("must be a positive finite time", "horizon")
        for name in "ABCDF":
            curve = Curve.from_spec(getattr(self, name))
            object.__setattr__(self, name, curve)
            if len(curve.times) > 1 and (curve.times[0] < 0 or curve.times[-1] > self.horizon):
                raise ConfigError("breakpoints must lie in [0, horizon]", f"coefficients.{name}")

    @classmethod
    def constant(cls, horizon=1.0, A=0.0, B=0.0, C=0.0, D=0.0, F=0.0) -> "CoefficientSet":
        return cls(horizon, *(Curve.from_spec(v) for v in (A, B, C, D, F)))

    @property
    def is_constant(self) -> bool:
        return all(getattr(self, n).is_constant for n in "ABCDF")

    def breakpoints(self) -> np.ndarray:
        pts = set()
        for name in "ABCDF":
            curve = getattr(self, name)
            if len(curve.times) > 1:
                pts.update(curve.times)
        return np.array(sorted(pts))

    def values(self, t):
        """Unchecked evaluation, vectorised over ``t``."""
        return tuple(getattr(self, n)(t) for n in "ABCDF")


def eval_coefficients(coeffs: CoefficientSet, t: float):
    """Return ``(A, B, C, D, F)`` at time ``t``."""
    if not (-_TIME_EPS <= t <= coeffs.horizon + _TIME_EPS):
        raise DomainError(f"t={t} outside [0, {coeffs.horizon}]", "t")
    return tuple(float(v) for v in coeffs.values(t))


@dataclass(frozen=True)
class AffinePolicy:
    """Feedback map u(t, x) = alpha(t) x + beta(t), linear between grid nodes."""

    times: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        alpha = np.broadcast_to(np.asarray(self.alpha, dtype=float), times.shape).copy()
        beta = np.broadcast_to(np.asarray(self.beta, dtype=float), times.shape).copy()
        if times.ndim != 1 or times.size == 0:
            raise ConfigError("policy grid must be a non-empty 1-D array", "policy.times")
        if np.any(np.diff(times) <= 0):
            raise ConfigError("policy grid must be strictly increasing", "policy.times")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
            raise ConfigError("policy entries must be finite", "policy")
        for arr in (times, alpha, beta):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def constant(cls, horizon: float, beta: float, alpha: float = 0.0) -> "AffinePolicy":
        return cls(np.array([0.0, horizon]), np.full(2, alpha), np.full(2, beta))

    def covers(self, horizon: float) -> bool:
        return self.times[0] <= _TIME_EPS and self.times[-1] >= horizon - _TIME_EPS

    def rates(self, t):
        if self.times.size == 1:
            return self.alpha[0] + 0 * np.asarray(t, float), self.beta[0] + 0 * np.asarray(t, float)
        return np.interp(t, self.times, self.alpha), np.interp(t, self.times, self.beta)

    def __call__(self, t, x):
        a, b = self.rates(t)
        return a * x + b

    def breakpoints(self) -> np.ndarray:
        return self.times

    def segment(self, lo, hi) -> "AffinePolicy":
        return self


@dataclass(frozen=True)
class _ConstantMap:
    alpha: float
    beta: float

    def rates(self, t):
        z = np.zeros(np.shape(t))
        return self.alpha + z, self.beta + z


@dataclass(frozen=True)
class SpikePolicy:
    """Base policy with the affine map ``(alpha_v, beta_v)`` substituted on
    the half-open window ``[start, start + width)``."""

    base: AffinePolicy
    alpha_v: float
    beta_v: float
    start: float
    width: float

    def __post_init__(self):
        if not (self.width >= 0 and math.isfinite(self.width)):
            raise ConfigError("spike width must be non-negative", "width")
        if self.start < -_TIME_EPS or (self.width > 0 and self.start + self.width > self.base.times[-1] + _TIME_EPS):
            raise ConfigError("spike window must lie inside the policy horizon", "start")

    @property
    def end(self) -> float:
        return self.start + self.width

    def in_window(self, t):
        return (np.asarray(t) >= self.start) & (np.asarray(t) < self.end)

    def rates(self, t):
        a, b = self.base.rates(t)
        inside = self.in_window(t)
        return np.where(inside, self.alpha_v, a), np.where(inside, self.beta_v, b)

    def __call__(self, t, x):
        a, b = self.rates(t)
        return a * x + b

    def breakpoints(self) -> np.ndarray:
        if self.width == 0:
            return self.base.breakpoints()
        return np.union1d(self.base.breakpoints(), [self.start, self.end])

    def segment(self, lo, hi):
        """Continuous piece governing ``[lo, hi]``; segments never straddle
        a window edge because both edges are breakpoints."""
        mid = 0.5 * (lo + hi)
        if self.width > 0 and self.start <= mid < self.end:
            return _ConstantMap(self.alpha_v, self.beta_v)
        return self.base


def policy_drift_diffusion(coeffs: CoefficientSet, t: float, x: float, u: float):
    """Drift and diffusion of the state at ``(t, x)`` under control value ``u``."""
    A, B, C, D, F = eval_coefficients(coeffs, t)
    return A * x + B * u + C, D * u + F


@dataclass
class PathSample:
    seed: int
    paths: int
    step: float
    terminal: np.ndarray
    t0: float
    x0: float
    t_end: float

    def __post_init__(self):
        if self.paths < 1 or self.step <= 0:
            raise ConfigError("a path sample needs paths >= 1 and step > 0")


def _time_nodes(t0, t_end, step, policy, extra_nodes=()):
    count = max(1, math.ceil((t_end - t0) / step - 1e-9))
    nodes = np.linspace(t0, t_end, count + 1)
    edges = list(extra_nodes)
    if isinstance(policy, SpikePolicy) and policy.width > 0:
        edges += [policy.start, policy.end]
    edges = [e for e in edges if t0 < e < t_end]
    return np.union1d(nodes, edges) if edges else nodes


def simulate_terminal(
    coeffs: CoefficientSet,
    policy,
    t0: float,
    x0: float,
    paths: int,
    step: float | None = None,
    seed: int = 0,
    t_end: float | None = None,
    threads: int = 1,
    extra_nodes: Sequence[float] = (),
) -> PathSample:
    """Euler-Maruyama sample of X at ``t_end`` (default: the horizon) given
    ``X_{t0} = x0``.

    Gaussian increments for path ``k`` come from a Philox substream keyed by
    ``(seed, k // LANE_WIDTH)``, so the output does not depend on ``threads``.
    Spike window edges are inserted into the time grid so the window is
    resolved exactly; ``extra_nodes`` forces further grid times, which lets
    two runs share one grid (and hence one set of increments).
    """
    T = coeffs.horizon if t_end is None else t_end
    step = coeffs.horizon / 4096 if step is None else step
    if not step > 0:
        raise ConfigError("must be positive", "simulation.step")
    if int(paths) < 1:
        raise ConfigError("must be at least 1", "simulation.paths")
    if not (0 <= int(seed) < 2**64):
        raise ConfigError("must be a 64-bit unsigned integer", "simulation.seed")
    if not (0 <= t0 <= T <= coeffs.horizon + _TIME_EPS):
        raise DomainError(f"start time {t0} outside [0, {T}]", "t")
    if isinstance(policy, SpikePolicy) and 0 < policy.width < step - _TIME_EPS:
        raise ConfigError("step must not exceed the spike width", "simulation.step")
    paths, seed = int(paths), int(seed)

    nodes = _time_nodes(t0, T, step, policy, extra_nodes)
    left, dt = nodes[:-1], np.diff(nodes)
    A, B, C, D, F = coeffs.values(left)
    alpha, beta = policy.rates(left)
    p, q = A + B * alpha, B * beta + C
    r, s = D * alpha, D * beta + F
    sqdt = np.sqrt(dt)

    def run_lane(lane):
        gen = np.random.Generator(np.random.Philox(key=[seed, lane]))
        x = np.full(LANE_WIDTH, float(x0))
        for lo in range(0, dt.size, _STEP_CHUNK):
            z = gen.standard_normal((min(_STEP_CHUNK, dt.size - lo), LANE_WIDTH))
            for j, zj in enumerate(z, start=lo):
                x += (p[j] * x + q[j]) * dt[j] + (r[j] * x + s[j]) * sqdt[j] * zj
        return x

    lanes = range(math.ceil(paths / LANE_WIDTH))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(run_lane, lanes))
    else:
        blocks = [run_lane(lane) for lane in lanes]
    terminal = np.concatenate(blocks)[:paths]
    return PathSample(seed, paths, float(step), terminal, float(t0), float(x0), float(T))


@dataclass
class SampleMoments:
    """Sample mean and central moments, index-aligned: ``central[k - 2]`` is
    the k-th central moment."""

    mean: float
    mean_se: float
    central: np.ndarray
    central_se: np.ndarray
    count: int


def sample_central_moments(sample: PathSample | Sequence[float], n: int) -> SampleMoments:
    """Central moments about the sample mean with delta-method standard errors.

    For the k-th central moment the asymptotic variance is
    (mu_2k - mu_k^2 - 2k mu_{k-1} mu_{k+1} + k^2 mu_2 mu_{k-1}^2) / N.
    """
    if n < 2:
        raise ConfigError("moment order must be at least 2", "n")
    values = np.asarray(sample.terminal if isinstance(sample, PathSample) else sample, dtype=float)
    N = values.size
    if N < 2:
        raise ConfigError("need at least two samples", "paths")
    mean = float(values.mean())
    dev = values - mean
    mu = np.ones(2 * n + 1)
    power = np.ones_like(dev)
    for k in range(1, 2 * n + 1):
        power = power * dev
        mu[k] = power.mean()
    mu[1] = 0.0
    central = mu[2 : n + 1].copy()
    var = np.empty(n - 1)
    for k in range(2, n + 1):
        var[k - 2] = mu[2 * k] - mu[k] ** 2 - 2 * k * mu[k - 1] * mu[k + 1] + k * k * mu[2] * mu[k - 1] ** 2
    se = np.sqrt(np.maximum(var, 0.0) / N)
    return SampleMoments(mean, math.sqrt(mu[2] / N), central, se, N)
