"""Moment-preference objectives J = Y_1 + psi(t, C_2, ..., C_n).

psi is linear in the central moments for every supported kind, so its
partial derivatives are the weights themselves. Mean-variance uses
psi = -(gamma/2) C_2 and MVSK uses the utility-Taylor convention
psi = -(g2/2) C_2 + (g3/6) C_3 - (g4/24) C_4.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, isfinite

import numpy as np

from tic.errors import ConfigError
from tic.moments import MAX_ORDER, moment_polynomials, propagate_transition, raw_to_central

KINDS = ("mean-variance", "mvsk", "polynomial")


@dataclass(frozen=True)
class PsiSpec:
    kind: str
    weights: dict = field(default_factory=dict)
    max_moment: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}", "objective.kind")
        for key, value in self.weights.items():
            if not isinstance(value, (int, float)) or not isfinite(value):
                raise ConfigError("weight must be a finite number", f"objective.weights.{key}")
        w = dict(self.weights)
        if self.kind == "mean-variance":
            _require(w, {"gamma"})
            if not w["gamma"] > 0:
                raise ConfigError("must be positive", "objective.weights.gamma")
            coeffs = {2: -0.5 * w["gamma"]}
        elif self.kind == "mvsk":
            _require(w, {"gamma2", "gamma3", "gamma4"})
            coeffs = {2: -w["gamma2"] / 2, 3: w["gamma3"] / 6, 4: -w["gamma4"] / 24}
        else:
            coeffs = {}
            for key, value in w.items():
                try:
                    k = int(key[1:]) if key.startswith("c") else -1
                except ValueError:
                    k = -1
                if not 2 <= k <= MAX_ORDER:
                    raise ConfigError(f"unknown key {key!r} (expected c2..c{MAX_ORDER})", f"objective.weights.{key}")
                coeffs[k] = float(value)
        needed = max(coeffs, default=2)
        n = needed if self.max_moment is None else int(self.max_moment)
        if not needed <= n <= MAX_ORDER:
            raise ConfigError(f"must be in [{needed}, {MAX_ORDER}] for these weights", "objective.max_moment")
        partials = np.zeros(n + 1)
        for k, c in coeffs.items():
            partials[k] = c
        partials.setflags(write=False)
        object.__setattr__(self, "max_moment", n)
        object.__setattr__(self, "_partials", partials)

    @classmethod
    def mean_variance(cls, gamma: float) -> "PsiSpec":
        return cls("mean-variance", {"gamma": gamma})

    @classmethod
    def mvsk(cls, gamma2: float, gamma3: float, gamma4: float) -> "PsiSpec":
        return cls("mvsk", {"gamma2": gamma2, "gamma3": gamma3, "gamma4": gamma4})

    @classmethod
    def polynomial(cls, coefficients: dict[int, float], max_moment: int | None = None) -> "PsiSpec":
        return cls("polynomial", {f"c{k}": float(v) for k, v in coefficients.items()}, max_moment)

    @property
    def n(self) -> int:
        return self.max_moment

    @property
    def partials(self) -> np.ndarray:
        """``partials[k]`` is d psi / d C_k (zero for k < 2)."""
        return self._partials


def _require(weights, names):
    unknown = sorted(set(weights) - names)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", f"objective.weights.{unknown[0]}")
    missing = sorted(names - set(weights))
    if missing:
        raise ConfigError("missing weight", f"objective.weights.{missing[0]}")


def psi_eval(spec: PsiSpec, t: float, central) -> float:
    """psi at central moments ``central = (C_2, ..., C_n)``. ``t`` is unused
    by the built-in kinds."""
    central = np.asarray(central, dtype=float)
    if central.shape[0] < spec.n - 1:
        raise ConfigError(f"need central moments up to order {spec.n}", "central")
    value = np.tensordot(spec.partials[2:], central[: spec.n - 1], axes=1)
    return float(value) if np.ndim(value) == 0 else value


def objective_from_raw(spec: PsiSpec, t: float, raw):
    mean, central = raw_to_central(raw)
    return mean + psi_eval(spec, t, central)


def evaluate_J(coeffs, policy, t: float, x, spec: PsiSpec, step: float | None = None):
    """J(t, x) under ``policy`` (affine or spike) by exact moment propagation."""
    phi = propagate_transition(coeffs, policy, t, coeffs.horizon, spec.n, step)
    return objective_from_raw(spec, t, moment_polynomials(phi).values(x))


def adjoint_weights(spec: PsiSpec, y1, central) -> np.ndarray:
    """Gradient of W(Y) = Y_1 + psi(C(Y)) in raw-moment coordinates.

    Returns ``w`` with ``w[j] = dW/dY_j`` for j = 1..n (``w[0] = 0``); the
    inputs may carry a trailing point axis.
    """
    n = spec.n
    y1 = np.asarray(y1, dtype=float)
    central = np.asarray(central, dtype=float)
    psi = spec.partials

    def C(k):
        if k == 1:
            return np.zeros_like(y1)
        return central[k - 2]

    w = np.zeros((n + 1,) + y1.shape)
    w[1] = 1.0
    for k in range(2, n + 1):
        if psi[k] == 0:
            continue
        # dC_k/dY_1 = k [(-Y_1)^(k-1) - C_{k-1}]
        w[1] = w[1] + psi[k] * k * ((-y1) ** (k - 1) - C(k - 1))
        for j in range(2, k + 1):
            w[j] = w[j] + psi[k] * comb(k, j) * (-y1) ** (k - j)
    return w
