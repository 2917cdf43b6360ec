"""Experiment configuration: JSON in, validated config with defaults out."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass

import jsonschema
import numpy as np

from tic.dynamics import AffinePolicy, CoefficientSet, Curve
from tic.equilibrium import chebyshev_grid
from tic.errors import ConfigError
from tic.moments import MAX_ORDER
from tic.objective import KINDS, PsiSpec
from tic.verifier import DEFAULT_LADDER, TAU1, TAU2

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_CURVE = {
    "oneOf": [
        _NUM,
        {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "prefixItems": [_NUM, _NUM], "minItems": 2, "maxItems": 2},
        },
    ]
}
_WEIGHTS = {"type": "object", "additionalProperties": _NUM}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj(
    {
        "horizon": _POS,
        "coefficients": _obj({k: _CURVE for k in "ABCDF"}),
        "objective": _obj(
            {
                "kind": {"enum": list(KINDS)},
                "weights": _WEIGHTS,
                "max_moment": {"type": "integer", "minimum": 2, "maximum": MAX_ORDER},
                "weight_grid": {"type": "array", "minItems": 1, "items": _WEIGHTS},
            },
            required=("kind", "weights"),
        ),
        "grids": _obj(
            {
                "time_steps": {"type": "integer", "minimum": 1},
                "x_min": _NUM,
                "x_max": _NUM,
                "x_points": {"type": "integer", "minimum": 1},
            }
        ),
        "solver": _obj(
            {
                "rk4_step": _POS,
                "corrector_tol": _POS,
                "max_corrector": {"type": "integer", "minimum": 1},
                "affine_tol": _POS,
            }
        ),
        "policy": _obj(
            {
                "times": {"type": "array", "minItems": 2, "items": _NUM},
                "alpha": {"type": "array", "minItems": 2, "items": _NUM},
                "beta": {"type": "array", "minItems": 2, "items": _NUM},
            },
            required=("times", "alpha", "beta"),
        ),
        "moments": _obj(
            {
                "t_points": {"type": "array", "minItems": 1, "items": _NUM},
                "x_values": {"type": "array", "minItems": 1, "items": _NUM},
            }
        ),
        "verify": _obj(
            {
                "t_points": {"type": "array", "minItems": 1, "items": _NUM},
                "x_min": _NUM,
                "x_max": _NUM,
                "x_points": {"type": "integer", "minimum": 1},
                "alpha_values": {"type": "array", "minItems": 1, "items": _NUM},
                "beta_offset_min": _NUM,
                "beta_offset_max": _NUM,
                "beta_points": {"type": "integer", "minimum": 1},
                "epsilon_ladder": {"type": "array", "minItems": 3, "items": _POS},
                "tau1": _POS,
                "tau2": _POS,
            }
        ),
        "simulation": _obj(
            {
                "paths": {"type": "integer", "minimum": 2},
                "step": _POS,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "t": _NUM,
                "x": _NUM,
                "deviation": _obj({"alpha": _NUM, "beta": _NUM}, required=("beta",)),
                "epsilon": _POS,
            }
        ),
    },
    required=("horizon", "objective"),
)


def _defaults(T: float) -> dict:
    return {
        "coefficients": {k: 0.0 for k in "ABCDF"},
        "grids": {"time_steps": 199, "x_min": -2.0, "x_max": 2.0, "x_points": 9},
        "solver": {"rk4_step": T / 2048, "corrector_tol": 1e-10, "max_corrector": 8, "affine_tol": 1e-6},
        "moments": {"t_points": [0.0], "x_values": [0.0]},
        "verify": {
            "t_points": [0.0, 0.25 * T, 0.5 * T, 0.75 * T],
            "x_min": -2.0,
            "x_max": 2.0,
            "x_points": 9,
            "alpha_values": [-1.0, 0.0, 1.0],
            "beta_offset_min": -5.0,
            "beta_offset_max": 5.0,
            "beta_points": 21,
            "epsilon_ladder": [e * T for e in DEFAULT_LADDER],
            "tau1": TAU1,
            "tau2": TAU2,
        },
        "simulation": {"paths": 100000, "step": T / 4096, "seed": 0, "t": 0.0, "x": 0.0, "epsilon": 0.01 * T},
    }


def _reject_constant(name):
    raise ConfigError(f"non-finite number {name} is not allowed")


@dataclass
class ExperimentConfig:
    """Validated configuration. ``data`` holds every field with defaults
    filled in; it is what gets echoed into summary.json."""

    data: dict

    @property
    def horizon(self) -> float:
        return float(self.data["horizon"])

    @property
    def coefficients(self) -> CoefficientSet:
        c = self.data["coefficients"]
        return CoefficientSet(self.horizon, *(Curve.from_spec(c[k]) for k in "ABCDF"))

    @property
    def objective(self) -> PsiSpec:
        o = self.data["objective"]
        return PsiSpec(o["kind"], dict(o["weights"]), o.get("max_moment"))

    @property
    def policy(self) -> AffinePolicy | None:
        p = self.data.get("policy")
        if p is None:
            return None
        return AffinePolicy(np.array(p["times"]), np.array(p["alpha"]), np.array(p["beta"]))

    @property
    def time_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.data["grids"]["time_steps"] + 1)

    @property
    def solver_x_grid(self) -> np.ndarray:
        g = self.data["grids"]
        return chebyshev_grid(g["x_min"], g["x_max"], g["x_points"])

    @property
    def verify_x_grid(self) -> np.ndarray:
        v = self.data["verify"]
        return np.linspace(v["x_min"], v["x_max"], v["x_points"])

    @property
    def beta_offsets(self) -> np.ndarray:
        v = self.data["verify"]
        return np.linspace(v["beta_offset_min"], v["beta_offset_max"], v["beta_points"])

    @property
    def solver_options(self) -> dict:
        s = self.data["solver"]
        return {"tol": s["corrector_tol"], "max_corrector": s["max_corrector"], "affine_tol": s["affine_tol"]}

    @property
    def rk4_step(self) -> float:
        return float(self.data["solver"]["rk4_step"])

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2, allow_nan=False)


def _json_path(error) -> str:
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "additionalProperties":
        extra = sorted(set(error.instance) - set(error.schema.get("properties", {})))
        parts += extra[:1]
    return ".".join(parts) or "<root>"


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment description.

    Unknown keys are rejected; omitted optional blocks and fields take their
    defaults. Raises ConfigError naming the offending field.
    """
    try:
        raw = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _json_path(err))

    T = float(raw["horizon"])
    data = copy.deepcopy(raw)
    data["horizon"] = T
    for block, defaults in _defaults(T).items():
        merged = dict(defaults)
        merged.update(data.get(block, {}))
        data[block] = merged
    _check_cross_fields(data)
    cfg = ExperimentConfig(data)
    # building the objects runs their own validation
    cfg.coefficients, cfg.objective
    for weights in data["objective"].get("weight_grid", []):
        PsiSpec(data["objective"]["kind"], dict(weights), data["objective"].get("max_moment"))
    if cfg.policy is not None and not cfg.policy.covers(T):
        raise ConfigError("policy grid must span [0, horizon]", "policy.times")
    return cfg


def _check_cross_fields(d):
    T = d["horizon"]
    for block in ("grids", "verify"):
        if not d[block]["x_min"] < d[block]["x_max"] and d[block]["x_points"] > 1:
            raise ConfigError("x_min must be below x_max", f"{block}.x_min")
    p = d.get("policy")
    if p is not None and not len(p["times"]) == len(p["alpha"]) == len(p["beta"]):
        raise ConfigError("times, alpha and beta must have equal length", "policy")
    v = d["verify"]
    if v["beta_points"] > 1 and not v["beta_offset_min"] < v["beta_offset_max"]:
        raise ConfigError("beta_offset_min must be below beta_offset_max", "verify.beta_offset_min")
    eps_max = max(v["epsilon_ladder"])
    for t in v["t_points"]:
        if not (0 <= t and t + eps_max <= T * (1 + 1e-12)):
            raise ConfigError(f"anchor {t} leaves no room for the widest window", "verify.t_points")
    for t in d["moments"]["t_points"]:
        if not 0 <= t <= T:
            raise ConfigError(f"time {t} outside [0, horizon]", "moments.t_points")
    s = d["simulation"]
    if not 0 <= s["t"] < T:
        raise ConfigError("start time must lie in [0, horizon)", "simulation.t")
    if "deviation" in s and s["t"] + s["epsilon"] > T * (1 + 1e-12):
        raise ConfigError("spike window exceeds the horizon", "simulation.epsilon")
    if "deviation" in s and s["step"] > s["epsilon"]:
        raise ConfigError("step must not exceed the spike width", "simulation.step")
    if not all(math.isfinite(float(x)) for x in v["alpha_values"]):
        raise ConfigError("must be finite", "verify.alpha_values")
