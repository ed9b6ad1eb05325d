"""YAML experiment configuration: schema validation and object construction.

A configuration has four sections: model (kernel, sigma, horizon),
experiment (kind, geometry, scale ladder, estimator settings), quadrature
(optional overrides of the deterministic rule orders) and output
(directory, tag). Validation collects every violation before raising, so a
bad file is diagnosed in one pass. from_dict/to_dict round-trip exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field as dc_field, fields as dc_fields

import numpy as np
import yaml

from .errors import CatalogError, ConfigurationError
from .fields import (KERNEL_CATALOG, ModelConfig, builtin_kernel,
                     builtin_sigma, sigma_from_kernel)
from .reconstruction import LadderSpec
from .solver import QuadratureSpec

EXPERIMENT_KINDS = ("sigma-line", "sigma-point", "k-point")
_TOP_KEYS = {"model", "experiment", "quadrature", "output", "expected"}
_MODEL_KEYS = {"kernel", "sigma", "horizon"}
_EXP_COMMON = {"kind", "x_i", "v_i", "eps_values", "inner_ratio", "orders",
               "seed", "mc_samples", "tail_orders", "tail_samples"}
_EXP_BY_KIND = {"sigma-line": {"t_m"},
                "sigma-point": {"t_m", "h"},
                "k-point": {"v_hat", "lambda", "alpha"}}
_QUAD_KEYS = {f.name for f in dc_fields(QuadratureSpec)}
_OUTPUT_KEYS = {"directory", "tag"}
_EXPECTED_KEYS = {"estimate", "rtol"}

SPHERE_MEASURE = 4.0 * np.pi


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_vec3(x):
    return (isinstance(x, (list, tuple)) and len(x) == 3
            and all(_is_num(c) for c in x))


def _check_field_section(section, out, prefix):
    if not isinstance(section, dict):
        out.append(f"{prefix} must be a mapping")
        return
    name = section.get("name")
    if not isinstance(name, str):
        out.append(f"{prefix}.name must be a string")
        return
    params = {k: v for k, v in section.items() if k != "name"}
    try:
        if prefix.endswith("sigma"):
            builtin_sigma(name, **params)
        else:
            builtin_kernel(name, **params)
    except (CatalogError, ConfigurationError, TypeError) as exc:
        out.append(f"{prefix}: {exc}")


def validate_config(data):
    """Return the full list of schema violations (empty when valid)."""
    out = []
    if not isinstance(data, dict):
        return ["configuration root must be a mapping"]
    unknown = set(data) - _TOP_KEYS
    if unknown:
        out.append(f"unknown top-level sections: {sorted(unknown)}")
    for req in ("model", "experiment"):
        if req not in data:
            out.append(f"missing required section '{req}'")

    model = data.get("model")
    horizon = None
    kernel_bound = None
    if isinstance(model, dict):
        unknown = set(model) - _MODEL_KEYS
        if unknown:
            out.append(f"unknown model keys: {sorted(unknown)}")
        if "kernel" not in model:
            out.append("model.kernel is required")
        else:
            _check_field_section(model["kernel"], out, "model.kernel")
            if not out and isinstance(model["kernel"], dict):
                try:
                    k = model["kernel"]
                    kernel_bound = builtin_kernel(
                        k["name"],
                        **{a: b for a, b in k.items() if a != "name"}).bound
                except Exception:  # noqa: BLE001 - already reported above
                    pass
        sig = model.get("sigma", "derived")
        if sig != "derived":
            _check_field_section(sig, out, "model.sigma")
        if "horizon" not in model:
            out.append("model.horizon is required")
        elif not (_is_num(model["horizon"]) and model["horizon"] > 0):
            out.append(f"model.horizon must be a positive number, "
                       f"got {model.get('horizon')!r}")
        else:
            horizon = float(model["horizon"])
    elif model is not None:
        out.append("model must be a mapping")

    exp = data.get("experiment")
    if isinstance(exp, dict):
        kind = exp.get("kind")
        if kind not in EXPERIMENT_KINDS:
            out.append(f"experiment.kind must be one of {EXPERIMENT_KINDS}, "
                       f"got {kind!r}")
            allowed = _EXP_COMMON | set().union(*_EXP_BY_KIND.values())
        else:
            allowed = _EXP_COMMON | _EXP_BY_KIND[kind]
            for req in _EXP_BY_KIND[kind]:
                if req not in exp:
                    out.append(f"experiment.{req} is required for kind {kind}")
        unknown = set(exp) - allowed
        if unknown:
            out.append(f"unknown experiment keys: {sorted(unknown)}")
        for key in ("x_i", "v_i") + (("v_hat",) if "v_hat" in exp else ()):
            if key in exp and not _is_vec3(exp[key]):
                out.append(f"experiment.{key} must be a list of 3 numbers")
            elif key == "x_i":
                if "x_i" not in exp:
                    out.append("experiment.x_i is required")
        if "v_i" not in exp:
            out.append("experiment.v_i is required")
        elif _is_vec3(exp["v_i"]) and not np.linalg.norm(exp["v_i"]) > 0:
            out.append("experiment.v_i must be nonzero")
        ev = exp.get("eps_values")
        if not (isinstance(ev, (list, tuple)) and len(ev) >= 1
                and all(_is_num(e) and e > 0 for e in ev)
                and list(ev) == sorted(ev, reverse=True)
                and len(set(ev)) == len(ev)):
            out.append("experiment.eps_values must be a strictly decreasing "
                       "list of positive numbers")
        if "t_m" in exp:
            if not (_is_num(exp["t_m"]) and exp["t_m"] > 0):
                out.append("experiment.t_m must be a positive number")
            elif horizon is not None and exp["t_m"] >= horizon:
                out.append(f"experiment.t_m = {exp['t_m']} must stay below "
                           f"the horizon {horizon}")
        if kind == "sigma-point" and "h" in exp and "t_m" in exp:
            if not (_is_num(exp["h"]) and 0 < exp["h"] < exp.get("t_m", 0)):
                out.append("experiment.h must lie in (0, t_m)")
        if "lambda" in exp and not (_is_num(exp["lambda"])
                                    and 0 < exp["lambda"] < 1):
            out.append("experiment.lambda must lie in (0, 1)")
        if "alpha" in exp and not (_is_num(exp["alpha"])
                                   and 0.75 < exp["alpha"] < 1):
            out.append("experiment.alpha must lie in (3/4, 1)")
        if kind == "k-point" and kernel_bound is not None and horizon is not None:
            product = kernel_bound * SPHERE_MEASURE * horizon
            if product >= 1.0:
                out.append(f"kernel experiments need C_K*|V|*T < 1, "
                           f"got {product:.6g}")
        for key, pred, what in (
                ("orders", lambda v: isinstance(v, int) and v >= 0,
                 "a nonnegative integer"),
                ("seed", lambda v: isinstance(v, int), "an integer"),
                ("mc_samples", lambda v: isinstance(v, int) and v >= 100,
                 "an integer >= 100"),
                ("tail_orders", lambda v: isinstance(v, int) and v >= 0,
                 "a nonnegative integer"),
                ("tail_samples", lambda v: isinstance(v, int) and v >= 100,
                 "an integer >= 100"),
                ("inner_ratio", lambda v: v is None or (_is_num(v) and v > 0),
                 "a positive number or null")):
            if key in exp and not pred(exp[key]):
                out.append(f"experiment.{key} must be {what}, "
                           f"got {exp[key]!r}")
    elif exp is not None:
        out.append("experiment must be a mapping")

    quad = data.get("quadrature", {})
    if isinstance(quad, dict):
        unknown = set(quad) - _QUAD_KEYS
        if unknown:
            out.append(f"unknown quadrature keys: {sorted(unknown)}")
        for k, v in quad.items():
            if k in _QUAD_KEYS and not (isinstance(v, int) and v >= 2):
                out.append(f"quadrature.{k} must be an integer >= 2, got {v!r}")
    else:
        out.append("quadrature must be a mapping")

    output = data.get("output", {})
    if isinstance(output, dict):
        unknown = set(output) - _OUTPUT_KEYS
        if unknown:
            out.append(f"unknown output keys: {sorted(unknown)}")
        if "directory" in output and not isinstance(output["directory"], str):
            out.append("output.directory must be a string")
        if "tag" in output and not isinstance(output["tag"], str):
            out.append("output.tag must be a string")
    else:
        out.append("output must be a mapping")

    expected = data.get("expected", {})
    if isinstance(expected, dict):
        unknown = set(expected) - _EXPECTED_KEYS
        if unknown:
            out.append(f"unknown expected keys: {sorted(unknown)}")
        if "estimate" in expected and not _is_num(expected["estimate"]):
            out.append("expected.estimate must be a number")
        if "rtol" in expected and not (_is_num(expected["rtol"])
                                       and expected["rtol"] > 0):
            out.append("expected.rtol must be a positive number")
        if "rtol" in expected and "estimate" not in expected:
            out.append("expected.rtol requires expected.estimate")
    else:
        out.append("expected must be a mapping")
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration; sections stored as plain dicts.

    The optional expected section ({estimate, rtol}) freezes a regression
    value for the bundled fixtures; it never enters the cache key.
    """

    model: dict
    experiment: dict
    quadrature: dict
    output: dict
    expected: dict = dc_field(default_factory=dict)

    @classmethod
    def from_dict(cls, data):
        violations = validate_config(data)
        if violations:
            raise ConfigurationError(
                "invalid configuration:\n- " + "\n- ".join(violations))
        return cls(model=dict(data["model"]),
                   experiment=dict(data["experiment"]),
                   quadrature=dict(data.get("quadrature", {})),
                   output=dict(data.get("output", {})),
                   expected=dict(data.get("expected", {})))

    def to_dict(self):
        out = {"model": dict(self.model), "experiment": dict(self.experiment)}
        if self.quadrature:
            out["quadrature"] = dict(self.quadrature)
        if self.output:
            out["output"] = dict(self.output)
        if self.expected:
            out["expected"] = dict(self.expected)
        return out

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_yaml(cls, text):
        return cls.from_dict(yaml.safe_load(text))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_yaml(fh.read())

    def cache_key(self):
        """Content hash of everything that affects the numbers."""
        payload = {"model": self.model, "experiment": self.experiment,
                   "quadrature": self.quadrature}
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def build_model(self) -> ModelConfig:
        k = self.model["kernel"]
        kernel = builtin_kernel(k["name"],
                                **{a: b for a, b in k.items() if a != "name"})
        sig = self.model.get("sigma", "derived")
        if sig == "derived":
            sigma = sigma_from_kernel(kernel)
        else:
            sigma = builtin_sigma(sig["name"],
                                  **{a: b for a, b in sig.items()
                                     if a != "name"})
        return ModelConfig(kernel=kernel, sigma=sigma,
                           horizon=float(self.model["horizon"]))

    def build_ladder(self) -> LadderSpec:
        e = self.experiment
        return LadderSpec(eps_values=tuple(e["eps_values"]),
                          inner_ratio=e.get("inner_ratio"),
                          orders=e.get("orders", 1),
                          seed=e.get("seed", 0),
                          mc_samples=e.get("mc_samples", 50_000),
                          tail_orders=e.get("tail_orders", 1),
                          tail_samples=e.get("tail_samples", 20_000))

    def build_quadrature(self) -> QuadratureSpec:
        return QuadratureSpec(**self.quadrature)
