"""Experiment configuration: one flat YAML or JSON document per experiment.

Layout::

    seed: 20240601
    model:
      family: cross_shear          # or matrix + perturbation
      params: {eps_a: 0.5, eps_b: 0.5}
    run: {...}                     # sizes; unspecified keys take defaults
    thresholds: {...}              # every key in THRESHOLD_KEYS, all > 0
    output: {directory: out, formats: [csv, json]}

Validation errors carry the dotted path of the offending field.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass

import yaml

from . import families
from .errors import ConfigError
from .lattice import IntMatrix
from .maps import EndomorphismModel

THRESHOLD_KEYS = (
    "spectrum_tol",
    "telescope_tol",
    "degree_tol",
    "volume_rtol",
    "volume_violation_rtol",
    "stable_exponent_tol",
    "periodic_stable_tol",
    "sigma_factor",
    "conjugacy_order_min",
    "conjugacy_residual",
    "special_variance",
    "generic_variance",
    "frame_tol",
    "qi_drift",
    "exact_tol",
    "holonomy_linear_tol",
    "holonomy_T",
    "ac_slope_tol",
    "density_level",
    "oracle_tol",
)

DEFAULT_THRESHOLDS = {
    "spectrum_tol": 1e-10,
    "telescope_tol": 1e-9,
    "degree_tol": 1e-8,
    "volume_rtol": 1e-8,
    "volume_violation_rtol": 1e-6,
    "stable_exponent_tol": 1e-3,
    "periodic_stable_tol": 1e-8,
    "sigma_factor": 3.0,
    "conjugacy_order_min": 1.8,
    "conjugacy_residual": 1e-6,
    "special_variance": 1e-10,
    "generic_variance": 1e-4,
    "frame_tol": 1e-8,
    "qi_drift": 0.1,
    "exact_tol": 1e-12,
    "holonomy_linear_tol": 1e-8,
    "holonomy_T": 2.0,
    "ac_slope_tol": 2e-3,
    "density_level": 0.99,
    "oracle_tol": 1e-12,
}

RUN_DEFAULTS = {
    "orbits": 16,
    "steps": 100_000,
    "burn_in": 1000,
    "batches": 20,
    "periods": [1, 2, 3, 4],
    "grids": [32, 64, 128],
    "points": 16,
    "chains": 8,
    "seeds": [0, 1, 2, 3, 4],
    "scales": [4, 5, 6, 7, 8, 9, 10, 11, 12],
    "holonomy_scales": [4, 6, 8, 10, 12, 14],
    "holonomy_offset": 0.1,
    "leaf_length": 80.0,
    "leaf_step": 1e-3,
    "levelset_step": 1e-2,
    "holder_leaves": 16,
    "holder_length": 0.25,
    "holder_step": 2.0 ** -13,
    "holder": False,
    "bootstrap": 2000,
    "density_samples": 200_000,
    "density_bins": 8,
    "eps_a": [0.0, 0.5],
    "eps_b": [0.0, 0.5],
}

FAMILIES = {
    "linear": (families.linear, ()),
    "cross_shear": (families.cross_shear, ("eps_a", "eps_b")),
    "manufactured_conjugacy": (families.manufactured_conjugacy, ("eps",)),
    "generic_displacement": (families.generic_displacement, ("eps",)),
    "irreducible": (families.irreducible, ()),
}


@dataclass
class ExperimentConfig:
    seed: int
    model: dict
    run: dict
    thresholds: dict
    output: dict
    source: dict

    @property
    def hash(self):
        return config_hash(self.source)

    def build_model(self):
        return build_model(self.model)

    def with_overrides(self, seed=None, out=None):
        cfg = copy.deepcopy(self)
        if seed is not None:
            cfg.seed = int(seed)
            cfg.source["seed"] = int(seed)
        if out is not None:
            cfg.output["directory"] = str(out)
        return cfg


def config_hash(document):
    """sha256 of the canonical JSON form (sorted keys, no whitespace)."""
    text = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _matrix(rows, path):
    try:
        m = IntMatrix.from_rows(rows)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, f"not a square integer matrix ({exc})") from None
    return m


def build_model(block):
    """Model from a config block: a named family or an explicit matrix + perturbation."""
    if "family" in block:
        name = block["family"]
        if name not in FAMILIES:
            raise ConfigError("model.family", f"unknown family {name!r}; choose from {sorted(FAMILIES)}")
        fn, names = FAMILIES[name]
        params = dict(block.get("params", {}))
        unknown = set(params) - set(names)
        if unknown:
            raise ConfigError(f"model.params.{sorted(unknown)[0]}", f"not a parameter of {name}")
        missing = [n for n in names if n not in params]
        if missing:
            raise ConfigError(f"model.params.{missing[0]}", "missing")
        for k, v in params.items():
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"model.params.{k}", "must be a number")
        args = [float(params[n]) for n in names]
        if "matrix" in block and name != "irreducible":
            return fn(*args, A=_matrix(block["matrix"], "model.matrix"))
        return fn(*args)
    if "matrix" not in block:
        raise ConfigError("model", "needs either 'family' or 'matrix'")
    _matrix(block["matrix"], "model.matrix")
    try:
        return EndomorphismModel.from_dict(
            {"matrix": block["matrix"], "perturbation": block.get("perturbation", {"kind": "none"}),
             "name": block.get("name")}
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("model.perturbation", str(exc)) from None


def _check_positive(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
        raise ConfigError(path, f"must be a positive number, got {value!r}")


def _check_run(run):
    for key, value in run.items():
        path = f"run.{key}"
        if key not in RUN_DEFAULTS:
            raise ConfigError(path, "unknown run parameter")
        default = RUN_DEFAULTS[key]
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(path, "must be true or false")
        elif isinstance(default, list):
            if not isinstance(value, list) or not value:
                raise ConfigError(path, "must be a non-empty list")
            for i, v in enumerate(value):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{path}[{i}]", "must be a number")
                if key not in ("eps_a", "eps_b", "seeds") and not v > 0:
                    raise ConfigError(f"{path}[{i}]", "must be positive")
                if key in ("eps_a", "eps_b", "seeds") and v < 0:
                    raise ConfigError(f"{path}[{i}]", "must be non-negative")
        else:
            _check_positive(value, path)
            if isinstance(default, int) and int(value) != value:
                raise ConfigError(path, "must be an integer")


def parse_config(document):
    """Validate a parsed document and fill run defaults."""
    if not isinstance(document, dict):
        raise ConfigError("<root>", "config must be a mapping")
    allowed = {"seed", "model", "run", "thresholds", "output", "name"}
    extra = set(document) - allowed
    if extra:
        raise ConfigError(sorted(extra)[0], "unknown top-level key")
    if "seed" not in document:
        raise ConfigError("seed", "mandatory")
    seed = document["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "must be a non-negative integer")
    model = document.get("model")
    if not isinstance(model, dict):
        raise ConfigError("model", "missing or not a mapping")
    build_model(model)
    run = document.get("run", {}) or {}
    if not isinstance(run, dict):
        raise ConfigError("run", "must be a mapping")
    _check_run(run)
    thresholds = document.get("thresholds")
    if not isinstance(thresholds, dict):
        raise ConfigError("thresholds", "missing or not a mapping")
    for key in THRESHOLD_KEYS:
        if key not in thresholds:
            raise ConfigError(f"thresholds.{key}", "missing")
        _check_positive(thresholds[key], f"thresholds.{key}")
    for key in thresholds:
        if key not in THRESHOLD_KEYS:
            raise ConfigError(f"thresholds.{key}", "unknown threshold")
    if not thresholds["density_level"] < 1:
        raise ConfigError("thresholds.density_level", "must lie in (0, 1)")
    output = dict(document.get("output", {}) or {})
    if not isinstance(output.get("directory", "out"), str):
        raise ConfigError("output.directory", "must be a string")
    output.setdefault("directory", "out")
    formats = output.setdefault("formats", ["csv", "json"])
    if not isinstance(formats, list) or not set(formats) <= {"csv", "json"}:
        raise ConfigError("output.formats", "must be a list drawn from csv, json")
    full_run = {**RUN_DEFAULTS, **run}
    return ExperimentConfig(seed, dict(model), full_run, dict(thresholds), output, copy.deepcopy(document))


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a decimal point (1e-10), as JSON and YAML 1.2 do."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


def load_config(path):
    """Read a YAML (or JSON, a YAML subset) config file and validate it."""
    try:
        with open(path) as fh:
            document = yaml.load(fh, Loader=_Loader)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML/JSON: {exc}") from None
    return parse_config(document)


def default_document(model_block, seed=20240601, **run):
    """Convenience builder used by demos and tests."""
    return {"seed": seed, "model": model_block, "run": run, "thresholds": dict(DEFAULT_THRESHOLDS)}
