"""Experiment configuration files (TOML) and their validation."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..exact import ExactBudget

EXPERIMENTS = (
    "identity_check",
    "moments",
    "localization_scan",
    "ball_cover",
    "ou_variance",
    "temperature_equivalence",
    "atom_decay",
    "turn_census",
)

DEFAULT_DELTAS = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5]


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    model: dict
    betas: list
    deltas: list
    replicas: int
    seed: int
    output: str
    options: dict = field(default_factory=dict)
    budget: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "model": copy.deepcopy(self.model),
            "betas": list(self.betas),
            "deltas": list(self.deltas),
            "replicas": self.replicas,
            "seed": self.seed,
            "output": self.output,
            "options": copy.deepcopy(self.options),
            "budget": copy.deepcopy(self.budget),
        }

    @property
    def config_hash(self) -> str:
        """Hash of every field that influences results (``output`` excluded)."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def exact_budget(self) -> ExactBudget:
        return ExactBudget(**self.budget)


def _number(value, path, lo=None, integer=False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if integer:
        ok = ok and isinstance(value, int)
    if not ok:
        raise ConfigError(path, f"expected {'an integer' if integer else 'a number'}, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(path, f"must be >= {lo}, got {value!r}")
    return value


def _grid(raw, path, lo=0.0, hi=None):
    if not isinstance(raw, list) or not raw:
        raise ConfigError(path, "must be a non-empty list")
    out = []
    for i, v in enumerate(raw):
        _number(v, f"{path}[{i}]", lo)
        if hi is not None and v > hi:
            raise ConfigError(f"{path}[{i}]", f"must be <= {hi}, got {v!r}")
        out.append(float(v))
    return out


def validate(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a table")
    known = {"experiment", "model", "betas", "deltas", "replicas", "seed", "output", "options", "budget"}
    for key in raw:
        if key not in known:
            raise ConfigError(key, "unknown field")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}; got {exp!r}")
    if "seed" not in raw:
        raise ConfigError("seed", "required (no wall-clock seeding)")
    seed = _number(raw["seed"], "seed", 0, integer=True)
    replicas = _number(raw.get("replicas", 1), "replicas", 1, integer=True)
    model = raw.get("model", {})
    if exp not in ("atom_decay", "turn_census"):
        if not isinstance(model, dict) or "kind" not in model:
            raise ConfigError("model.kind", "required")
        if model["kind"] not in ("rem", "pspin", "polymer"):
            raise ConfigError("model.kind", f"must be rem, pspin or polymer; got {model['kind']!r}")
        _number(model.get("n"), "model.n", 1, integer=True)
        for key in model:
            if key not in ("kind", "n", "params"):
                raise ConfigError(f"model.{key}", "unknown field")
        if not isinstance(model.get("params", {}), dict):
            raise ConfigError("model.params", "must be a table")
    betas = _grid(raw.get("betas", [1.0]), "betas")
    deltas = _grid(raw.get("deltas", DEFAULT_DELTAS), "deltas", 0.0, 1.0)
    options = raw.get("options", {})
    if not isinstance(options, dict):
        raise ConfigError("options", "must be a table")
    budget = raw.get("budget", {})
    if not isinstance(budget, dict):
        raise ConfigError("budget", "must be a table")
    allowed = ExactBudget.__dataclass_fields__
    for key, v in budget.items():
        if key not in allowed:
            raise ConfigError(f"budget.{key}", f"unknown budget field (known: {', '.join(allowed)})")
        _number(v, f"budget.{key}", 1, integer=True)
    output = raw.get("output", f"results/{exp}")
    if not isinstance(output, str) or not output:
        raise ConfigError("output", "must be a non-empty path string")
    _validate_options(exp, options)
    return ExperimentConfig(exp, copy.deepcopy(model), betas, deltas, replicas, seed, output, copy.deepcopy(options), dict(budget))


def _validate_options(exp: str, opts: dict) -> None:
    if exp == "ou_variance":
        _grid(opts.get("T", [2.0, 4.0, 8.0]), "options.T", 0.0)
    if exp == "temperature_equivalence":
        _number(opts.get("k", 1), "options.k", 0, integer=True)
    if exp == "ball_cover":
        for i, k in enumerate(opts.get("k", [1, 2, 5])):
            _number(k, f"options.k[{i}]", 1, integer=True)
    if exp in ("atom_decay", "turn_census"):
        for i, n in enumerate(opts.get("n_list", [6, 10, 14, 18])):
            _number(n, f"options.n_list[{i}]", 1, integer=True)
    if exp == "atom_decay":
        d = opts.get("d", 1)
        if d not in (1, 2, 3):
            raise ConfigError("options.d", f"must be 1, 2 or 3; got {d!r}")
        from ..atomicity import check_env_dist

        try:
            check_env_dist(opts.get("env_dist", "gaussian"))
        except ValueError as exc:
            raise ConfigError("options.env_dist", str(exc)) from None
    if exp == "turn_census":
        for i, d in enumerate(opts.get("d_list", [1, 2])):
            if d not in (1, 2, 3):
                raise ConfigError(f"options.d_list[{i}]", f"must be 1, 2 or 3; got {d!r}")


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    """Read and validate a TOML config; ``overrides`` (CLI flags) win over file values."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"not valid TOML: {exc}") from None
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    return validate(raw)
