"""Strict TOML experiment configuration."""
from __future__ import annotations

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

from .galerkin import SPDE_REGISTRY
from .models import REGISTRY
from .schemes import SchemeKind


class ConfigError(ValueError):
    """The configuration is malformed or violates a precondition."""


EXPERIMENTS = ("converge", "diverge", "galerkin", "smallnoise", "certify", "ito-check", "sensitivity", "model-check")

# per experiment: allowed keys and their defaults (None = derived later)
_COMMON = dict(experiment=None, model=None, master_seed=0, output_dir=None, model_params={})
_SCHEMA: dict[str, dict[str, Any]] = {
    "converge": dict(scheme="stopped_tamed_em", T=1.0, r=2.0, levels=list(range(4, 11)), paths=1000,
                     ref_offset=3, x0=None),
    "diverge": dict(schemes=["euler_maruyama", "stopped_tamed_em"], T=1.0, level=4, paths=1000,
                    blowup=1e10, x0=None),
    "galerkin": dict(T=1.0, r=2.0, N_list=[4, 8, 16, 32], M_ref=128, steps=4096, paths=200,
                     init="smooth", record_every=32),
    "smallnoise": dict(scheme="stopped_tamed_em", T=1.0, r=2.0, epsilons=[1e-1, 1e-2, 1e-3], level=10,
                       paths=500, x0=None),
    "certify": dict(T=1.0, p=2.0, eps=1.0, q=None, alpha_scale=1.0, beta_scale=1.0, fine_level=10,
                    coarse_level=6, paths=200, seeds=10, x0=None),
    "ito-check": dict(T=1.0, fine_level=10, coarse_level=4, levels=[6, 7, 8, 9, 10], paths=100, chi=0.0,
                      x0=None),
    "sensitivity": dict(scheme="stopped_tamed_em", T=1.0, r=2.0, deltas=[1e-1, 1e-2, 1e-3, 1e-4], level=10,
                        paths=200, x0=None),
    "model-check": dict(n_points=100_000, radius=10.0, p=2.0),
}


@dataclass
class ExperimentConfig:
    experiment: str
    model: str
    values: dict = field(default_factory=dict)
    model_params: dict = field(default_factory=dict)
    master_seed: int = 0
    output_dir: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    def as_dict(self) -> dict:
        out = dict(experiment=self.experiment, model=self.model, master_seed=self.master_seed)
        out.update(self.values)
        out["model_params"] = dict(sorted(self.model_params.items()))
        if self.output_dir is not None:
            out["output_dir"] = self.output_dir
        return out

    def content_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file is not valid TOML: {exc}") from None
    return parse_config(raw)


def parse_config(raw: dict) -> ExperimentConfig:
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {list(EXPERIMENTS)}, got {exp!r}")
    allowed = {**_COMMON, **_SCHEMA[exp]}
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys for experiment {exp!r}: {unknown}")
    if "model" not in raw:
        raise ConfigError("missing required key 'model'")
    model = raw["model"]
    registry = SPDE_REGISTRY if exp == "galerkin" else REGISTRY
    if model not in registry:
        raise ConfigError(f"model {model!r} is not registered for {exp!r}; known: {sorted(registry)}")
    params = raw.get("model_params", {})
    if not isinstance(params, dict):
        raise ConfigError("model_params must be a table")
    defaults = registry[model][1] if exp == "galerkin" else registry[model].defaults
    bad = sorted(set(params) - set(defaults))
    if bad:
        raise ConfigError(f"unknown model_params for {model!r}: {bad}")
    values = {k: raw.get(k, v) for k, v in _SCHEMA[exp].items()}
    seed = raw.get("master_seed", 0)
    cfg = ExperimentConfig(exp, model, values, dict(params), seed, raw.get("output_dir"))
    validate(cfg)
    return cfg


def _require(cond: bool, key: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int_list(v) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(_is_int(x) for x in v)


def _num_list(v) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(_is_num(x) for x in v)


def validate(cfg: ExperimentConfig) -> None:
    """Check every field against the preconditions of the dispatched operation."""
    v = cfg.values
    _require(_is_int(cfg.master_seed) and 0 <= cfg.master_seed < 2**64, "master_seed",
             "must be an unsigned 64-bit integer")
    if cfg.output_dir is not None:
        _require(isinstance(cfg.output_dir, str), "output_dir", "must be a string")
    for key, val in cfg.model_params.items():
        _require(_is_num(val), f"model_params.{key}", "must be numeric")
    if "paths" in v:
        _require(_is_int(v["paths"]) and v["paths"] >= 2, "paths", "must be an integer >= 2")
    if "T" in v:
        _require(_is_num(v["T"]) and v["T"] > 0, "T", "must be positive")
    if "r" in v:
        _require(_is_num(v["r"]) and v["r"] > 0, "r", "must be positive")
    if "scheme" in v:
        try:
            v["scheme"] = SchemeKind.parse(v["scheme"]).value
        except ValueError as exc:
            raise ConfigError(f"scheme: {exc}") from None
    if "schemes" in v:
        _require(isinstance(v["schemes"], list) and v["schemes"], "schemes", "must be a non-empty list")
        try:
            v["schemes"] = [SchemeKind.parse(s).value for s in v["schemes"]]
        except ValueError as exc:
            raise ConfigError(f"schemes: {exc}") from None
    for key in ("level", "fine_level", "coarse_level"):
        if key in v:
            _require(_is_int(v[key]) and 0 <= v[key] <= 20, key, "must be an integer in [0, 20]")
    if "levels" in v:
        lv = v["levels"]
        _require(_int_list(lv) and lv == sorted(set(lv)) and lv[0] >= 0 and lv[-1] <= 16, "levels",
                 "must be a strictly increasing list of integers in [0, 16]")
    if "x0" in v and v["x0"] is not None:
        _require(_num_list(v["x0"]), "x0", "must be a list of numbers")
    if "ref_offset" in v:
        _require(_is_int(v["ref_offset"]) and v["ref_offset"] >= 1, "ref_offset", "must be an integer >= 1")
    if "blowup" in v:
        _require(_is_num(v["blowup"]) and v["blowup"] > 0, "blowup", "must be positive")
    if cfg.experiment == "galerkin":
        nl = v["N_list"]
        _require(_is_int(v["M_ref"]) and v["M_ref"] >= 1, "M_ref", "must be a positive integer")
        _require(_int_list(nl) and nl == sorted(set(nl)) and nl[0] > 0 and nl[-1] <= v["M_ref"], "N_list",
                 "must be strictly increasing with 0 < N <= M_ref")
        _require(_is_int(v["steps"]) and v["steps"] >= 1, "steps", "must be a positive integer")
        _require(_is_int(v["record_every"]) and v["record_every"] >= 1 and v["steps"] % v["record_every"] == 0,
                 "record_every", "must be a positive divisor of steps")
        _require(v["init"] in ("zero", "decay", "smooth"), "init", "must be 'zero', 'decay' or 'smooth'")
    if "epsilons" in v:
        _require(_num_list(v["epsilons"]) and all(e >= 0 for e in v["epsilons"]), "epsilons",
                 "must be a list of non-negative numbers")
    if "deltas" in v:
        _require(_num_list(v["deltas"]) and all(d >= 0 for d in v["deltas"]), "deltas",
                 "must be a list of non-negative numbers")
    if cfg.experiment == "certify":
        _require(_is_num(v["p"]) and v["p"] >= 2, "p", "must be >= 2")
        _require(_is_num(v["eps"]) and v["eps"] > 0, "eps", "must be positive")
        _require(v["q"] is None or (_is_num(v["q"]) and v["q"] > 0), "q", "must be positive")
        _require(_is_num(v["alpha_scale"]) and v["alpha_scale"] > 0, "alpha_scale", "must be positive")
        _require(_is_num(v["beta_scale"]) and v["beta_scale"] > 0, "beta_scale", "must be positive")
        _require(_is_int(v["seeds"]) and v["seeds"] >= 1, "seeds", "must be a positive integer")
        _require(v["coarse_level"] <= v["fine_level"], "coarse_level", "must not exceed fine_level")
    if cfg.experiment == "ito-check":
        lv = v["levels"]
        _require(v["coarse_level"] <= lv[0] and lv[-1] <= v["fine_level"], "levels",
                 "must lie between coarse_level and fine_level")
        _require(_is_num(v["chi"]), "chi", "must be numeric")
    if cfg.experiment == "model-check":
        _require(_is_int(v["n_points"]) and v["n_points"] >= 1, "n_points", "must be a positive integer")
        _require(_is_num(v["radius"]) and v["radius"] > 0, "radius", "must be positive")
        _require(_is_num(v["p"]) and v["p"] >= 2, "p", "must be >= 2")
