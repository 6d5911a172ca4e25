"""Run configuration: one TOML file drives every pipeline stage.

Sections: [model] (family, coefficients, measure), [regions] (intervals a
and b), [numerics] (dt, T, grid window and size, quadrature, seed,
tolerance), [output] (directory).  Command-line overrides are applied
before hashing, so the manifest hash always reflects the effective values.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

try:
    import tomllib as _toml
except ModuleNotFoundError:   # python < 3.11
    import tomli as _toml

from .errors import ConfigError
from .models import LevyModel, Region, build_model
from .solvers import SolverConfig

_NUMERIC_DEFAULTS = {
    "dt": 1e-3,
    "T": 1e4,
    "lo": -3.0,
    "hi": 3.0,
    "n": 1000,
    "n_quad": 64,
    "n_theta": 16,
    "seed": 0,
    "tolerance": 1e-6,
    "x0": None,          # simulate start; default: left region midpoint
    "t_cap": 400.0,      # per-replica cap for conditioned path sampling
    "n_tpp": 2000,
    "q_level": 0.5,
    "threads": 1,
}


@dataclasses.dataclass
class RunConfig:
    model: dict
    regions: dict
    numerics: dict
    output: dict
    path: str = ""

    def build_model(self) -> LevyModel:
        return build_model(self.model)

    def region_pair(self) -> tuple:
        return (_interval(self.regions, "a"), _interval(self.regions, "b"))

    def solver_config(self, refine: int = 1) -> SolverConfig:
        """Solver settings; refine > 1 shrinks dx only, leaving the mark and
        line quadrature fixed so successive differences measure grid error."""
        nm = self.numerics
        n = int(nm["n"])
        return SolverConfig(lo=nm["lo"], hi=nm["hi"],
                            n=(n - 1) * max(1, int(refine)) + 1,
                            n_quad=int(nm["n_quad"]), n_theta=int(nm["n_theta"]))

    def hash(self) -> str:
        blob = json.dumps(
            {"model": self.model, "regions": self.regions,
             "numerics": self.numerics},
            sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def _interval(regions: dict, key: str) -> Region:
    if key not in regions:
        raise ConfigError(f"missing config key regions.{key}")
    v = regions[key]
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"regions.{key} must be a two-element interval [lo, hi]")
    return Region.interval(float(v[0]), float(v[1]), label=key.upper())


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = _toml.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except _toml.TOMLDecodeError as exc:
        # the parser message carries line and column
        raise ConfigError(f"config parse error in {path}: {exc}")
    return _validate(raw, str(path))


def _validate(raw: dict, path: str) -> RunConfig:
    model = dict(raw.get("model", {}))
    if "family" not in model:
        raise ConfigError("missing config key model.family")
    regions = dict(raw.get("regions", {}))
    for key in ("a", "b"):
        _interval(regions, key)
    numerics = dict(_NUMERIC_DEFAULTS)
    given = raw.get("numerics", {})
    unknown = set(given) - set(_NUMERIC_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown numerics keys: {', '.join(sorted(unknown))}")
    numerics.update(given)
    if numerics["dt"] <= 0 or numerics["T"] <= 0:
        raise ConfigError("numerics.dt and numerics.T must be positive")
    output = dict(raw.get("output", {}))
    output.setdefault("directory", "out")
    return RunConfig(model=model, regions=regions, numerics=numerics,
                     output=output, path=path)


def apply_overrides(cfg: RunConfig, **kv) -> RunConfig:
    """New config with non-None numerics overrides applied (seed, dt, T, ...)."""
    nm = dict(cfg.numerics)
    for key, val in kv.items():
        if val is None:
            continue
        if key not in _NUMERIC_DEFAULTS:
            raise ConfigError(f"unknown override {key}")
        nm[key] = val
    return dataclasses.replace(cfg, numerics=nm)
