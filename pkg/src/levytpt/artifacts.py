"""File artifacts with hash-chained manifests.

Every pipeline stage writes its outputs plus one manifest holding the
SHA-256 of each file it wrote, the hash of the effective config, the seed,
and the hashes of the artifacts it consumed.  Nothing here records clocks
or hostnames: rerunning a stage with the same config and seed must
reproduce every byte, manifest included.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
from typing import Optional

import numpy as np

from .errors import ConfigError, DependencyError
from .fields import ScalarField1D


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import numpy
    import scipy
    try:
        from importlib.metadata import version
        pkg = version("levytpt")
    except Exception:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": numpy.__version__,
            "scipy": scipy.__version__, "levytpt": pkg}


def field_to_csv(field: ScalarField1D, path, meta: Optional[dict] = None) -> None:
    """Write `x,value` rows at 17 significant digits, plus a sidecar
    metadata file when meta is given."""
    with open(path, "w") as fh:
        fh.write("x,value\n")
        for xi, vi in zip(field.x, field.values):
            fh.write(f"{xi:.17g},{vi:.17g}\n")
    if meta is not None:
        write_meta(path, meta)


def field_from_csv(path, name: str = "", edge: str = "clamp") -> ScalarField1D:
    try:
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except FileNotFoundError:
        raise DependencyError(f"missing field artifact {path}")
    except ValueError as exc:
        raise ConfigError(f"malformed field file {path}: {exc}")
    if raw.shape[1] != 2:
        raise ConfigError(f"field file {path} must have columns x,value")
    return ScalarField1D(raw[:, 0], raw[:, 1], edge=edge,
                         name=name or os.path.basename(str(path)))


def meta_path(path) -> str:
    return str(path) + ".meta.json"


def write_meta(path, meta: dict) -> None:
    payload = dict(meta)
    payload["file_sha256"] = sha256_file(path)
    with open(meta_path(path), "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_meta(path) -> dict:
    mp = meta_path(path)
    if not os.path.exists(mp):
        raise DependencyError(f"missing metadata sidecar {mp}")
    with open(mp) as fh:
        return json.load(fh)


def require_artifact(outdir, filename: str, purpose: str) -> str:
    """Path of a required input artifact; a missing file names itself and
    what needed it."""
    p = os.path.join(outdir, filename)
    if not os.path.exists(p):
        raise DependencyError(f"{purpose} requires {filename}; "
                              f"not found in {outdir}")
    return p


def check_config_hashes(outdir, filenames, expected: str) -> None:
    """Refuse to combine artifacts written under different configs."""
    for fn in filenames:
        meta = read_meta(os.path.join(outdir, fn))
        got = meta.get("config_sha256", "")
        if got != expected:
            raise DependencyError(
                f"config hash mismatch: {fn} was written under "
                f"{got[:12]}..., current config is {expected[:12]}...; "
                "regenerate the artifact or rerun with its config")


def write_manifest(outdir, stage: str, config_hash: str, seed,
                   outputs, inputs: Optional[dict] = None,
                   extra: Optional[dict] = None) -> str:
    """One manifest per stage run: hashes of everything written and read."""
    man = {
        "stage": stage,
        "config_sha256": config_hash,
        "seed": seed,
        "versions": versions(),
        "outputs": {fn: sha256_file(os.path.join(outdir, fn)) for fn in outputs},
        "inputs": inputs or {},
    }
    if extra:
        man.update(extra)
    path = os.path.join(outdir, f"manifest_{stage}.json")
    with open(path, "w") as fh:
        json.dump(man, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def input_hashes(outdir, filenames) -> dict:
    return {fn: sha256_file(os.path.join(outdir, fn)) for fn in filenames}
