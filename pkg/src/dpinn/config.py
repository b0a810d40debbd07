"""Strict JSON experiment configurations with per-experiment defaults."""

from __future__ import annotations

import copy
import difflib
import inspect
import json
from pathlib import Path

EXPERIMENTS = ("coil-eikonal", "heatsink", "poisson-sweep", "bunny-deeponet", "regression-study", "eigen-only")
ARMS = ("delta-pinn", "delta-nophysics", "pinn")


class ConfigError(ValueError):
    pass


def _train(**overrides):
    base = {
        "n_modes": 50,
        "hidden": [100],
        "iterations": 10_000,
        "data_batch": 10,
        "pde_batch": 10,
        "boundary_batch": 10,
        "lr": 1e-3,
        "decay_rate": None,
        "decay_steps": 2000,
        "data_weight": 1.0,
        "pde_weight": 1.0,
        "boundary_weight": 1.0,
        "normalize_output": True,
        "scale_inputs": False,
    }
    base.update(overrides)
    return base


DEFAULTS = {
    "coil-eikonal": {
        "mesh": {"generator": "coil"},
        "arms": list(ARMS),
        "n_data": 40,
        "train": _train(),
    },
    "heatsink": {
        "mesh": {"generator": "heatsink", "element_size": 0.5},
        "arms": list(ARMS),
        "n_data": 361,
        "robin_coeff": 0.1,
        "train": _train(hidden=[100, 100, 100], iterations=50_000, data_batch=30, pde_batch=30),
    },
    "poisson-sweep": {
        "width": 0.5,
        "n_modes": [9, 25, 49, 100, 225, 400],
        "element_sizes": [0.2, 0.1, 0.066, 0.05, 0.033, 0.02],
        "bases": ["analytic", "numeric"],
        "pinn": True,
        "pinn_element_size": 0.066,
        "train": _train(hidden=[100, 100, 100], iterations=50_000, data_batch=30, pde_batch=30),
    },
    "bunny-deeponet": {
        "mesh": {"generator": "sphere", "n_vertices": 1000},
        "distance": "great-circle",
        "n_pairs": 5000,
        "n_test": 1000,
        "n_sources": 5,
        "n_targets": 300,
        "path_tolerance": 0.05,
        "net": {
            "n_modes": 50,
            "hidden": [100, 100, 100, 100],
            "latent": 100,
            "iterations": 8000,
            "batch": 100,
            "lr": 1e-3,
            "decay_rate": 0.9,
            "decay_steps": 400,
            "data_weight": 1.0,
            "pde_weight": 1.0,
        },
    },
    "regression-study": {
        "mesh": {"generator": "sphere", "n_vertices": 2500, "bumpy": True},
        "gp_modes": 1000,
        "nu": 1.5,
        "noise": 1e-4,
        "n_kappas": 8,
        "train_sizes": [50, 100, 500, 1000],
        "nn_modes": [9, 25, 49, 100, 225, 400],
        "repeats": 5,
        "train": _train(hidden=[100], iterations=5000, data_batch=32),
    },
    "eigen-only": {
        "mesh": {"generator": "coil"},
        "n_modes": 50,
    },
}

# keys whose value may be null in a user config
_NULLABLE = {"decay_rate"}


def _generators():
    from . import mesh

    return {
        "coil": mesh.generate_coil,
        "heatsink": mesh.generate_heatsink,
        "square": mesh.generate_square,
        "sphere": mesh.generate_sphere,
    }


_HEATSINK_KEYS = ("base_height", "fin_widths", "fin_heights", "gaps")


def _is_abbreviation(short: str, long: str) -> bool:
    it = iter(long)
    return bool(short) and short[0] == long[:1] and all(c in it for c in short)


def _suggest(key, valid) -> str:
    close = difflib.get_close_matches(key, list(valid), n=1)
    if not close:
        # abbreviated keys such as ``lr`` for ``learningrate``
        close = [v for v in valid if _is_abbreviation(v.replace("_", ""), key.replace("_", "").lower())][:1]
    return f"; did you mean {close[0]!r}?" if close else ""


def _check_type(where: str, default, value):
    if value is None:
        if default is None or where.rsplit(".", 1)[-1] in _NULLABLE:
            return
        raise ConfigError(f"{where} may not be null")
    if default is None:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where} must be a number or null")
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            ok = value.is_integer()
    elif isinstance(default, list):
        ok = isinstance(value, list)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, dict):
        ok = isinstance(value, dict)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where} has type {type(value).__name__}, expected {type(default).__name__}")


def _merge(where: str, defaults: dict, user: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {where}{key!r}{_suggest(key, defaults)}")
        _check_type(f"{where}{key}", defaults[key], value)
        if isinstance(defaults[key], dict) and key != "mesh":
            out[key] = _merge(f"{where}{key}.", defaults[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _check_mesh(mesh: dict, base: Path | None) -> dict:
    if "path" in mesh:
        extra = set(mesh) - {"path", "format"}
        if extra:
            raise ConfigError(f"unknown mesh keys {sorted(extra)} next to 'path'")
        p = Path(mesh["path"])
        if not p.is_absolute() and base is not None:
            p = base / p
        if not p.is_file():
            raise ConfigError(f"mesh file not found: {p}")
        return {**mesh, "path": str(p)}
    gens = _generators()
    name = mesh.get("generator")
    if name not in gens:
        raise ConfigError(f"mesh.generator must be one of {sorted(gens)}, got {name!r}")
    valid = set(inspect.signature(gens[name]).parameters) - {"spec", "radial"}
    if name == "heatsink":
        valid |= set(_HEATSINK_KEYS)
    if name == "sphere":
        valid |= {"bumpy"}
    for key in mesh:
        if key != "generator" and key not in valid:
            raise ConfigError(f"unknown key mesh.{key!r} for generator {name!r}{_suggest(key, valid)}")
    return dict(mesh)


def _check_values(exp: str, cfg: dict) -> None:
    if "arms" in cfg:
        bad = [a for a in cfg["arms"] if a not in ARMS]
        if bad or not cfg["arms"]:
            raise ConfigError(f"arms must be a nonempty subset of {list(ARMS)}, got {cfg['arms']}")
    if "train" in cfg:
        t = cfg["train"]
        for key in ("n_modes", "iterations", "data_batch", "pde_batch", "boundary_batch"):
            if t[key] <= 0:
                raise ConfigError(f"train.{key} must be positive")
        if not t["hidden"] or any((not isinstance(h, int)) or h <= 0 for h in t["hidden"]):
            raise ConfigError("train.hidden must list positive layer widths")
    if exp == "poisson-sweep":
        bad = [b for b in cfg["bases"] if b not in ("analytic", "numeric")]
        if bad:
            raise ConfigError(f"unknown bases {bad}")
        for n in cfg["n_modes"]:
            if "analytic" in cfg["bases"] and int(round(n**0.5)) ** 2 != n:
                raise ConfigError(f"analytic bases need square mode counts, got {n}")
    if exp == "bunny-deeponet" and cfg["distance"] not in ("great-circle", "fast-marching"):
        raise ConfigError("distance must be 'great-circle' or 'fast-marching'")
    if exp == "coil-eikonal" and cfg["n_data"] <= 0:
        raise ConfigError("n_data must be positive")


def normalize_config(raw: dict, experiment: str | None = None, base: Path | None = None) -> dict:
    """Validate a user config and fill defaults; raises :class:`ConfigError`."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    exp = raw.pop("experiment", experiment)
    if experiment is not None and exp != experiment:
        raise ConfigError(f"config is for {exp!r}, command is {experiment!r}")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {list(EXPERIMENTS)}, got {exp!r}{_suggest(str(exp), EXPERIMENTS)}")
    seed = raw.pop("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    cfg = _merge("", DEFAULTS[exp], raw)
    if "mesh" in cfg:
        user_mesh = raw.get("mesh")
        cfg["mesh"] = _check_mesh(user_mesh if user_mesh is not None else DEFAULTS[exp]["mesh"], base)
    _check_values(exp, cfg)
    return {"experiment": exp, "seed": seed, **cfg}


def validate_config(path, experiment: str | None = None) -> dict:
    """Read, validate and normalize a JSON config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    return normalize_config(raw, experiment, path.parent)
