"""Experiment configuration: one JSON document, validated and canonicalized.

The canonical form has every default filled in, so two configs describing
the same experiment hash identically and bundles are reproducible byte for
byte.  ``builtin_config(name)`` returns ready-made scenario configs
("h-zero", "moving-gauss", "two-block", "product").
"""

from __future__ import annotations

import copy
import hashlib
import json

import numpy as np
from jsonschema import Draft202012Validator

from .errors import ConfigError
from . import dynamics, model

__all__ = [
    "CONFIG_SCHEMA",
    "parse_config",
    "canonical_json",
    "config_hash",
    "builtin_config",
    "BUILTIN_NAMES",
    "build_family",
    "build_proposal",
    "build_generator",
    "snapshot_grid",
]

_SCALAR = {
    "type": "object",
    "properties": {
        "offset": {"type": "number"},
        "slope": {"type": "number"},
    },
    "required": ["offset"],
    "additionalProperties": False,
}

_MODEL = {
    "type": "object",
    "properties": {
        "family": {"enum": ["moving-gauss", "tilt", "flat", "two-block", "tabulated", "product"]},
        "a": {"type": "integer"},
        "width": {"type": "integer", "minimum": 1},
        "mean": _SCALAR,
        "sigma": _SCALAR,
        "direction": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "base": {"type": ["array", "null"], "items": {"type": "number", "exclusiveMinimum": 0}},
        "n": {"type": "integer", "minimum": 1},
        "block_sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
        "shift_rate": {"type": "number"},
        "times": {"type": "array", "items": {"type": "number"}, "minItems": 2},
        "table": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "components": {"type": "array", "minItems": 1},
    },
    "required": ["family"],
    "additionalProperties": False,
}

_PROPOSAL = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["nearest-neighbor", "complete", "matrix"]},
        "matrix": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "model": _MODEL,
        "proposal": _PROPOSAL,
        "intensity": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["constant", "tabulated", "from-conditions"]},
                "value": {"type": "number", "minimum": 0},
                "times": {"type": "array", "items": {"type": "number"}},
                "values": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "headroom": {"type": "number", "minimum": 1.0},
                "nodes": {"type": "integer", "minimum": 2},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "n_particles": {"type": "integer", "minimum": 1},
        "n_replicates": {"type": "integer", "minimum": 1},
        "t0": {"type": "number", "exclusiveMinimum": 0},
        "t": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "snapshot_grid": {
            "oneOf": [
                {"type": "integer", "minimum": 2},
                {"type": "array", "items": {"type": "number"}, "minItems": 1},
            ]
        },
        "p": {"type": "number", "exclusiveMinimum": 2},
        "q": {"oneOf": [{"type": "number"}, {"const": "inf"}]},
        "delta": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "function_family": {
            "type": "object",
            "properties": {"n_random": {"type": "integer", "minimum": 0}},
            "additionalProperties": False,
        },
        "tolerances": {
            "type": "object",
            "properties": {
                "variance_rel_gap": {"type": "number", "exclusiveMinimum": 0},
                "increasing_process_rel": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "appendix": {
            "type": "object",
            "properties": {
                "sigmas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "widths": {"type": "array", "items": {"type": "integer", "minimum": 2}},
            },
            "additionalProperties": False,
        },
        "safety": {"type": "number", "minimum": 1.0},
    },
    "required": ["model", "proposal", "intensity", "n_particles", "n_replicates", "t0", "seed"],
    "additionalProperties": False,
}

_DEFAULTS = {
    "name": "experiment",
    "t": None,
    "snapshot_grid": 33,
    "p": 6.0,
    "q": 12.0,
    "delta": None,
    "function_family": {"n_random": 16},
    "tolerances": {"variance_rel_gap": 0.15, "increasing_process_rel": 0.10},
    "appendix": {"sigmas": [0.5, 2.0, 5.0], "widths": [10, 50]},
    "safety": 1.2,
}

_VALIDATOR = Draft202012Validator(CONFIG_SCHEMA)


def parse_config(text_or_dict) -> dict:
    """Validate and canonicalize a config (JSON text or dict).

    Raises ConfigError with the JSON path of the offending field.
    """
    if isinstance(text_or_dict, str):
        try:
            raw = json.loads(text_or_dict)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: line {exc.lineno}, col {exc.colno}: {exc.msg}")
    else:
        raw = copy.deepcopy(text_or_dict)
    errors = sorted(_VALIDATOR.iter_errors(raw), key=lambda e: e.json_path)
    if errors:
        msgs = "; ".join(f"{e.json_path}: {e.message}" for e in errors[:5])
        raise ConfigError(f"config schema violation: {msgs}")
    cfg = copy.deepcopy(_DEFAULTS)
    cfg.update(raw)
    for key, sub in (("function_family", _DEFAULTS["function_family"]),
                     ("tolerances", _DEFAULTS["tolerances"]),
                     ("appendix", _DEFAULTS["appendix"])):
        merged = copy.deepcopy(sub)
        merged.update(raw.get(key, {}))
        cfg[key] = merged
    if cfg["t"] is None:
        cfg["t"] = cfg["t0"]
    if not (0 < cfg["t"] <= cfg["t0"]):
        raise ConfigError("$.t: must lie in (0, t0]")
    q = cfg["q"]
    if q == "inf":
        pass
    elif not (isinstance(q, (int, float)) and q > 2):
        raise ConfigError("$.q: must exceed 2 or be 'inf'")
    _check_model(cfg["model"])
    return cfg


def _check_model(mcfg: dict, path: str = "$.model") -> None:
    fam = mcfg["family"]
    need = {
        "moving-gauss": ["a", "width", "mean", "sigma"],
        "tilt": ["direction"],
        "flat": ["n"],
        "two-block": ["block_sizes", "shift_rate"],
        "tabulated": ["times", "table"],
        "product": ["components"],
    }[fam]
    for key in need:
        if key not in mcfg:
            raise ConfigError(f"{path}: family '{fam}' requires field '{key}'")
    if fam == "product":
        for i, comp in enumerate(mcfg["components"]):
            if "model" not in comp or "proposal" not in comp:
                raise ConfigError(f"{path}.components[{i}]: needs 'model' and 'proposal'")
            _check_model(comp["model"], f"{path}.components[{i}].model")


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


# ----------------------------------------------------------------------------
# Builders
# ----------------------------------------------------------------------------

def _scalar(d: dict) -> model.ScalarSchedule:
    return model.ScalarSchedule(offset=float(d["offset"]), slope=float(d.get("slope", 0.0)))


def build_family(mcfg: dict, horizon: float) -> model.EvolvingFamily:
    fam = mcfg["family"]
    if fam == "moving-gauss":
        return model.moving_gaussian_family(
            int(mcfg["a"]), int(mcfg["width"]), _scalar(mcfg["mean"]), _scalar(mcfg["sigma"]), horizon
        )
    if fam == "tilt":
        return model.tilt_family(np.asarray(mcfg["direction"], dtype=float),
                                 base=mcfg.get("base"), horizon=horizon)
    if fam == "flat":
        return model.flat_family(int(mcfg["n"]), base=mcfg.get("base"), horizon=horizon)
    if fam == "two-block":
        return model.two_block_family(mcfg["block_sizes"], float(mcfg["shift_rate"]), horizon)
    if fam == "tabulated":
        times = np.asarray(mcfg["times"], dtype=float)
        table = np.asarray(mcfg["table"], dtype=float)
        n = table.shape[1]
        base = np.asarray(mcfg["base"], dtype=float) if mcfg.get("base") else np.full(n, 1.0 / n)
        space = model.StateSpace(labels=tuple(range(n)), embedding=tuple(range(n)))
        return model.EvolvingFamily(
            space=space, base=base, potential=model.TabulatedPotential(times=times, table=table), horizon=horizon
        )
    if fam == "product":
        raise ConfigError("product families are built via build_generator (need per-component proposals)")
    raise ConfigError(f"unknown family {fam}")


def build_proposal(pcfg: dict, family: model.EvolvingFamily) -> dynamics.ProposalSchedule:
    kind = pcfg["kind"]
    if kind == "nearest-neighbor":
        return dynamics.nearest_neighbor_proposal(family.space)
    if kind == "complete":
        return dynamics.complete_proposal(family.n)
    if kind == "matrix":
        if "matrix" not in pcfg:
            raise ConfigError("$.proposal: kind 'matrix' requires the matrix")
        return dynamics.constant_proposal(np.asarray(pcfg["matrix"], dtype=float))
    raise ConfigError(f"unknown proposal kind {kind}")


def _intensity_fn(icfg: dict):
    kind = icfg["kind"]
    if kind == "constant":
        return dynamics.constant_intensity(float(icfg.get("value", 1.0)))
    if kind == "tabulated":
        if "times" not in icfg or "values" not in icfg:
            raise ConfigError("$.intensity: tabulated intensity requires times and values")
        return dynamics.tabulated_intensity(icfg["times"], icfg["values"])
    raise ConfigError(
        "$.intensity: 'from-conditions' must be resolved to a tabulated schedule before building"
    )


def build_generator(cfg: dict) -> tuple[model.EvolvingFamily, dynamics.GeneratorSchedule]:
    """(family, generator schedule) for a canonical config whose intensity is
    already concrete (constant or tabulated)."""
    mcfg = cfg["model"]
    horizon = float(cfg["t0"])
    intensity = _intensity_fn(cfg["intensity"])
    if mcfg["family"] == "product":
        comps = []
        for comp in mcfg["components"]:
            fam_c = build_family(comp["model"], horizon)
            prop_c = build_proposal(comp["proposal"], fam_c)
            comps.append((fam_c, dynamics.metropolis(fam_c, prop_c, intensity)))
        return dynamics.product_chain(comps)
    family = build_family(mcfg, horizon)
    proposal = build_proposal(cfg["proposal"], family)
    return family, dynamics.metropolis(family, proposal, intensity)


def snapshot_grid(cfg: dict, t: float | None = None) -> np.ndarray:
    t = float(cfg["t"]) if t is None else t
    g = cfg["snapshot_grid"]
    if isinstance(g, int):
        return np.linspace(0.0, t, g)
    grid = np.asarray(g, dtype=float)
    if abs(grid[-1] - t) > 1e-12:
        raise ConfigError("$.snapshot_grid: last node must equal the report time t")
    return grid


# ----------------------------------------------------------------------------
# Builtin scenario configs
# ----------------------------------------------------------------------------

BUILTIN_NAMES = ("h-zero", "moving-gauss", "theorem-24", "two-block", "product")


def builtin_config(name: str) -> dict:
    if name == "h-zero":
        raw = {
            "name": "h-zero",
            "model": {"family": "flat", "n": 6},
            "proposal": {"kind": "complete"},
            "intensity": {"kind": "constant", "value": 1.0},
            "n_particles": 100,
            "n_replicates": 200,
            "t0": 1.0,
            "q": 12.0,
            "p": 6.0,
            "seed": 20406,
        }
    elif name == "moving-gauss":
        # drifting mean, constant width; relative change rate within the
        # admissible region so the grid oscillation stays at most 1
        raw = {
            "name": "moving-gauss",
            "model": {
                "family": "moving-gauss",
                "a": 0,
                "width": 10,
                "mean": {"offset": 4.0, "slope": 0.35},
                "sigma": {"offset": 2.0, "slope": 0.0},
            },
            "proposal": {"kind": "nearest-neighbor"},
            "intensity": {"kind": "constant", "value": 1.5},
            "n_particles": 200,
            "n_replicates": 300,
            "t0": 1.0,
            "q": 12.0,
            "p": 6.0,
            "seed": 52801,
        }
    elif name == "theorem-24":
        # slow drift on a short chain: the certified intensity floor stays
        # simulable, so the worst-case error bound is checked with its
        # hypotheses actually in force
        raw = {
            "name": "theorem-24",
            "model": {
                "family": "moving-gauss",
                "a": 0,
                "width": 5,
                "mean": {"offset": 2.0, "slope": 0.05},
                "sigma": {"offset": 2.0, "slope": 0.0},
            },
            "proposal": {"kind": "nearest-neighbor"},
            "intensity": {"kind": "from-conditions", "headroom": 1.1, "nodes": 9},
            "n_particles": 40,
            "n_replicates": 300,
            "t0": 1.0,
            "q": 12.0,
            "p": 6.0,
            "seed": 61507,
        }
    elif name == "two-block":
        raw = {
            "name": "two-block",
            "model": {"family": "two-block", "block_sizes": [2, 2], "shift_rate": 0.4},
            "proposal": {"kind": "nearest-neighbor"},
            "intensity": {"kind": "from-conditions", "headroom": 1.1, "nodes": 9},
            "n_particles": 60,
            "n_replicates": 250,
            "t0": 1.0,
            "q": 12.0,
            "p": 6.0,
            "seed": 77003,
        }
    elif name == "product":
        comp = {
            "model": {
                "family": "moving-gauss",
                "a": 0,
                "width": 4,
                "mean": {"offset": 1.5, "slope": 0.2},
                "sigma": {"offset": 1.5, "slope": 0.0},
            },
            "proposal": {"kind": "nearest-neighbor"},
        }
        raw = {
            "name": "product",
            "model": {"family": "product", "components": [comp, comp, comp]},
            "proposal": {"kind": "complete"},  # unused for product, schema requires it
            "intensity": {"kind": "constant", "value": 1.0},
            "n_particles": 100,
            "n_replicates": 300,
            "t0": 1.0,
            "q": 12.0,
            "p": 6.0,
            "seed": 91101,
        }
    else:
        raise ConfigError(f"unknown builtin config '{name}' (choose from {BUILTIN_NAMES})")
    return parse_config(raw)
