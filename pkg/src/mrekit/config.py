"""Pipeline configuration: defaults, JSON schema, and adapters.

One JSON document drives every CLI subcommand. Files are deep-merged
over the defaults below and schema-validated before any run; all
randomness derives from the single top-level seed.
"""
from __future__ import annotations

import copy
import json

import jsonschema

from .cnet import DEFAULT_WIDTHS, TrainConfig
from .grid import GridGeom
from .synth import NoiseSpec, SamplingConfig
from .unwrap import UnwrapConfig


class ConfigError(ValueError):
    """Invalid or inconsistent pipeline configuration."""


# noise intensity presets: in_vivo trains denoising-capable models,
# simulation keeps the training data essentially clean
NOISE_PRESETS = {"in_vivo": 0.3, "simulation": 0.001}

DEFAULTS = {
    "seed": 0,
    "density": 1000.0,
    "geometry": {"dims": [128, 128], "spacing_mm": [1.5, 1.5]},
    "frequencies_hz": [60.0],
    "directions": ["z"],
    "unwrap": {
        "learning_rate": 0.005,
        "gradient_weight": 1000.0,
        "max_iterations": 4000,
        "init": "zero",
    },
    "training": {
        "steps": 12000,
        "batch_size": 500,
        "learning_rate": 0.001,
        "noise_intensity": 0.001,
        "widths": list(DEFAULT_WIDTHS),
    },
    "sampling": {
        "k_re_range": [0.35, 1.35],
        "k_im_range": [0.0, 0.28],
        "noise": {"mode": "intensity", "lo": 0.001, "hi": 0.001},
        "ndim": 2,
    },
    "experiment": {"name": "plane-wave-smoke", "params": {}},
}

_NUMBER = {"type": "number"}
_RANGE = {
    "type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2,
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "density": {"type": "number", "exclusiveMinimum": 0},
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dims": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 2, "maxItems": 3,
                },
                "spacing_mm": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 2, "maxItems": 3,
                },
            },
            "required": ["dims", "spacing_mm"],
        },
        "frequencies_hz": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0},
            "minItems": 1,
        },
        "directions": {
            "type": "array", "items": {"type": "string"}, "minItems": 1,
        },
        "unwrap": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "gradient_weight": {"type": "number", "minimum": 0},
                "max_iterations": {"type": "integer", "minimum": 1},
                "init": {"enum": ["zero", "integral"]},
            },
        },
        "training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "noise_intensity": {"type": "number", "minimum": 0},
                "widths": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 1,
                },
            },
        },
        "sampling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k_re_range": _RANGE,
                "k_im_range": _RANGE,
                "noise": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "mode": {"enum": ["intensity", "snr_db"]},
                        "lo": _NUMBER,
                        "hi": _NUMBER,
                    },
                    "required": ["mode", "lo", "hi"],
                },
                "ndim": {"enum": [2, 3]},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string"},
                "params": {"type": "object"},
            },
            "required": ["name"],
        },
    },
    "required": ["seed", "geometry"],
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from exc
    geo = cfg["geometry"]
    if len(geo["dims"]) != len(geo["spacing_mm"]):
        raise ConfigError("geometry dims and spacing_mm lengths disagree")
    sampling = cfg.get("sampling", {})
    for key in ("k_re_range", "k_im_range"):
        lo, hi = sampling.get(key, (0.0, 1.0))
        if lo > hi:
            raise ConfigError(f"sampling {key} has lo > hi")
    noise = sampling.get("noise")
    if noise and noise["lo"] > noise["hi"]:
        raise ConfigError("sampling noise has lo > hi")
    return cfg


def merge_config(overrides: dict | None = None) -> dict:
    """Defaults merged with overrides, validated."""
    return validate_config(_deep_merge(DEFAULTS, overrides or {}))


def load_config(path, overrides: dict | None = None) -> dict:
    """Read a JSON config file, merge over defaults, validate."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = _deep_merge(DEFAULTS, user)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    return validate_config(cfg)


def geometry_from(cfg: dict) -> GridGeom:
    geo = cfg["geometry"]
    return GridGeom(tuple(geo["dims"]), tuple(geo["spacing_mm"]))


def unwrap_config_from(cfg: dict) -> UnwrapConfig:
    u = cfg["unwrap"]
    return UnwrapConfig(
        learning_rate=u["learning_rate"],
        gradient_weight=u["gradient_weight"],
        max_iterations=u["max_iterations"],
        init=u["init"],
    )


def sampling_config_from(cfg: dict, omega: float) -> SamplingConfig:
    s = cfg["sampling"]
    noise = s["noise"]
    if noise["mode"] == "intensity":
        spec = NoiseSpec("intensity", noise["lo"], noise["hi"])
    else:
        spec = NoiseSpec.snr_range(noise["lo"], noise["hi"])
    return SamplingConfig(float(omega), tuple(s["k_re_range"]),
                          tuple(s["k_im_range"]), spec, s["ndim"])


def train_config_from(cfg: dict, seed: int | None = None) -> TrainConfig:
    t = cfg["training"]
    return TrainConfig(
        seed=cfg["seed"] if seed is None else seed,
        steps=t["steps"],
        batch_size=t["batch_size"],
        learning_rate=t["learning_rate"],
        widths=tuple(t["widths"]),
    )
