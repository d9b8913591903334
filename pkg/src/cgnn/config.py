"""Experiment configuration: defaults, JSON schema validation, derived objects."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os

import jsonschema

from .activations import KINDS, ActivationSpec
from .network import CgnnConfig

__all__ = ["DEFAULT_CONFIG", "SCHEMA", "ConfigError", "load_config", "config_hash", "cgnn_config", "seed_of"]


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "wavelet": {"N": 6, "K": 10},
    "cgnn": {
        "latent_dim": 8,
        "channels": [4, 2, 1],
        "strides": [1, 1],
        "filter_length": 4,
        "support_halfwidth": 3,
        "activation": {"kind": "leaky_relu", "alpha": 0.2},
        "nonlinearity_mode": "coefficient",
        "pointwise_depth": 6,
    },
    "train": {
        "n_train": 500,
        "n_test": 100,
        "grid_size": 1024,
        "n_freq": 2,
        "M": 6,
        "epochs": 20,
        "batch": 32,
        "beta": 1e-3,
        "lr": 0.01,
        "lr_final": None,
    },
    "inverse": {
        "tau": 0.0,
        "h": 0.0005,
        "max_iter": 2000,
        "stop_tol": 1e-10,
        "signals": 10,
        "variance": 4.0,
        "taps": None,
    },
    "seeds": {"base": 0},
    "output_dir": "runs/default",
}

_int = {"type": "integer"}
_pos = {"type": "integer", "minimum": 1}
_num = {"type": "number"}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


SCHEMA = _obj(
    {
        "wavelet": _obj({"N": {"type": "integer", "minimum": 1, "maximum": 10}, "K": {"type": "integer", "minimum": 1, "maximum": 16}}),
        "cgnn": _obj(
            {
                "latent_dim": _pos,
                "channels": {"type": "array", "items": _pos, "minItems": 1},
                "strides": {"type": "array", "items": _pos},
                "filter_length": _pos,
                "support_halfwidth": {"type": "integer", "minimum": 0},
                "activation": _obj({"kind": {"enum": list(KINDS)}, "alpha": _num}, ["kind"]),
                "nonlinearity_mode": {"enum": ["coefficient", "pointwise"]},
                "pointwise_depth": _pos,
                "first_scale": _int,
            }
        ),
        "train": _obj(
            {
                "n_train": _pos,
                "n_test": _pos,
                "grid_size": _pos,
                "n_freq": {"type": "integer", "minimum": 0},
                "M": _pos,
                "epochs": _pos,
                "batch": _pos,
                "beta": {"type": "number", "minimum": 0},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "lr_final": {"type": ["number", "null"], "exclusiveMinimum": 0},
            }
        ),
        "inverse": _obj(
            {
                "tau": {"type": "number", "minimum": 0},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 0},
                "stop_tol": {"type": ["number", "null"], "minimum": 0},
                "signals": _pos,
                "variance": {"type": "number", "minimum": 0},
                "taps": {"type": ["integer", "null"], "minimum": 1},
            }
        ),
        "seeds": _obj({"base": {"type": "integer", "minimum": 0}}),
        "output_dir": {"type": "string"},
    }
)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "activation":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides: dict | None = None, env=None) -> dict:
    """Defaults, then the JSON file, then ``overrides``; CGNN_SEED replaces seeds.base.

    Unknown keys anywhere are rejected.
    """
    env = os.environ if env is None else env
    user = {}
    if path is not None:
        with open(path) as fh:
            user = json.load(fh)
    try:
        jsonschema.validate(user, SCHEMA)
        if overrides:
            jsonschema.validate(overrides, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message} at {'/'.join(map(str, exc.absolute_path)) or '<root>'}") from exc
    cfg = _merge(DEFAULT_CONFIG, user)
    cfg = _merge(cfg, overrides or {})
    if env.get("CGNN_SEED", "").strip():
        try:
            cfg["seeds"]["base"] = int(env["CGNN_SEED"])
        except ValueError as exc:
            raise ConfigError(f"CGNN_SEED must be an integer, got {env['CGNN_SEED']!r}") from exc
    jsonschema.validate(cfg, SCHEMA)
    return cfg


def config_hash(cfg: dict) -> str:
    body = {k: v for k, v in cfg.items() if k != "output_dir"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def seed_of(cfg: dict, purpose: str) -> int:
    offsets = {"data": 0, "init": 1, "train": 2, "noise": 3, "landweber": 4, "probe": 5}
    return cfg["seeds"]["base"] * 100 + offsets[purpose]


def cgnn_config(cfg: dict) -> CgnnConfig:
    c = cfg["cgnn"]
    grid, M = cfg["train"]["grid_size"], cfg["train"]["M"]
    J = int(round(math.log2(grid)))
    if 2**J != grid:
        raise ConfigError("grid_size must be a power of two")
    first = c.get("first_scale", J - M - sum(c["strides"]))
    try:
        return CgnnConfig(
            latent_dim=c["latent_dim"],
            channels=tuple(c["channels"]),
            first_scale=first,
            strides=tuple(c["strides"]),
            filter_length=c["filter_length"],
            support_halfwidth=c["support_halfwidth"],
            activation=ActivationSpec(c["activation"]["kind"], float(c["activation"].get("alpha", 0.2))),
            wavelet=cfg["wavelet"]["N"],
            nonlinearity_mode=c["nonlinearity_mode"],
            pointwise_depth=c["pointwise_depth"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
