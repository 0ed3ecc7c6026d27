"""Experiment configuration: YAML files validated against a JSON schema.

Unknown keys are rejected.  Validation errors carry the offending field
path and, when the document came from a file, its line number.
"""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np
import yaml

from .mixture import Mixture

DEFAULTS: dict[str, Any] = {
    "init": {"M": 40, "mode": None},
    "schedule": {"h": 0.01, "n_steps": 1000, "record_stride": 1},
    "score": {"kind": "exact"},
    "diagnostics": {
        "kde_steps": [],
        "weight_recovery": True,
        "transitions": True,
        "projected_directions": [],
        "n_ref": 10000,
        "plots": True,
    },
    "checks": {},
    "master_seed": 0,
    "threads": 1,
}

TRAIN_DEFAULTS: dict[str, Any] = {
    "loss": "vanilla",
    "noise_sigma": 0.1,
    "optimizer": "adam",
    "lr": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "adam_eps": 1e-8,
    "steps": 1000,
    "epochs": None,
    "batch_size": None,
    "hidden_width": 64,
    "seed": 0,
    "n_train": 10000,
    "n_eval": 10000,
}


class ConfigError(ValueError):
    """Invalid configuration; ``where`` names the field (and line)."""

    def __init__(self, message: str, where: str = ""):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


def schema() -> dict:
    text = resources.files("earlylmc").joinpath("schema/experiment.schema.json").read_text()
    return json.loads(text)


def _line_of(node, path) -> Optional[int]:
    """1-based line of the YAML node at ``path`` (deepest existing)."""
    line = node.start_mark.line + 1 if node is not None else None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            nxt = node.value[key]
        else:
            nxt = None
        if nxt is None:
            break
        node = nxt
        line = node.start_mark.line + 1
    return line


def validate(doc: Any, source: str = "<config>", node=None) -> None:
    validator = jsonschema.Draft7Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if not errors:
        return
    err = errors[0]
    path = list(err.absolute_path)
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            path.append(extra[0])
    field = "/".join(str(p) for p in path) or "<root>"
    line = _line_of(node, path) if node is not None else None
    where = f"{source}:{line}: {field}" if line is not None else f"{source}: {field}"
    raise ConfigError(err.message, where)


def _check_semantics(cfg: dict, source: str) -> None:
    mix = cfg["mixture"]
    K = len(mix["means"])
    d = len(mix["means"][0])
    if any(len(m) != d for m in mix["means"]):
        raise ConfigError("all means need the same dimension", f"{source}: mixture/means")
    if len(mix["weights"]) != K:
        raise ConfigError(f"expected {K} weights", f"{source}: mixture/weights")
    if "covs" in mix and len(mix["covs"]) != K:
        raise ConfigError(f"expected {K} covariances", f"{source}: mixture/covs")
    kind = cfg["score"]["kind"]
    need = {"biased": "weights", "field": "field", "file": "path"}
    if kind in need and need[kind] not in cfg["score"]:
        raise ConfigError(f"score kind {kind!r} needs '{need[kind]}'", f"{source}: score")
    if kind == "biased" and len(cfg["score"]["weights"]) != K:
        raise ConfigError(f"expected {K} fake weights", f"{source}: score/weights")


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve(doc: dict, source: str = "<config>", node=None) -> dict:
    """Validate ``doc`` and fill defaults."""
    validate(doc, source, node)
    cfg = _merge(DEFAULTS, doc)
    if cfg["score"]["kind"] == "train":
        cfg["score"]["train"] = _merge(TRAIN_DEFAULTS, cfg["score"].get("train", {}))
    _check_semantics(cfg, source)
    return cfg


def load(path) -> dict:
    """Read, validate and resolve a YAML (or JSON) config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(exc), str(path)) from None
    try:
        node = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ConfigError(f"YAML parse error: {getattr(exc, 'problem', exc)}", where) from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping", str(path))
    return resolve(doc, str(path), node)


def dump(cfg: dict) -> str:
    """Canonical YAML text of a resolved config (sorted keys)."""
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def build_mixture(cfg: dict) -> Mixture:
    mix = cfg["mixture"]
    K = len(mix["means"])
    covs = mix.get("covs", [1.0] * K)
    return Mixture.gaussian([np.asarray(m, dtype=float) for m in mix["means"]], covs, mix["weights"])
