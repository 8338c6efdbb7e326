"""Run configuration: JSON schema, validation, canonical hashing, defaults."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import jsonschema

from .errors import ConfigError
from .model import Backend, PeriodicModel

_MODE_LIST = {
    "type": "array",
    "items": {
        "type": "object",
        "properties": {
            "k": {"type": "array", "items": {"type": "integer"},
                  "minItems": 2, "maxItems": 2},
            "re": {"type": "number"},
            "im": {"type": "number"},
        },
        "required": ["k", "re"],
        "additionalProperties": False,
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "model": {
            "type": "object",
            "properties": {
                "cosine_mu": {"type": "number"},
                "potential_modes": _MODE_LIST,
                "background_field_modes": _MODE_LIST,
                "backend": {
                    "type": "object",
                    "properties": {
                        "kind": {"enum": ["grid", "planewave"]},
                        "size": {"type": "integer", "minimum": 2},
                    },
                    "required": ["kind", "size"],
                    "additionalProperties": False,
                },
                "m_cells": {"type": "integer", "minimum": 4},
                "n_bands": {"type": ["integer", "null"], "minimum": 1},
                "energy_shift": {
                    "anyOf": [{"type": "number"},
                              {"enum": ["positive", "centered"]}]
                },
                "resolution_guard": {"type": "boolean"},
            },
            "required": ["backend", "m_cells"],
            "additionalProperties": False,
        },
        "family": {
            "type": "object",
            "properties": {
                "k0": {"type": "integer", "minimum": 1},
                "n": {"type": "integer", "minimum": 0},
                "delta_fraction": {"type": "number", "exclusiveMinimum": 0,
                                   "maximum": 0.25},
            },
            "required": ["k0", "n"],
            "additionalProperties": False,
        },
        "frame": {
            "type": "object",
            "properties": {
                "n_frame": {"type": ["integer", "null"], "minimum": 1},
                "trials_seed": {"type": "integer"},
                "window_radius": {"type": "integer", "minimum": 1},
                "hopping_radius": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "field": {
            "type": "object",
            "properties": {
                "epsilons": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "constant_b": {"type": "number"},
                "fluctuation_c": {"type": "number", "minimum": 0, "maximum": 1},
                "fluctuation_modes": _MODE_LIST,
            },
            "additionalProperties": False,
        },
        "run": {
            "type": "object",
            "properties": {
                "seed": {"type": "integer"},
                "workers": {"type": "integer", "minimum": 1},
                "mask_radius": {"type": "integer", "minimum": 1},
                "interior_radius": {"type": "integer", "minimum": 1},
                "cache_dir": {"type": ["string", "null"]},
                "out_dir": {"type": ["string", "null"]},
                "times": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "butterfly_fluxes": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
    },
    "required": ["model", "family"],
    "additionalProperties": False,
}

DEFAULTS = {
    "frame": {"n_frame": None, "trials_seed": 0, "window_radius": 6,
              "hopping_radius": 3},
    "field": {"epsilons": [0.0, 0.02, 0.04, 0.08], "constant_b": 1.0,
              "fluctuation_c": 0.0, "fluctuation_modes": []},
    "family": {"delta_fraction": 0.125},
    "run": {"seed": 0, "workers": 1, "mask_radius": 4, "interior_radius": 6,
            "cache_dir": None, "out_dir": None,
            "times": [0.0, 1.0, 2.0, 4.0, 7.0, 10.0], "butterfly_fluxes": 32},
    "model": {"n_bands": None, "energy_shift": "positive",
              "potential_modes": [], "background_field_modes": [],
              "resolution_guard": True},
}


def _mode_map(entries):
    return {tuple(e["k"]): complex(e["re"], e.get("im", 0.0)) for e in entries}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with defaults filled in."""

    raw: str   # canonical JSON

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid config: {exc.message} at "
                              f"{'/'.join(str(p) for p in exc.absolute_path)}") from exc
        merged = {}
        for section, defaults in DEFAULTS.items():
            merged[section] = dict(defaults)
            merged[section].update(data.get(section, {}))
        for section in data:
            if section not in merged:
                merged[section] = data[section]
        cfg = RunConfig(canonical_json(merged))
        cfg.check_consistency()
        return cfg

    @staticmethod
    def from_file(path) -> "RunConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return RunConfig.from_dict(data)

    def data(self) -> dict:
        return json.loads(self.raw)

    def __getitem__(self, section: str) -> dict:
        return self.data()[section]

    def config_hash(self) -> str:
        return hashlib.sha256(self.raw.encode()).hexdigest()[:16]

    def model(self) -> PeriodicModel:
        m = self["model"]
        potential = _mode_map(m["potential_modes"])
        if "cosine_mu" in m:
            mu = float(m["cosine_mu"])
            for k in [(1, 0), (-1, 0), (0, 1), (0, -1)]:
                potential[k] = potential.get(k, 0.0) + mu
        shift = m["energy_shift"]
        return PeriodicModel.make(
            potential,
            _mode_map(m["background_field_modes"]),
            Backend(m["backend"]["kind"], m["backend"]["size"]),
            shift if isinstance(shift, (int, float)) else 0.0,
        )

    @property
    def shift_policy(self):
        return self["model"]["energy_shift"]

    @property
    def m_cells(self) -> int:
        return int(self["model"]["m_cells"])

    def n_bands(self) -> int:
        m = self["model"]
        if m.get("n_bands"):
            return int(m["n_bands"])
        fam = self["family"]
        return int(fam["k0"]) + int(fam["n"]) + 2

    def check_consistency(self):
        d = self.data()
        fam = d["family"]
        mdl = d["model"]
        frm = d["frame"]
        backend = Backend(mdl["backend"]["kind"], mdl["backend"]["size"])
        if fam["k0"] + fam["n"] + 1 > backend.fiber_dim:
            raise ConfigError(
                f"family bands {fam['k0']}..{fam['k0'] + fam['n']} need band "
                f"{fam['k0'] + fam['n'] + 1} but the fiber dimension is only "
                f"{backend.fiber_dim}"
            )
        if mdl.get("n_bands") and mdl["n_bands"] < fam["k0"] + fam["n"] + 1:
            raise ConfigError("model.n_bands too small for the requested family")
        M = mdl["m_cells"]
        if M % 2 != 0:
            raise ConfigError("m_cells must be even")
        if M < 2 * frm["window_radius"] + 4:
            raise ConfigError(
                f"window radius {frm['window_radius']} violates the periodization "
                f"margin M >= 2L+4 (M={M})"
            )
        if M < 2 * frm["hopping_radius"] + 4:
            raise ConfigError("hopping radius too large for the supercell")
        if frm["n_frame"] is not None and frm["n_frame"] < fam["n"] + 1:
            raise ConfigError("n_frame must be at least N+1")
        if d["run"]["mask_radius"] >= M // 2 or d["run"]["interior_radius"] >= M // 2:
            raise ConfigError("mask/interior radius must stay inside the supercell")
