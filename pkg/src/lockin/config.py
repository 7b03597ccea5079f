"""Run configuration read from a YAML file.

Schema (version 1)::

    schema_version: 1
    model:
      preset: version-I          # or version-II
      params: {}                 # InverterParams overrides
      plugin: null               # "package.module:factory" returning a CascadeModel
      plugin_args: {}
    gauge: {margin: 0.5, eps_margin: 0.1}
    family: {V_seed: null, V_step_min: null, V_max: null, cycle_tol: 1.0e-7,
             band_margin: 0.05, max_ratio: 1.25}
    growth: {vcc_levels: 40, vcc_lo: 1.0e-3, vcc_hi: 1.0e4, safety_factor: 1.02}
    sim: {N: 500, seed: 0, horizon: null, inset: 0.01, audit_N: 100}
    output: out
"""

from __future__ import annotations

import copy
import importlib
from dataclasses import dataclass, field

import yaml

from .exceptions import ModelInvalid
from .model import CascadeModel, InverterParams, default_inverter_model

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "model": {"preset": "version-I", "params": {}, "plugin": None, "plugin_args": {}},
    "gauge": {"margin": 0.5, "eps_margin": 0.1},
    "family": {"V_seed": None, "V_step_min": None, "V_max": None, "cycle_tol": 1e-7,
               "band_margin": 0.05, "max_ratio": 1.25},
    "growth": {"vcc_levels": 40, "vcc_lo": 1e-3, "vcc_hi": 1e4, "safety_factor": 1.02},
    "sim": {"N": 500, "seed": 0, "horizon": None, "inset": 0.01, "audit_N": 100},
    "output": "out",
}

_POSITIVE = {
    "gauge": ("margin", "eps_margin"),
    "family": ("V_seed", "V_step_min", "V_max", "cycle_tol", "band_margin", "max_ratio"),
    "growth": ("vcc_levels", "vcc_lo", "vcc_hi", "safety_factor"),
    "sim": ("horizon", "inset"),
}


class ConfigError(ValueError):
    pass


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in base:
            raise ConfigError(f"unknown key {path}{k}")
        if isinstance(base[k], dict) and k not in ("params", "plugin_args"):
            if not isinstance(v, dict):
                raise ConfigError(f"{path}{k} must be a mapping")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    """Validated run configuration; sections are plain dictionaries."""

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.data = _merge(DEFAULTS, self.data)
        self.validate()

    def __getitem__(self, key):
        return self.data[key]

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        return cls(raw)

    def dump(self, path=None):
        text = yaml.safe_dump(self.data, sort_keys=False)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def validate(self):
        if self.data["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.data['schema_version']!r}")
        for sec, keys in _POSITIVE.items():
            for k in keys:
                v = self.data[sec][k]
                if v is not None and not (isinstance(v, (int, float)) and v > 0):
                    raise ConfigError(f"{sec}.{k} must be positive, got {v!r}")
        if not 0 < self.data["gauge"]["margin"] < 1:
            raise ConfigError("gauge.margin must lie in (0, 1)")
        if not 0 < self.data["sim"]["inset"] < 1:
            raise ConfigError("sim.inset must lie in (0, 1)")
        if not isinstance(self.data["sim"]["N"], int) or self.data["sim"]["N"] < 0:
            raise ConfigError("sim.N must be a non-negative integer")
        m = self.data["model"]
        if m["plugin"] is None:
            try:
                InverterParams.preset(m["preset"])
            except ModelInvalid as exc:
                raise ConfigError(str(exc)) from None

    def with_overrides(self, seed=None, preset=None):
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["sim"]["seed"] = int(seed)
        if preset is not None:
            data["model"]["preset"] = preset
            data["model"]["plugin"] = None
        return RunConfig(data)

    @property
    def version(self):
        m = self.data["model"]
        return m["plugin"] if m["plugin"] else m["preset"]

    def build_model(self):
        """Instantiate the configured model (may raise model errors)."""
        m = self.data["model"]
        if m["plugin"]:
            mod, _, attr = m["plugin"].partition(":")
            factory = getattr(importlib.import_module(mod), attr)
            model = factory(**m["plugin_args"])
            if not isinstance(model, CascadeModel):
                raise ModelInvalid(f"plugin {m['plugin']} did not return a CascadeModel")
            return model
        base = InverterParams.preset(m["preset"])
        params = dict(m["params"])
        if "i_dq_ref" in params:
            params["i_dq_ref"] = tuple(params["i_dq_ref"])
        p = InverterParams(**{**base.__dict__, **params})
        return default_inverter_model(p)

    def estimator_params(self):
        return {**self.data["gauge"], **self.data["family"], **self.data["growth"]}
