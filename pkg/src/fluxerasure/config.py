"""YAML run configuration.

A run configuration has the sections ``circuit``, ``rates``, ``readout``,
``experiment`` and ``fit`` (required) plus optional sections for the
individual subcommands.  Frequencies and rates must carry a unit tag (see
:mod:`fluxerasure.units`).  Unknown keys are rejected, and every error
names the offending path, e.g. ``readout.kappa``.

:func:`load_config` returns a :class:`RunConfig` whose ``resolved`` dict
is a canonical, fully expanded form of the document (all tagged values in
``rad_per_s``); feeding ``resolved`` back into :func:`parse_config`
reproduces the same run.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .dynamics import RampSpec, RateMatrix
from .readout import ReadoutConfig, empirical_confusion, eol_confusion, solve_bare_frequency
from .spectrum import CircuitParams
from .units import UnitError, format_tagged, parse_tagged


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot (``5e-06``), as YAML 1.2 does."""


_Loader.yaml_implicit_resolvers = {k: list(v) for k, v in yaml.SafeLoader.yaml_implicit_resolvers.items()}
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# kinds: freq (unit-tagged), float, int, bool, str, floats (list), ints (list),
# grid (start/stop/num, plain floats), freqgrid (start/stop/num, tagged)
REQUIRED = object()

SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "circuit": {
        "e_c": ("freq", REQUIRED),
        "e_j": ("freq", REQUIRED),
        "e_l": ("freq", REQUIRED),
        "phi_ext": ("float", 0.0),
        "basis_size": ("int", 120),
        "n_levels": ("int", 6),
    },
    "rates": {
        "g10": ("freq", REQUIRED),
        "g12": ("freq", REQUIRED),
        "g20": ("freq", REQUIRED),
        "g21": ("freq", REQUIRED),
    },
    "readout": {
        "kappa": ("freq", REQUIRED),
        "dressed_0": ("freq", REQUIRED),
        "chi01": ("freq", REQUIRED),
        "chi02": ("freq", REQUIRED),
        "drive_frequency": ("freq", REQUIRED),
        "omega_bare": ("freq", None),
        "gamma_m_target": ("freq", None),
        "efficiency": ("float", REQUIRED),
        "photon_number": ("float", REQUIRED),
        "t_meas": ("float", REQUIRED),
    },
    "experiment": {
        "false_negative": ("float", REQUIRED),
        "false_positive": ("float", REQUIRED),
        "eol_fidelity": ("float", REQUIRED),
        "qnd_error_per_check": ("float", 0.0),
        "t_ec": ("float", REQUIRED),
        "m": ("int", REQUIRED),
        "init_state": ("int", 2),
        "shots": ("int", 100_000),
        "flag_policy": ("int", 1),
        "t_tot_max": ("float", 500e-6),
        "curve_points": ("int", 16),
        "tec_grid": ("floats", [1e-6, 5e-6, 20e-6, 60e-6]),
        "raster_shots": ("int", 200),
    },
    "fit": {
        "parameterization": ("str", "log"),
        "starts": ("int", 5),
        "seed": ("int", 0),
    },
    "sweep": {
        "flux": ("grid", {"start": -0.05, "stop": 0.55, "num": 61}),
    },
    "drive": {
        "duration": ("float", 480e-9),
        "amplitudes": ("freqgrid", {"start": "0.5e9 rad_per_s", "stop": "3.0e9 rad_per_s", "num": 11}),
        "detunings": ("freqgrid", {"start": "-3e6 two_pi_hz", "stop": "3e6 two_pi_hz", "num": 13}),
        "repeats": ("int", 1),
        "refine": ("int", 16),
        "n_levels": ("int", 6),
    },
    "decay": {
        "times": ("grid", {"start": 0.0, "stop": 500e-6, "num": 51}),
        "shots": ("int", 100_000),
        "trajectories": ("int", 0),
    },
    "lz": {
        "gap": ("freq", None),
        "detuning_span": ("freq", "8.6e6 two_pi_hz"),
        "ramp_duration": ("float", 10e-9),
        "span_factor": ("float", 1.0),
    },
    "ramsey": {
        "t1_logical": ("float", 193e-6),
        "t2_logical": ("float", 70.4e-6),
        "detuning": ("freq", "0.1e6 two_pi_hz"),
        "delays": ("grid", {"start": 0.0, "stop": 200e-6, "num": 201}),
        "readout_during_delay": ("bool", False),
        "stochastic_shots": ("int", 0),
    },
    "qnd": {
        "checks": ("int", 29),
        "t_tot": ("float", 50e-6),
        "target": ("float", 1e-3),
        "photon_numbers": ("floats", [0.0, 1.0, 2.3, 5.0]),
        "drive_offsets": ("freqgrid", {"start": "-2e6 two_pi_hz", "stop": "6e6 two_pi_hz", "num": 9}),
        "init_states": ("ints", [0, 1, 2]),
        "shots": ("int", 20_000),
    },
    "dephasing": {
        "gamma_phi_residual": ("freq", "0 rad_per_s"),
        "photon_numbers": ("floats", [1.0, 2.3, 5.0]),
        "drive_offsets": ("freqgrid", {"start": "-4e6 two_pi_hz", "stop": "8e6 two_pi_hz", "num": 25}),
    },
}

REQUIRED_SECTIONS = ("circuit", "rates", "readout", "experiment", "fit")
TOP_LEVEL = {"master_seed": ("int", 0), "output_dir": ("str", None)}


def _parse_value(kind: str, value, path: str):
    if kind == "freq":
        try:
            return parse_tagged(value, path)
        except UnitError as exc:
            raise ConfigError(path, str(exc).split(": ", 1)[-1]) from None
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(path, "value is not finite")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if kind in ("floats", "ints"):
        if not isinstance(value, list) or not value:
            raise ConfigError(path, "expected a nonempty list")
        sub = "float" if kind == "floats" else "int"
        return [_parse_value(sub, v, f"{path}[{k}]") for k, v in enumerate(value)]
    if kind in ("grid", "freqgrid"):
        if not isinstance(value, dict):
            raise ConfigError(path, "expected a mapping with start, stop, num")
        extra = set(value) - {"start", "stop", "num"}
        if extra:
            raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown key")
        for key in ("start", "stop", "num"):
            if key not in value:
                raise ConfigError(f"{path}.{key}", "missing required key")
        sub = "freq" if kind == "freqgrid" else "float"
        num = _parse_value("int", value["num"], f"{path}.num")
        if num < 1:
            raise ConfigError(f"{path}.num", "must be >= 1")
        return {"start": _parse_value(sub, value["start"], f"{path}.start"),
                "stop": _parse_value(sub, value["stop"], f"{path}.stop"), "num": num}
    raise AssertionError(kind)


def _canonical(kind: str, value):
    if value is None:
        return None
    if kind == "freq":
        return format_tagged(value)
    if kind == "freqgrid":
        return {"start": format_tagged(value["start"]), "stop": format_tagged(value["stop"]),
                "num": value["num"]}
    return value


def grid_values(grid: dict) -> np.ndarray:
    return np.linspace(grid["start"], grid["stop"], grid["num"])


@dataclass
class RunConfig:
    values: dict
    resolved: dict

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def master_seed(self) -> int:
        return self.values["master_seed"]

    def digest(self, *extra) -> str:
        """Short hash of the resolved config (without the output directory) and ``extra``."""
        doc = {k: v for k, v in self.resolved.items() if k != "output_dir"}
        blob = json.dumps([doc, list(extra)], sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    # -- typed views -----------------------------------------------------

    def circuit(self) -> CircuitParams:
        c = self.values["circuit"]
        return _build("circuit", CircuitParams, c["e_c"], c["e_j"], c["e_l"], c["phi_ext"], c["basis_size"])

    def rates(self) -> RateMatrix:
        r = self.values["rates"]
        return _build("rates", RateMatrix, r["g10"], r["g12"], r["g20"], r["g21"])

    def readout(self) -> ReadoutConfig:
        r = self.values["readout"]
        w0 = r["dressed_0"]
        dressed = (w0, w0 - r["chi01"], w0 - r["chi02"])
        cfg = _build("readout", ReadoutConfig, r["kappa"], 0.0, dressed, r["efficiency"],
                     r["photon_number"], r["t_meas"], r["drive_frequency"])
        if r["omega_bare"] is not None:
            return cfg.replace(omega_bare=r["omega_bare"])
        try:
            return cfg.replace(omega_bare=solve_bare_frequency(cfg, r["gamma_m_target"]))
        except ValueError as exc:
            raise ConfigError("readout.gamma_m_target", str(exc)) from None

    def ramp(self) -> RampSpec:
        z = self.values["lz"]
        gap = z["gap"]
        if gap is None:
            from .spectrum import diagonalize, transition_frequency

            gap = transition_frequency(diagonalize(self.circuit(), 6), 1, 2)
        return _build("lz", RampSpec, gap, z["detuning_span"], z["ramp_duration"], z["span_factor"])

    def experiment(self):
        from .protocol import ErasureExperimentConfig

        e = self.values["experiment"]
        conf = _build("experiment.false_negative", empirical_confusion, e["false_negative"], e["false_positive"])
        eol = _build("experiment.eol_fidelity", eol_confusion, e["eol_fidelity"])
        return _build("experiment", ErasureExperimentConfig, self.rates(), conf, eol,
                      e["qnd_error_per_check"], self.values["readout"]["t_meas"], e["t_ec"], e["m"],
                      e["init_state"], e["shots"], self.master_seed, e["flag_policy"])


def _build(path, factory, *args):
    try:
        return factory(*args)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def parse_config(doc) -> RunConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "configuration must be a mapping")
    # a summary JSON written by the CLI can be used directly
    if "config" in doc and "config_hash" in doc:
        doc = doc["config"]
    values: dict = {}
    resolved: dict = {}
    for key in doc:
        if key not in SCHEMA and key not in TOP_LEVEL:
            raise ConfigError(str(key), "unknown section")
    for key, (kind, default) in TOP_LEVEL.items():
        v = doc.get(key)
        values[key] = default if v is None else _parse_value(kind, v, key)
        resolved[key] = values[key]
    for section, fields in SCHEMA.items():
        body = doc.get(section)
        if body is None:
            if section in REQUIRED_SECTIONS:
                raise ConfigError(section, "missing required section")
            body = {}
        if not isinstance(body, dict):
            raise ConfigError(section, "section must be a mapping")
        for key in body:
            if key not in fields:
                raise ConfigError(f"{section}.{key}", "unknown key")
        sec_vals, sec_res = {}, {}
        for key, (kind, default) in fields.items():
            path = f"{section}.{key}"
            raw = body.get(key)
            if raw is None:
                if default is REQUIRED:
                    raise ConfigError(path, "missing required key")
                raw = default
            val = None if raw is None else _parse_value(kind, raw, path)
            sec_vals[key] = val
            sec_res[key] = _canonical(kind, val)
        values[section] = sec_vals
        resolved[section] = sec_res
    r = values["readout"]
    if r["omega_bare"] is None and r["gamma_m_target"] is None:
        raise ConfigError("readout.omega_bare", "give omega_bare or gamma_m_target")
    if values["fit"]["parameterization"] not in ("log", "linear"):
        raise ConfigError("fit.parameterization", "must be 'log' or 'linear'")
    return RunConfig(values, resolved)


def bundled_config(name: str = "paper.cfg") -> Path:
    return Path(str(resources.files("fluxerasure") / "data" / name))


def load_config(path: str | Path | None = None) -> RunConfig:
    """Read a YAML (or JSON) config; ``None`` or an unknown bare ``paper.cfg`` uses the bundled file."""
    p = bundled_config() if path is None else Path(path)
    if not p.exists() and p.parent == Path(".") and bundled_config(p.name).exists():
        p = bundled_config(p.name)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {p}: {exc.strerror}") from None
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"invalid YAML in {p}: {exc}") from None
    return parse_config(doc)


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Re-parse ``cfg.resolved`` with ``section.key`` (or top-level) overrides applied."""
    doc = json.loads(json.dumps(cfg.resolved))
    for dotted, value in overrides.items():
        if value is None:
            continue
        parts = dotted.split(".")
        target = doc
        for p in parts[:-1]:
            target = target.setdefault(p, {})
        target[parts[-1]] = value
    return parse_config(doc)
