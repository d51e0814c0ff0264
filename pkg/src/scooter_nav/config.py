"""Run configuration: one JSON document with a versioned schema field.

Unknown keys are rejected. Validation errors carry the line of the offending
key in the source document when it can be located.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path as FsPath

import numpy as np

from .localization import ProcessNoise
from .nmpc import OcpLimits, OcpWeights
from .pathmodel import Path, PathError, load_path
from .refgen import HorizonParams
from .sim import ActuatorConfig, Disturbance, SensorConfig, SimConfig
from .vehicle import VehicleParams

SCHEMA = "scooter-nav/run-config/1"


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = ""
        if source:
            where = f"{source}:{line}: " if line else f"{source}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class RunConfig:
    path_file: str
    sim: SimConfig
    seed: int = 0
    output_dir: str = "runs/out"

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, sim=replace(self.sim, sensors=replace(self.sim.sensors, rng_seed=seed)))

    def load_path(self) -> Path:
        return load_path(self.path_file)[0]


_SECTIONS = {
    "vehicle": VehicleParams,
    "horizon": HorizonParams,
    "limits": OcpLimits,
    "sensors": SensorConfig,
    "actuators": ActuatorConfig,
    "disturbance": Disturbance,
}
_TOP = {"schema", "path", "vehicle", "horizon", "weights", "limits", "sensors", "actuators", "process_noise",
        "disturbance", "time_limit", "seed", "output_dir", "speed_source", "ideal_localization"}


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _build(cls, doc, section: str, text: str, source):
    if not isinstance(doc, dict):
        raise ConfigError(f"'{section}' must be an object", _line_of(text, section), source)
    names = {f.name for f in fields(cls)}
    for k in doc:
        if k not in names:
            raise ConfigError(f"unknown key '{section}.{k}'", _line_of(text, k), source)
    try:
        return cls(**doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid '{section}': {e}", _line_of(text, section), source) from None


def parse_config(text: str, base_dir: str | FsPath = ".", source: str | None = None) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON: {e.msg}", e.lineno, source) from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object", 1, source)
    for k in doc:
        if k not in _TOP:
            raise ConfigError(f"unknown key '{k}'", _line_of(text, k), source)
    if doc.get("schema") != SCHEMA:
        raise ConfigError(f"schema must be '{SCHEMA}', got {doc.get('schema')!r}", _line_of(text, "schema"), source)
    if "path" not in doc:
        raise ConfigError("missing 'path'", None, source)

    parts = {name: _build(cls, doc.get(name, {}), name, text, source) for name, cls in _SECTIONS.items()}
    if "horizon" not in doc or "v_max" not in doc["horizon"]:
        parts["horizon"] = replace(parts["horizon"], v_max=parts["limits"].v_max)
    elif abs(parts["horizon"].v_max - parts["limits"].v_max) > 1e-12:
        raise ConfigError("horizon.v_max must equal limits.v_max", _line_of(text, "horizon"), source)

    w = doc.get("weights", {})
    if not isinstance(w, dict) or set(w) - {"Q", "R", "P"}:
        raise ConfigError("weights accepts only Q, R and P diagonals", _line_of(text, "weights"), source)
    try:
        weights = OcpWeights(**{k: np.asarray(v, dtype=float) for k, v in w.items()})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid 'weights': {e}", _line_of(text, "weights"), source) from None

    pn = doc.get("process_noise")
    try:
        if pn is None:
            noise = ProcessNoise()
        else:
            Q = np.asarray(pn, dtype=float)
            noise = ProcessNoise(np.diag(Q) if Q.ndim == 1 else Q)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid 'process_noise': {e}", _line_of(text, "process_noise"), source) from None

    seed = doc.get("seed", parts["sensors"].rng_seed)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer", _line_of(text, "seed"), source)
    parts["sensors"] = replace(parts["sensors"], rng_seed=seed)
    try:
        sim = SimConfig(vehicle=parts["vehicle"], horizon=parts["horizon"], weights=weights, limits=parts["limits"],
                        sensors=parts["sensors"], actuators=parts["actuators"], process_noise=noise,
                        disturbance=parts["disturbance"], time_limit=float(doc.get("time_limit", 300.0)),
                        speed_source=doc.get("speed_source", "command"),
                        ideal_localization=bool(doc.get("ideal_localization", False)))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), None, source) from None
    path_file = str((FsPath(base_dir) / doc["path"]).resolve()) if not FsPath(doc["path"]).is_absolute() \
        else doc["path"]
    return RunConfig(path_file, sim, seed, doc.get("output_dir", "runs/out"))


def load_config(file: str | FsPath) -> RunConfig:
    p = FsPath(file)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", None, str(p)) from None
    return parse_config(text, p.parent, str(p))


def load_run(file: str | FsPath) -> tuple[RunConfig, Path]:
    """Config plus its path, with path errors reported as config errors."""
    cfg = load_config(file)
    try:
        path = cfg.load_path()
    except OSError as e:
        raise ConfigError(f"cannot read path file {cfg.path_file}: {e.strerror}", None, str(file)) from None
    except (PathError, ValueError, KeyError) as e:
        raise ConfigError(f"invalid path file {cfg.path_file}: {e}", None, str(file)) from None
    return cfg, path
