"""
Run configurations, calibration sources and file output.

A run configuration is a JSON object::

    {"experiment": "ple", "emitter": null, "sweep": {...}, "seed": 7,
     "output_dir": "results/ple", "workers": 1}

Only ``experiment`` is required (plus ``seed`` for stochastic experiments);
every sweep key has a default. ``emitter`` is a calibration document, a
flat mapping of emitter parameters, or a path to a JSON file holding either;
when absent the shipped calibration is used.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .calibration import Calibration, shipped_calibration
from .errors import ConfigError, InvalidInputError

EXPERIMENTS = ("ple", "init", "saturation", "ssr", "t1", "cpt", "calibrate")
STOCHASTIC = frozenset({"ssr", "saturation", "t1"})
SEED_MAX = 2 ** 64


def _grid(start, stop, n):
    return [float(v) for v in np.round(np.linspace(start, stop, n), 12)]


# key -> (kind, default); a default of None means "take it from the calibration"
SWEEPS = {
    "ple": {
        "fields_tesla": ("floats", _grid(0.0, 0.2, 11)),
        "direction": ("vec3", [0.0, 0.0, 1.0]),
        "linewidth_fwhm": ("pos_float", 38e6),
        "span_hz": ("pos_float", 6e9),
        "n_points": ("pos_int", 2401),
    },
    "init": {
        "power": ("opt_pos_float", None),
        "duration": ("pos_float", 150e-6),
        "time_bin": ("pos_float", 1e-6),
        "target": ("transition", "B2"),
    },
    "saturation": {
        "powers": ("floats", [float(v) for v in np.round(np.geomspace(1e-10, 3e-8, 24), 22)]),
        "noise": ("nonneg_float", 0.03),
        "target": ("transition", "B2"),
    },
    "ssr": {
        "n_repeats": ("pos_int", 10_000),
        "threshold": ("nonneg_int", 1),
    },
    "t1": {
        "temperature_k": ("pos_float", 7.5),
        "delays": ("floats", _grid(0.0, 60e-3, 31)),
        "noise": ("nonneg_float", 0.05),
        "temperatures_k": ("floats", _grid(6.0, 14.0, 9)),
        "rate_noise": ("nonneg_float", 0.05),
    },
    "cpt": {
        "powers_w": ("opt_floats", None),
        "n_points": ("pos_int", 81),
        "temperature_k": ("opt_pos_float", None),
        "gamma_dephasing": ("opt_pos_float", None),
    },
    "calibrate": {
        "targets": ("targets", None),
        "free_params": ("names", None),
    },
}

TOP_LEVEL = ("experiment", "emitter", "sweep", "seed", "output_dir", "workers")


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check_value(path, kind, v):
    if kind.startswith("opt_"):
        if v is None:
            return None
        kind = kind[4:]
    if kind in ("pos_float", "nonneg_float"):
        if not _is_number(v):
            raise ConfigError(path, f"expected a number, got {v!r}")
        if kind == "pos_float" and not v > 0 or v < 0:
            raise ConfigError(path, f"must be {'positive' if kind == 'pos_float' else 'nonnegative'}")
        return float(v)
    if kind in ("pos_int", "nonneg_int"):
        if not isinstance(v, int) or isinstance(v, bool):
            raise ConfigError(path, f"expected an integer, got {v!r}")
        if v < (1 if kind == "pos_int" else 0):
            raise ConfigError(path, "out of range")
        return v
    if kind in ("floats", "vec3"):
        if not isinstance(v, list) or not v:
            raise ConfigError(path, "expected a nonempty list of numbers")
        for i, x in enumerate(v):
            if not _is_number(x):
                raise ConfigError(f"{path}[{i}]", f"expected a number, got {x!r}")
        if kind == "vec3" and len(v) != 3:
            raise ConfigError(path, "expected three components")
        return [float(x) for x in v]
    if kind == "transition":
        if v not in ("A1", "B2"):
            raise ConfigError(path, f"expected 'A1' or 'B2', got {v!r}")
        return v
    if kind == "targets":
        if not isinstance(v, dict):
            raise ConfigError(path, "expected an object of target values")
        for k, x in v.items():
            if not _is_number(x):
                raise ConfigError(f"{path}.{k}", f"expected a number, got {x!r}")
        return {k: float(x) for k, x in v.items()}
    if kind == "names":
        if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
            raise ConfigError(path, "expected a list of parameter names")
        return list(v)
    raise AssertionError(kind)


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    emitter: object = None
    sweep: dict = field(default_factory=dict)
    seed: int | None = None
    output_dir: str = ""
    workers: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @property
    def stochastic(self) -> bool:
        return self.experiment in STOCHASTIC


def parse_config(document) -> RunConfig:
    """Validate a JSON document (text or already-decoded object).

    Raises
    ------
    ConfigError
        For malformed JSON, unknown keys, unknown experiments, missing or
        ill-typed values; the message starts with the offending path.
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError("$", f"malformed JSON: {exc}") from None
    else:
        doc = document
    if not isinstance(doc, dict):
        raise ConfigError("$", "top level must be an object")
    for key in doc:
        if key not in TOP_LEVEL:
            raise ConfigError(f"$.{key}", "unknown key")
    if "experiment" not in doc:
        raise ConfigError("$.experiment", "missing required key")
    exp = doc["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError("$.experiment", f"unknown experiment {exp!r}; expected one of {EXPERIMENTS}")

    emitter = doc.get("emitter")
    if emitter is not None and not isinstance(emitter, (str, dict)):
        raise ConfigError("$.emitter", "expected an object or a file path")

    raw = doc.get("sweep", {})
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("$.sweep", "expected an object")
    schema = SWEEPS[exp]
    for key in raw:
        if key not in schema:
            raise ConfigError(f"$.sweep.{key}", f"unknown key for experiment {exp!r}")
    sweep = {}
    for key, (kind, default) in schema.items():
        value = raw.get(key, default)
        sweep[key] = _check_value(f"$.sweep.{key}", kind, value) if value is not None else None

    seed = doc.get("seed")
    if seed is None:
        if exp in STOCHASTIC:
            raise ConfigError("$.seed", f"missing required key for stochastic experiment {exp!r}")
    elif not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < SEED_MAX:
        raise ConfigError("$.seed", "expected an unsigned 64-bit integer")

    out = doc.get("output_dir", f"results/{exp}")
    if not isinstance(out, str) or not out:
        raise ConfigError("$.output_dir", "expected a nonempty path")
    workers = doc.get("workers", 1)
    if not isinstance(workers, int) or isinstance(workers, bool) or workers < 1:
        raise ConfigError("$.workers", "expected a positive integer")
    return RunConfig(exp, emitter, sweep, seed, out, workers)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from None
    return parse_config(text)


def resolve_calibration(source) -> Calibration:
    """Calibration from a config ``emitter`` entry."""
    if source is None:
        return shipped_calibration()
    try:
        if isinstance(source, str):
            return Calibration.load(source)
        return Calibration.from_dict(source)
    except (OSError, json.JSONDecodeError, InvalidInputError, TypeError) as exc:
        raise ConfigError("$.emitter", str(exc)) from None


# -- output --


def format_value(v) -> str:
    """Shortest round-trip text for numbers; ``str`` otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def verify_manifest(manifest_path) -> bool:
    """True when every file listed in a manifest matches its recorded hash."""
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    return all(
        (base / name).exists() and sha256_file(base / name) == digest
        for name, digest in doc["files"].items()
    )
