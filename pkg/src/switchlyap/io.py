"""Input files, canonical JSON output and run manifests.

Files use 1-based state and mode indices; everything in memory is 0-based.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io as _io
import json
import math
import platform
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import jsonschema
import numpy as np

from .ctmc import MarkovParams
from .errors import InvalidInput
from .flows import Signal, SwitchedSystem
from .hierarchy import RateFamily

_MATRIX = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}

SYSTEM_SCHEMA = {
    "type": "object",
    "required": ["d", "N", "matrices"],
    "additionalProperties": False,
    "properties": {
        "d": {"type": "integer", "minimum": 1},
        "N": {"type": "integer", "minimum": 1},
        "matrices": {"type": "array", "minItems": 1, "items": _MATRIX},
        "markov": {
            "type": "object",
            "required": ["nu", "mu", "P"],
            "additionalProperties": False,
            "properties": {
                "nu": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "mu": {"type": "number", "exclusiveMinimum": 0},
                "P": _MATRIX,
            },
        },
        "hull_weights": {"type": "array", "items": {"type": "number", "minimum": 0}},
    },
}

RATES_SCHEMA = {
    "type": "object",
    "required": ["N", "rates"],
    "additionalProperties": False,
    "properties": {
        "N": {"type": "integer", "minimum": 1},
        "rates": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "coeff", "exponent"],
                "additionalProperties": False,
                "properties": {
                    "from": {"type": "integer", "minimum": 1},
                    "to": {"type": "integer", "minimum": 1},
                    "coeff": {"type": "number", "exclusiveMinimum": 0},
                    "exponent": {"type": "number"},
                },
            },
        },
        "modes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
    },
}


def _path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    return "/".join(parts) if parts else "<root>"


def validate(doc: Any, schema: Dict[str, Any]) -> None:
    """Raise :class:`InvalidInput` naming the offending field."""
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise InvalidInput(f"{_path(e)}: {e.message}")


def load_json(path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InvalidInput(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: malformed JSON ({exc.msg}, line {exc.lineno})") from None


def _shape_check(mat, rows, cols, field):
    if len(mat) != rows or any(len(r) != cols for r in mat):
        raise InvalidInput(f"{field}: expected a {rows}x{cols} matrix")


def system_from_dict(doc: Any) -> Tuple[SwitchedSystem, Optional[MarkovParams],
                                        Optional[np.ndarray]]:
    """Validated system, optional chain parameters and optional hull weights."""
    validate(doc, SYSTEM_SCHEMA)
    d, N = doc["d"], doc["N"]
    mats = doc["matrices"]
    if len(mats) != N:
        raise InvalidInput(f"matrices: expected {N} matrices, got {len(mats)}")
    for i, m in enumerate(mats):
        _shape_check(m, d, d, f"matrices/{i}")
    sys = SwitchedSystem(mats)
    params = None
    if "markov" in doc:
        mk = doc["markov"]
        if len(mk["nu"]) != N:
            raise InvalidInput(f"markov/nu: expected length {N}")
        _shape_check(mk["P"], N, N, "markov/P")
        try:
            params = MarkovParams(mk["nu"], mk["mu"], mk["P"])
        except InvalidInput as exc:
            raise InvalidInput(f"markov: {exc}") from None
    weights = None
    if "hull_weights" in doc:
        w = np.asarray(doc["hull_weights"], dtype=float)
        if w.shape != (N,) or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
            raise InvalidInput(f"hull_weights: expected {N} weights summing to 1")
        weights = w
    return sys, params, weights


def rate_family_from_dict(doc: Any) -> Tuple[RateFamily, Optional[np.ndarray]]:
    """Validated rate family and optional 0-based state-to-mode map."""
    validate(doc, RATES_SCHEMA)
    N = doc["N"]
    entries = []
    for k, r in enumerate(doc["rates"]):
        for key in ("from", "to"):
            if r[key] > N:
                raise InvalidInput(f"rates/{k}/{key}: state {r[key]} exceeds N = {N}")
        entries.append((r["from"] - 1, r["to"] - 1, float(r["coeff"]),
                        float(r["exponent"])))
    try:
        family = RateFamily(N, tuple(entries))
    except InvalidInput as exc:
        raise InvalidInput(f"rates: {exc}") from None
    modes = None
    if "modes" in doc:
        if len(doc["modes"]) != N:
            raise InvalidInput(f"modes: expected length {N}")
        modes = np.asarray(doc["modes"], dtype=np.int64) - 1
    return family, modes


def parse_system_file(path):
    return system_from_dict(load_json(path))


def parse_rate_family_file(path):
    return rate_family_from_dict(load_json(path))


def system_to_dict(sys: SwitchedSystem, params: Optional[MarkovParams] = None,
                   hull_weights=None) -> Dict[str, Any]:
    doc: Dict[str, Any] = {"d": sys.d, "N": sys.N,
                           "matrices": np.asarray(sys.modes, dtype=float).tolist()}
    if params is not None:
        doc["markov"] = {"nu": np.asarray(params.nu, dtype=float).tolist(),
                         "mu": float(params.mu),
                         "P": np.asarray(params.P, dtype=float).tolist()}
    if hull_weights is not None:
        doc["hull_weights"] = np.asarray(hull_weights, dtype=float).tolist()
    return doc


def rate_family_to_dict(family: RateFamily, modes=None) -> Dict[str, Any]:
    doc: Dict[str, Any] = {
        "N": family.N,
        "rates": [{"from": int(i) + 1, "to": int(j) + 1, "coeff": float(c),
                   "exponent": float(a)} for i, j, c, a in family.entries]}
    if modes is not None:
        doc["modes"] = [int(m) + 1 for m in modes]
    return doc


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become strings."""
    if isinstance(obj, Signal):
        return [[float(t), int(i) + 1] for t, i in obj.segments]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dumps(obj: Any) -> str:
    """Canonical JSON: sorted keys, 2-space indent, shortest round-trip floats."""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2,
                      allow_nan=False) + "\n"


def csv_text(rows: Sequence[Dict[str, Any]], columns: Sequence[str]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c]
                    for c in columns])
    return buf.getvalue()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> Dict[str, str]:
    out = {"python": platform.python_version()}
    for dist in ("numpy", "scipy", "numba", "jsonschema", "artifact"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = "unknown"
    return out


def manifest(command: str, argv: Sequence[str], inputs: Iterable, seed: int,
             outputs: Sequence[str]) -> Dict[str, Any]:
    """Run record; excludes ``--threads`` since results do not depend on it."""
    args: List[str] = []
    skip = False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--threads":
            skip = True
            continue
        if a.startswith("--threads="):
            continue
        args.append(a)
    return {"command": command, "argv": args, "seed": int(seed),
            "inputs": {str(p): sha256_file(p) for p in inputs},
            "outputs": list(outputs), "versions": versions()}
