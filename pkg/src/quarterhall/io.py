"""Configuration parsing and report serialisation (CSV, JSON, manifest)."""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema

from . import __version__

SIG_DIGITS = 12

_FRACTION = {"anyOf": [{"type": "number"},
                       {"type": "string", "pattern": r"^\s*-?\d+\s*(/\s*\d+\s*)?$"}]}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "b_corner": _FRACTION,
        "b_star": _FRACTION,
        "L": {"type": "integer", "minimum": 4},
        "corner_offset": {"type": ["integer", "null"], "minimum": 1},
        "corner_margin": {"type": "integer", "minimum": 1},
        "edge_margin": {"type": "integer", "minimum": 1},
        "chern_L": {"type": "integer", "minimum": 8},
        "convergence_step": {"type": "integer", "minimum": 0},
        "gap": {"anyOf": [{"const": "auto"},
                          {"type": "array", "items": {"type": "number"},
                           "minItems": 2, "maxItems": 2}]},
        "gap_choice": {"enum": ["lowest", "widest"]},
        "gap_threshold": {"type": "number", "exclusiveMinimum": 0},
        "star_potential": {"type": "number"},
        "vacuum_potential": {"type": "number", "minimum": 0},
        "t_grid": {"type": "integer", "minimum": 3},
        "perturbation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["none", "corner_block", "far_block"]},
                "size": {"type": "integer", "minimum": 1},
                "amplitude": {"type": "number", "minimum": 0},
                "center": {"type": "array", "items": {"type": "integer"},
                           "minItems": 2, "maxItems": 2},
            },
        },
        "n_pairs": {"type": "integer", "minimum": 0},
        "q_max": {"type": "integer", "minimum": 1},
        "q_pairs": {"type": "integer", "minimum": 1},
        "chain_length": {"type": "integer", "minimum": 20},
        "delta0": {"type": "number", "exclusiveMinimum": 0},
        "extra_checks": {"type": "boolean"},
        "out_dir": {"type": ["string", "null"]},
        "seed": {"type": "integer", "minimum": 0},
        "tolerances": {"type": "object", "additionalProperties": {"type": "number",
                                                                   "exclusiveMinimum": 0}},
    },
}


class ConfigError(ValueError):
    """Invalid configuration; the message carries the JSON path of the problem."""


def validate_config_dict(data: dict) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "$" + "".join(f"[{p!r}]" if isinstance(p, int) else f".{p}"
                             for p in e.absolute_path)
        raise ConfigError(f"{path}: {e.message}")


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    validate_config_dict(data)
    return data


def fmt(x) -> str:
    """Locale-independent number formatting with 12 significant digits."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        out = format(x, f".{SIG_DIGITS}g")
        return "0" if out == "-0" else out
    if isinstance(x, complex):
        return f"{fmt(x.real)}{'+' if x.imag >= 0 else '-'}{fmt(abs(x.imag))}j"
    if isinstance(x, (dict, list, tuple)):
        return json.dumps(_rounded(x), sort_keys=True, separators=(",", ":"))
    return str(x)


def _rounded(obj):
    if isinstance(obj, float):
        return float(fmt(obj)) if math.isfinite(obj) else fmt(obj)
    if isinstance(obj, dict):
        return {str(k): _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):  # numpy scalars
        return _rounded(obj.item())
    return obj


def csv_bytes(header: Sequence[str], rows: Iterable[Sequence]) -> bytes:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(_rounded(v) if not isinstance(v, (dict, list, tuple)) else v)
                         for v in row])
    return buf.getvalue().encode("utf-8")


REPORT_CSV_HEADER = ("name", "value", "imag_residual", "window", "convergence_estimate")


def report_rows(reports) -> list[tuple]:
    """One CSV row per report.  Runtime lives in the JSON report only, so the
    CSV bytes are reproducible."""
    return [(r.name, float(r.value), float(r.imag_residual), r.window,
             float(r.convergence_estimate)) for r in reports]


def _write(path: Path, data: bytes) -> None:
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from exc


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_reports(results: dict, out_dir, config_echo: dict | None = None) -> dict:
    """Write per-experiment CSVs, one ``report.json`` and ``manifest.json``.

    ``results`` maps experiment name -> Verdict.  Returns the manifest.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{out}: cannot create output directory ({exc.strerror})") from exc
    files = []
    report = {}
    for name, verdict in results.items():
        stem = name.replace("-", "_")
        path = out / f"{stem}.csv"
        _write(path, csv_bytes(REPORT_CSV_HEADER, report_rows(verdict.reports)))
        files.append(path)
        for table, (header, rows) in sorted(verdict.tables.items()):
            tpath = out / f"{table}.csv"
            _write(tpath, csv_bytes(header, rows))
            files.append(tpath)
        report[name] = verdict.to_dict()
    rpath = out / "report.json"
    _write(rpath, (json.dumps(_rounded(report), indent=2, sort_keys=True) + "\n").encode())
    files.append(rpath)
    manifest = {
        "tool": "quarterhall",
        "version": __version__,
        "config": _rounded(config_echo or {}),
        "verdicts": {name: v.status for name, v in results.items()},
        "files": {p.name: sha256(p) for p in files},
    }
    mpath = out / "manifest.json"
    _write(mpath, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return manifest


def verify_manifest(out_dir) -> bool:
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    return all((out / name).exists() and sha256(out / name) == digest
               for name, digest in manifest["files"].items())
