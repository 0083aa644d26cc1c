"""Experiment configuration, report serialisation and CSV files.

Reports are written with sorted keys and every float printed with 17
significant digits, so identical runs produce identical bytes.  Non-finite
floats are written as the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
from pathlib import Path

import numpy as np

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "DEFAULTS",
    "validate_config",
    "load_config",
    "dumps",
    "write_json",
    "write_csv",
    "read_data_csv",
]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


DEFAULTS: dict = {
    "seed": 0,
    "threads": 1,
    "model": {
        "kind": "logistic",
        "n": 1000,
        "p": 1,
        "data": None,
        "truth": None,
        "design": "uniform",
        "intercept": False,
        "basis": "cosine",
    },
    "penalty": {"kind": "ridge", "value": 1.0, "s": None, "w": None, "m": None, "g2": None},
    "certificate": {"x": 3.0, "nu": 2.0 / 3.0, "route": "auto", "omega_source": "analytic", "mean_constant": 1.0},
    "verification": {"oracle": "quadrature", "step": None, "half_width": 10.0, "n_draws": 200000,
                     "inflation": 1.5},
    "sweep": {"n": None, "p": None, "replicates": 1},
    "tails": {"family": "chi2", "eigenvalues": None, "p": 4, "g": None, "x": [0.5, 1.0, 2.0, 4.0],
              "n_mc": 1000000, "weights": None, "theta": None, "n": 100},
    "compare": {"mean1": None, "prec1": None, "mean2": None, "prec2": None, "Q": None, "constant": 1.0},
    "tune": {"n": None, "s": None, "s0": None, "C0": 1.0},
    "output": {"dir": "out", "report": "report.json", "summary": "summary.csv", "phase": "phase.csv"},
}

_CHOICES = {
    ("model", "kind"): ("logistic", "logdensity", "quadratic"),
    ("model", "design"): ("uniform", "gaussian"),
    ("model", "basis"): ("cosine", "monomial"),
    ("penalty", "kind"): ("none", "ridge", "smooth", "truncation", "explicit"),
    ("certificate", "route"): ("auto", "direct", "analytic", "grid"),
    ("certificate", "omega_source"): ("analytic", "empirical"),
    ("verification", "oracle"): ("quadrature", "importance", "none"),
    ("tails", "family"): ("chi2", "gauss-qf", "exp-qf", "bernoulli-sum", "bernoulli-vector"),
}


def _merge(defaults: dict, given: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown configuration key '{where}'")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"configuration key '{where}' must be an object")
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def _positive(cfg, block, key, integer=False, allow_none=False):
    value = cfg[block][key]
    where = f"{block}.{key}"
    if value is None and allow_none:
        return
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"configuration key '{where}' must be a number")
    if integer and int(value) != value:
        raise ConfigError(f"configuration key '{where}' must be an integer")
    if not value > 0:
        raise ConfigError(f"configuration key '{where}' must be positive")


def validate_config(raw: dict) -> dict:
    """Merge ``raw`` into the defaults and check types and ranges."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    cfg = _merge(DEFAULTS, raw, "")
    for (block, key), allowed in _CHOICES.items():
        if cfg[block][key] not in allowed:
            raise ConfigError(f"configuration key '{block}.{key}' must be one of {', '.join(allowed)}")
    seed = cfg["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0 or seed >= 2 ** 64:
        raise ConfigError("configuration key 'seed' must be an unsigned 64-bit integer")
    if isinstance(cfg["threads"], bool) or not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("configuration key 'threads' must be a positive integer")
    _positive(cfg, "model", "n", integer=True)
    _positive(cfg, "model", "p", integer=True)
    _positive(cfg, "certificate", "x")
    _positive(cfg, "certificate", "nu")
    if cfg["certificate"]["nu"] > 1:
        raise ConfigError("configuration key 'certificate.nu' must lie in (0, 1]")
    pen = cfg["penalty"]
    kind = pen["kind"]
    if kind == "ridge":
        v = pen["value"]
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            if v < 0:
                raise ConfigError("configuration key 'penalty.value' must be non-negative")
        elif not (isinstance(v, list) and all(isinstance(t, (int, float)) and t >= 0 for t in v)):
            raise ConfigError("configuration key 'penalty.value' must be a non-negative number or list")
    elif kind == "smooth":
        _positive(cfg, "penalty", "s")
        _positive(cfg, "penalty", "w")
    elif kind == "truncation":
        _positive(cfg, "penalty", "m", integer=True)
        if pen["m"] > cfg["model"]["p"]:
            raise ConfigError("configuration key 'penalty.m' must not exceed model.p")
    elif kind == "explicit":
        g2 = pen["g2"]
        if not isinstance(g2, list) or len(g2) != cfg["model"]["p"] or any(
            not isinstance(t, (int, float)) or t < 0 for t in g2
        ):
            raise ConfigError("configuration key 'penalty.g2' must list model.p non-negative numbers")
    for key in ("n", "p"):
        grid = cfg["sweep"][key]
        if grid is not None and (not isinstance(grid, list) or not grid or any(
                isinstance(t, bool) or not isinstance(t, int) or t < 1 for t in grid)):
            raise ConfigError(f"configuration key 'sweep.{key}' must be a non-empty list of positive integers")
    _positive(cfg, "sweep", "replicates", integer=True)
    _positive(cfg, "verification", "n_draws", integer=True)
    _positive(cfg, "verification", "step", allow_none=True)
    return cfg


def load_config(path: str | Path | None, overrides: dict | None = None, raw: dict | None = None) -> dict:
    """Read a JSON config (or take ``raw``), apply ``overrides`` and validate.

    Override keys are top-level names or ``"block.key"``.
    """
    raw = copy.deepcopy(raw) if raw is not None else {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration file is not valid JSON: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read configuration file: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
    for key, value in (overrides or {}).items():
        block, _, sub = key.partition(".")
        if not sub:
            raw[key] = value
            continue
        raw.setdefault(block, {})
        if not isinstance(raw[block], dict):
            raise ConfigError(f"configuration key '{block}' must be an object")
        raw[block][sub] = value
    return validate_config(raw)


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    text = format(x, ".17g")
    return text if ("e" in text or "." in text) else text + ".0"


def _emit(obj, out: list, indent: int, level: int):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (np.bool_, bool)):
        out.append("true" if obj else "false")
    elif obj is None:
        out.append("null")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = sorted(obj.items(), key=lambda kv: str(kv[0]))
        for i, (k, v) in enumerate(items):
            out.append(pad + json.dumps(str(k)) + ": ")
            _emit(v, out, indent, level + 1)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            out.append("[")
            for i, v in enumerate(obj):
                _emit(v, out, indent, level + 1)
                if i < len(obj) - 1:
                    out.append(", ")
            out.append("]")
            return
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(pad)
            _emit(v, out, indent, level + 1)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(end + "]")
    elif hasattr(obj, "to_dict"):
        _emit(obj.to_dict(), out, indent, level)
    else:
        raise TypeError(f"cannot serialise object of type {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """Deterministic JSON text (sorted keys, 17 significant digits)."""
    out: list[str] = []
    _emit(obj, out, indent, 0)
    return "".join(out) + "\n"


def write_json(path: str | Path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return _fmt_float(float(v)).strip('"')
    return str(v)


def write_csv(path: str | Path, header: list[str], rows: list[dict]) -> None:
    """UTF-8, LF line endings, header row; missing cells are empty."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_csv_cell(row.get(h)) for h in header])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_data_csv(path: str | Path, kind: str) -> dict:
    """Read a data file.

    Logistic: header ``y,x1,...,xp``.  Log-density: one column ``x``.
    Quadratic models have no data file.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"data file {path} is empty")
    header = [h.strip() for h in rows[0]]
    try:
        values = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"data file {path} has a non-numeric cell: {exc}") from exc
    if values.size == 0:
        raise ConfigError(f"data file {path} has no data rows")
    if kind == "logistic":
        if header[0] != "y" or len(header) < 2:
            raise ConfigError("logistic data file needs a header 'y,x1,...,xp'")
        return {"labels": values[:, 0], "design": values[:, 1:]}
    if kind == "logdensity":
        if header != ["x"]:
            raise ConfigError("log-density data file needs the single header 'x'")
        return {"samples": values[:, 0]}
    raise ConfigError(f"model kind {kind!r} does not read data files")
