"""Deterministic machine output and short human tables."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np


def _float17(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if not any(c in s for c in ".eE"):
        s += ".0"
    return s


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with sorted keys and every float at 17 significant digits.

    Non-finite floats become ``null``.
    """
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}{_string(str(k))}: {to_json(obj[k], indent, _level + 1)}' for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj.tolist() if isinstance(obj, np.ndarray) else obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in seq):
            return "[" + ", ".join(to_json(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float17(float(obj))
    return _string(str(obj))


def _string(s: str) -> str:
    import json

    return json.dumps(s, ensure_ascii=False)


def write_json(path: Path, obj) -> None:
    path.write_text(to_json(obj) + "\n", encoding="utf-8")


def write_rows(path: Path, rows: list[dict]) -> None:
    """CSV from a list of records; floats at 17 significant digits."""
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    keys = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in (r[k] for k in keys)])


def human(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return format(value, ".6g")
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(human(v) for v in value) + "]"
    return str(value)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, list) and (len(v) > 8 or any(isinstance(x, dict) for x in v)):
            continue
        else:
            out[key] = v
    return out


def print_table(title: str, summary: dict) -> None:
    print(title)
    flat = _flatten(summary)
    width = max((len(k) for k in flat), default=0)
    for k in sorted(flat):
        print(f"  {k:<{width}}  {human(flat[k])}")
