"""Serialisation helpers: binary coefficient fields, CSV tables, JSON summaries.

Floats are written with 17 significant digits so every value round-trips.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

MAGIC = "TWOSCALE-FIELD 1"
_DTYPES = {"float64": "<f8", "complex128": "<c16"}


def fmt(x) -> str:
    """Format a scalar with 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return repr(x)
    return format(x, ".17g")


def write_field(path, values: np.ndarray, header: dict) -> None:
    """Write an array as a text header followed by raw little-endian bytes.

    The header records at least ``dims``, ``n_y``, ``components``, ``lambda``
    and ``Lambda``; ``dtype`` and ``shape`` are added here.
    """
    values = np.ascontiguousarray(values)
    kind = "complex128" if np.iscomplexobj(values) else "float64"
    head = dict(header)
    head["dtype"] = kind
    head["shape"] = ",".join(str(s) for s in values.shape)
    lines = [MAGIC] + [f"{k} = {fmt(v) if not isinstance(v, str) else v}" for k, v in head.items()]
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(values.astype(_DTYPES[kind]).tobytes())


def read_field(path) -> tuple[np.ndarray, dict]:
    """Inverse of :func:`write_field`; returns ``(values, header)``."""
    with open(path, "rb") as fh:
        if fh.readline().decode("ascii").strip() != MAGIC:
            raise ValueError(f"{path}: not a field file")
        head = {}
        while True:
            line = fh.readline().decode("ascii")
            if not line:
                raise ValueError(f"{path}: truncated header")
            line = line.strip()
            if line == "end":
                break
            k, _, v = line.partition("=")
            head[k.strip()] = v.strip()
        raw = fh.read()
    shape = tuple(int(s) for s in head["shape"].split(",") if s)
    values = np.frombuffer(raw, dtype=_DTYPES[head["dtype"]]).reshape(shape).copy()
    for key in ("dims", "n_y", "components"):
        if key in head:
            head[key] = int(head[key])
    for key in ("lambda", "Lambda"):
        if key in head:
            head[key] = float(head[key])
    return values, head


def write_csv(path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) if not isinstance(r[c], str) else r[c] for c in columns])


def _dump(obj, level: int = 0) -> str:
    pad = "  " * (level + 1)
    end = "  " * level
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_dump(obj[k], level + 1)}" for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        return _dump(obj.tolist(), level)
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + _dump(v, level + 1) for v in obj) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return fmt(x) if math.isfinite(x) else json.dumps(str(x))
    if isinstance(obj, (complex, np.complexfloating)):
        return _dump({"re": obj.real, "im": obj.imag}, level)
    return json.dumps(str(obj))


def write_json(path, obj) -> None:
    """Write ``obj`` as indented JSON with sorted keys and 17-digit floats."""
    Path(path).write_text(_dump(obj) + "\n")
