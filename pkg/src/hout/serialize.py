"""Deterministic text serialization: CSV tables and JSON with 17-digit floats."""

import csv
import io
import json
import math

import numpy as np

from .sigma import SigmaEnsemble

FLOAT_FMT = ".17g"


def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return format(x, FLOAT_FMT)
    return str(x)


def dumps(obj, indent=2, _level=0):
    """JSON text with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    return fmt(obj)


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def table_text(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) for c in columns])
    return buf.getvalue()


def write_table(path, rows, columns):
    with open(path, "w", newline="") as fh:
        fh.write(table_text(rows, columns))


def ensemble_columns(d):
    return ["index", "weight"] + [f"x_{j + 1}" for j in range(d)]


def ensemble_rows(ens):
    rows = []
    for i, (w, x) in enumerate(zip(ens.weights, ens.nodes)):
        row = {"index": i, "weight": float(w)}
        row.update({f"x_{j + 1}": float(v) for j, v in enumerate(x)})
        rows.append(row)
    return rows


def write_ensemble_csv(path, ens):
    write_table(path, ensemble_rows(ens), ensemble_columns(ens.dim))


def read_ensemble_csv(path, kind="CSV"):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[:2] != ["index", "weight"] or len(header) < 3:
        raise ValueError(f"{path}: expected header index,weight,x_1,...")
    data = np.array([[float(v) for v in r] for r in body if r], dtype=float).reshape(-1, len(header))
    return SigmaEnsemble(nodes=data[:, 2:], weights=data[:, 1], kind=kind)


def ensemble_json(ens):
    return {"kind": ens.kind, "params": ens.params,
            "weights": ens.weights, "nodes": ens.nodes}
