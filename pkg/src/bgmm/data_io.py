"""CSV and JSON persistence for datasets, results and profiles."""

from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path

import numpy as np

from bgmm.moments import Dataset


class InputError(ValueError):
    """Malformed user input (missing column, bad value, bad config)."""


_ZCOL = re.compile(r"^z(\d+)$")


def read_dataset_csv(path) -> Dataset:
    """Read a ``y,x,z1,...,zK`` CSV file."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path} is empty") from None
        rows = [r for r in reader if r]
    for name in ("y", "x"):
        if name not in header:
            raise InputError(f"missing required column {name!r} in {path}")
    zcols = sorted(((int(m.group(1)), i) for i, h in enumerate(header)
                    if (m := _ZCOL.match(h))), key=lambda t: t[0])
    if not zcols:
        raise InputError(f"no instrument columns z1..zK in {path}")
    if [k for k, _ in zcols] != list(range(1, len(zcols) + 1)):
        raise InputError(f"instrument columns must be z1..zK without gaps in {path}")
    try:
        table = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise InputError(f"non-numeric value in {path}: {exc}") from exc
    if table.ndim != 2 or table.shape[1] != len(header):
        raise InputError(f"ragged rows in {path}")
    col = {h: i for i, h in enumerate(header)}
    try:
        return Dataset(table[:, col["y"]], table[:, col["x"]], table[:, [i for _, i in zcols]])
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def write_dataset_csv(data: Dataset, path) -> None:
    K = data.n_instruments
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "x", *(f"z{k + 1}" for k in range(K))])
        for n in range(data.n_obs):
            writer.writerow([repr(float(data.y[n])), repr(float(data.x[n])),
                             *(repr(float(v)) for v in data.Z[n])])


def sidecar_path(data_path) -> Path:
    p = Path(data_path)
    return p.with_name(p.stem + ".truth.json")


def read_json(path) -> dict:
    try:
        with Path(path).open(encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read JSON from {path}: {exc}") from exc


def write_json(obj, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _cell(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_rows_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
