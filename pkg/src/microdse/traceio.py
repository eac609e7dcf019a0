"""CSV interchange for traces.

Schema: first column ``t`` in seconds with 9 decimal places, then one
column per labeled channel.  Channel values are written with shortest
round-trip float formatting, so a written trace reads back
value-identical.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def write_csv(path: str | Path, t: np.ndarray, columns: dict[str, np.ndarray]) -> None:
    path = Path(path)
    labels = list(columns)
    arrays = [np.asarray(columns[lab], dtype=float) for lab in labels]
    n = len(t)
    for lab, arr in zip(labels, arrays):
        if arr.shape != (n,):
            raise ValueError(f"column {lab!r} has shape {arr.shape}, expected ({n},)")
    with path.open("w", newline="") as fh:
        fh.write(",".join(["t", *labels]) + "\n")
        for k in range(n):
            row = [f"{t[k]:.9f}"]
            row.extend(repr(float(arr[k])) for arr in arrays)
            fh.write(",".join(row) + "\n")


def read_csv(path: str | Path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        if not header or header[0] != "t":
            raise ValueError(f"{path}: first column must be 't', got {header[:1]}")
        labels = header[1:]
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    t = data[:, 0]
    return t, {lab: data[:, i + 1] for i, lab in enumerate(labels)}
