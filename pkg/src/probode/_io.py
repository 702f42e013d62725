"""CSV / JSON writers shared by the solver modules and the CLI."""

import json
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.17g"


def write_csv(path, header, columns):
    """Write equal-length columns as a comma-separated file with a header row.

    Floats are written with 17 significant digits so that values round-trip
    exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    if data.ndim == 1:
        data = data[:, None]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(FLOAT_FMT % v for v in row) + "\n")
    return path


def read_csv(path):
    """Read a file written by :func:`write_csv` into ``(header, array)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return path
