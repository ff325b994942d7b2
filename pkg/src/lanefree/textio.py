"""Plain-text matrix blocks with a ``key=value`` metadata header.

Layout::

    # key=value
    # ...
    [NAME rows cols]
    v v v
    ...

Values use 17 significant digits so matrices round-trip exactly.
"""

from __future__ import annotations

import numpy as np


def write_matrices(path, matrices: dict, meta: dict | None = None, delimiter: str = ","):
    with open(path, "w") as fh:
        for key, val in (meta or {}).items():
            fh.write(f"# {key}={val}\n")
        for name, mat in matrices.items():
            m = np.atleast_2d(np.asarray(mat, dtype=float))
            fh.write(f"[{name} {m.shape[0]} {m.shape[1]}]\n")
            for row in m:
                fh.write(delimiter.join(f"{v:.17g}" for v in row) + "\n")


def read_matrices(path, delimiter: str = ","):
    """Return ``(matrices, meta)``; metadata values stay strings."""
    meta: dict = {}
    mats: dict = {}
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    i = 0
    while i < len(lines):
        ln = lines[i].strip()
        i += 1
        if not ln:
            continue
        if ln.startswith("#"):
            key, _, val = ln[1:].strip().partition("=")
            meta[key.strip()] = val.strip()
        elif ln.startswith("["):
            name, rows, cols = ln.strip("[]").split()
            rows, cols = int(rows), int(cols)
            data = [
                [float(v) for v in lines[i + r].split(delimiter)] for r in range(rows)
            ]
            i += rows
            mat = np.array(data, dtype=float).reshape(rows, cols)
            mats[name] = mat
        else:
            raise ValueError(f"{path}: unexpected line {i}: {ln!r}")
    return mats, meta
