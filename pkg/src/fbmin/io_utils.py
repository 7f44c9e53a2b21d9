"""Trace CSV and grayscale panel output."""

from __future__ import annotations

import numpy as np

from .grid import ScalarField
from .solver import IterationRecord


def write_trace_csv(trace, path) -> None:
    """Iteration trace as iter,kind,J_before,J_after,d_moved(,accepted)."""
    with open(path, "w", newline="\n") as fh:
        fh.write("iter,kind,J_before,J_after,d_moved,accepted\n")
        for r in trace:
            fh.write(
                f"{r.index},{r.kind},{float(r.j_before)!r},{float(r.j_after)!r},{float(r.d_moved)!r},{int(r.accepted)}\n"
            )


def read_trace_csv(path) -> list:
    out = []
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("iter,kind,J_before,J_after,d_moved"):
            raise ValueError("not a trace CSV file")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) < 5:
                continue
            accepted = bool(int(parts[5])) if len(parts) > 5 else True
            out.append(
                IterationRecord(int(parts[0]), parts[1], float(parts[2]), float(parts[3]), float(parts[4]), accepted)
            )
    return out


def write_scalar_pgm(fld: ScalarField, path) -> None:
    """Grayscale panel of a field, normalized to its own value range."""
    vals = fld.values
    vmin = float(vals.min())
    vmax = float(vals.max())
    span = vmax - vmin
    if span <= 0:
        img = np.zeros(vals.shape, dtype=np.uint8)
    else:
        img = np.round(255.0 * (vals - vmin) / span).astype(np.uint8)
    img = img.T[::-1, :]
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(img.tobytes(order="C"))
