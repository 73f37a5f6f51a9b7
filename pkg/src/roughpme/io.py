"""Snapshot export: CSV per snapshot and an exact binary dump.

Binary layout (little-endian): 4-byte magic ``RPME``, uint16 version,
uint16 number of dims, uint32 count along axis 0, uint32 count along axis 1
(1 for one-dimensional fields), then float64 values in column-major order.
"""
from __future__ import annotations

import csv
import hashlib
import struct

import numpy as np

from .torus import ScalarField, TorusGrid

MAGIC = b"RPME"
VERSION = 1
_HEADER = struct.Struct("<4sHHII")


def write_field_csv(path, f: ScalarField) -> None:
    g = f.grid
    ax = g.axis()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if g.dim == 1:
            w.writerow(["i", "x", "value"])
            for i, v in enumerate(f.values):
                w.writerow([i, repr(float(ax[i])), repr(float(v))])
        else:
            w.writerow(["i", "j", "x", "y", "value"])
            for i in range(g.points_per_dim):
                for j in range(g.points_per_dim):
                    w.writerow([i, j, repr(float(ax[i])), repr(float(ax[j])), repr(float(f.values[i, j]))])


def read_field_csv(path) -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] == 3:
        n = data.shape[0]
        return ScalarField(TorusGrid(1, n), data[np.argsort(data[:, 0]), 2])
    n = int(round(np.sqrt(data.shape[0])))
    vals = np.empty((n, n))
    vals[data[:, 0].astype(int), data[:, 1].astype(int)] = data[:, 4]
    return ScalarField(TorusGrid(2, n), vals)


def dump_field(path, f: ScalarField) -> None:
    g = f.grid
    n0 = g.points_per_dim
    n1 = g.points_per_dim if g.dim == 2 else 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, g.dim, n0, n1))
        fh.write(np.asarray(f.values, dtype="<f8").ravel(order="F").tobytes())


def load_field(path) -> ScalarField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, ndim, n0, n1 = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    count = n0 * n1
    body = raw[_HEADER.size:]
    if len(body) != 8 * count:
        raise ValueError(f"{path}: expected {count} values, found {len(body) // 8}")
    vals = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if ndim == 1:
        return ScalarField(TorusGrid(1, n0), vals)
    return ScalarField(TorusGrid(2, n0), vals.reshape((n0, n1), order="F"))


def digest(*arrays) -> str:
    """sha256 over the float64 little-endian bytes of the arrays (shape included)."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def write_dat(path, x, y, header: str = "") -> None:
    """Two-column whitespace series for plotting tools."""
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        for a, b in zip(np.asarray(x).ravel(), np.asarray(y).ravel()):
            fh.write(f"{float(a):.17g} {float(b):.17g}\n")


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)
