"""SFLD field files and CSV reports with a provenance header."""

from __future__ import annotations

import csv
import json
import struct

import numpy as np

from .errors import FormatError
from .grid import Grid

SFLD_MAGIC = b"SFLD"
SFLD_VERSION = 1
KIND_COMPLEX = 1
KIND_CLOSED = 2  # samples on the (n+1)^dim closed nodes instead of n^dim periodic ones
_HEAD = struct.Struct("<4sIIIdB")


def write_field(path, values: np.ndarray, grid: Grid, meta: dict | None = None):
    values = np.asarray(values)
    closed = values.shape == grid.closed_shape
    if not closed:
        grid.check(values)
    kind = (KIND_COMPLEX if np.iscomplexobj(values) else 0) | (KIND_CLOSED if closed else 0)
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(SFLD_MAGIC, SFLD_VERSION, grid.dim, grid.n, grid.L, kind))
        if kind & KIND_COMPLEX:
            data = np.stack([values.real, values.imag], axis=-1)
        else:
            data = values
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())
        blob = json.dumps(meta or {}, sort_keys=True).encode()
        fh.write(b"META" + struct.pack("<I", len(blob)) + blob)


def read_field(path, grid: Grid | None = None):
    """Returns (values, grid, meta). With ``grid`` given, the header must match it."""
    with open(path, "rb") as fh:
        head = fh.read(_HEAD.size)
        if len(head) < _HEAD.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, dim, n, L, kind = _HEAD.unpack(head)
        if magic != SFLD_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {SFLD_MAGIC!r}")
        if version != SFLD_VERSION:
            raise FormatError(f"{path}: unsupported SFLD version {version}")
        found = Grid(dim, n, L)
        if grid is not None and grid != found:
            raise FormatError(f"{path}: header grid {found} does not match expected {grid}")
        shape = found.closed_shape if kind & KIND_CLOSED else found.shape
        count = int(np.prod(shape)) * (2 if kind & KIND_COMPLEX else 1)
        raw = fh.read(8 * count)
        if len(raw) != 8 * count:
            raise FormatError(f"{path}: truncated payload ({len(raw)} of {8 * count} bytes)")
        data = np.frombuffer(raw, dtype="<f8")
        if kind & KIND_COMPLEX:
            data = data[0::2] + 1j * data[1::2]
        meta = {}
        if fh.read(4) == b"META":
            (m,) = struct.unpack("<I", fh.read(4))
            meta = json.loads(fh.read(m).decode())
    return data.reshape(shape).copy(), found, meta


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, columns, rows, provenance: dict | None = None, summary: dict | None = None):
    """CSV with '# key: value' provenance lines up front and an optional '# summary' block at the end."""
    with open(path, "w", newline="") as fh:
        for key, val in (provenance or {}).items():
            fh.write(f"# {key}: {format_value(val)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
        if summary:
            fh.write("# summary\n")
            for key, val in summary.items():
                fh.write(f"# {key}: {format_value(val)}\n")


def read_csv(path):
    """(provenance dict, columns, rows as lists of strings)."""
    prov, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(": ")
                if key != "summary":
                    prov[key] = val
            else:
                lines.append(line)
    table = list(csv.reader(lines))
    return prov, table[0] if table else [], table[1:]
