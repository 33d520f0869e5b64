"""Binary field container ``HWF1`` with a JSON sidecar.

Layout: 4-byte magic, little-endian uint32 header length, a JSON header
(grid and dtype), then the raw little-endian array. The sidecar
``<name>.json`` repeats the header plus free-form metadata.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .spectral import Grid2D, make_grid

MAGIC = b"HWF1"


class FieldFormatError(ValueError):
    pass


def write_field(path, f: np.ndarray, grid: Grid2D, meta: dict | None = None) -> Path:
    path = Path(path)
    f = np.ascontiguousarray(f)
    if f.shape != (grid.N, grid.N):
        raise FieldFormatError(f"field shape {f.shape} does not match grid N={grid.N}")
    dtype = "complex128" if np.iscomplexobj(f) else "float64"
    header = {"L": grid.L, "N": grid.N, "seam": grid.seam, "dtype": dtype}
    raw = json.dumps(header, sort_keys=True).encode()
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(f.astype("<" + ("c16" if dtype == "complex128" else "f8")).tobytes())
    side = dict(header, meta=meta or {})
    path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    return path


def read_field(path) -> tuple[np.ndarray, Grid2D, dict]:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise FieldFormatError(f"{path}: not an HWF1 file")
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + n])
    dt = "<c16" if header["dtype"] == "complex128" else "<f8"
    N = int(header["N"])
    body = np.frombuffer(data[8 + n:], dtype=dt)
    if body.size != N * N:
        raise FieldFormatError(f"{path}: expected {N * N} values, found {body.size}")
    grid = make_grid(float(header["L"]), N, float(header.get("seam", 0.25)))
    meta = {}
    side = path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text()).get("meta", {})
    return body.reshape(N, N).copy(), grid, meta
