"""On-disk formats for fitted fields and run configuration.

A field file is one JSON header line followed by the raw payload:

    {"dims": [nx, ny, nz], "order": "x-fastest", "dtype": "f32le",
     "extent": [[0,0,0],[1,1,1]], "meta": {...}}\\n
    <4 * nx * ny * nz payload bytes>

The header is self-describing and the payload is a plain little-endian dump,
so any language (including the browser) can read it without a volume library.
Scalar fields use dtype f32le; voxel label grids use u32le. Everything written
here is byte-deterministic: same inputs, same bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import ScalarField

__all__ = [
    "FieldFormatError",
    "FieldHeader",
    "read_field",
    "read_scalar_field",
    "write_field",
    "write_resolved_config",
    "write_convergence_csv",
]

_DTYPES = {"f32le": np.dtype("<f4"), "u32le": np.dtype("<u4")}


class FieldFormatError(ValueError):
    """Malformed field file: bad header or payload size mismatch."""

    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


@dataclass(frozen=True)
class FieldHeader:
    dims: tuple[int, int, int]  # (nx, ny, nz)
    order: str
    dtype: str
    extent: tuple
    meta: dict

    @property
    def n_values(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz


def write_field(
    path,
    values: Union[ScalarField, np.ndarray],
    dtype: str = "f32le",
    meta: Optional[dict] = None,
) -> None:
    """Write a scalar field or a label grid.

    Arrays may come flat (x-fastest) or in grid layout (nz, ny, nx) with an
    accompanying ScalarField-compatible size; ScalarFields carry their dims.
    """
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    if isinstance(values, ScalarField):
        dims = values.dims
        flat = values.values
    else:
        arr = np.asarray(values)
        if arr.ndim != 3:
            raise ValueError(f"bare arrays must be grid-shaped (nz, ny, nx), got {arr.shape}")
        nz, ny, nx = arr.shape
        dims = (nx, ny, nz)
        flat = arr.reshape(-1)
    payload = np.ascontiguousarray(flat, dtype=_DTYPES[dtype]).tobytes()
    header = {
        "dims": list(dims),
        "order": "x-fastest",
        "dtype": dtype,
        "extent": [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def read_field(path) -> tuple[FieldHeader, np.ndarray]:
    """Read any field file; returns the header and the flat payload array."""
    path = Path(path)
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            raw = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FieldFormatError(path, f"unparseable header: {exc}") from None
        for key in ("dims", "order", "dtype"):
            if key not in raw:
                raise FieldFormatError(path, f"header missing {key!r}")
        if raw["dtype"] not in _DTYPES:
            raise FieldFormatError(path, f"unknown dtype {raw['dtype']!r}")
        dims = tuple(int(d) for d in raw["dims"])
        if len(dims) != 3 or min(dims) < 1:
            raise FieldFormatError(path, f"bad dims {raw['dims']}")
        header = FieldHeader(
            dims=dims,
            order=raw["order"],
            dtype=raw["dtype"],
            extent=tuple(raw.get("extent", ((0, 0, 0), (1, 1, 1)))),
            meta=raw.get("meta", {}),
        )
        payload = fh.read()
    expected = header.n_values * 4
    if len(payload) != expected:
        raise FieldFormatError(
            path, f"payload is {len(payload)} bytes, header implies {expected}"
        )
    return header, np.frombuffer(payload, dtype=_DTYPES[header.dtype]).copy()


def read_scalar_field(path) -> tuple[ScalarField, FieldHeader]:
    """Read an f32le field file back into a ScalarField."""
    header, flat = read_field(path)
    if header.dtype != "f32le":
        raise FieldFormatError(path, f"expected f32le payload, found {header.dtype}")
    return ScalarField(header.dims, flat.astype(np.float32)), header


def write_resolved_config(path, config: dict) -> None:
    """Fully-resolved run parameters, sufficient to reproduce the run.

    Deterministic rendering (sorted keys, fixed layout, no timestamps) so a
    rerun with equal inputs rewrites equal bytes.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(config, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_convergence_csv(path, series) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,relative_change\n")
        for step, value in enumerate(series):
            fh.write(f"{step},{float(value)!r}\n")
