"""FLD1 field files.

Layout: the ASCII line ``FLD1``, one line of JSON header, then the values as
little-endian float64 in row-major order.  The header carries ``n_side``,
``pixel_size``, ``kind`` (``"real"`` or ``"spectrum"``) and ``length``;
spectra additionally store their bin centres and multiplicities.
"""

import json
from pathlib import Path

import numpy as np

MAGIC = b"FLD1"
KINDS = ("real", "spectrum")


def _header_bytes(header):
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("ascii")


def write_field(path, values, n_side, pixel_size, kind="real", **meta):
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    values = np.ascontiguousarray(np.asarray(values, dtype="<f8").ravel())
    if kind == "real" and values.size != n_side * n_side:
        raise ValueError("real field length must be n_side**2")
    header = {"n_side": int(n_side), "pixel_size": float(pixel_size), "kind": kind, "length": int(values.size)}
    for key, val in meta.items():
        header[key] = np.asarray(val).tolist() if isinstance(val, np.ndarray) else val
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n" + _header_bytes(header) + b"\n")
        fh.write(values.tobytes())
    return path


def write_spectrum(path, values, binning):
    return write_field(
        path,
        values,
        binning.grid.n_side,
        binning.grid.pixel_size,
        kind="spectrum",
        bin_centers=binning.bin_centers,
        multiplicities=binning.multiplicities,
    )


def read_field(path):
    """Return ``(values, header)``; real fields come back as ``(n, n)`` arrays."""
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != MAGIC:
            raise ValueError(f"{path}: not an FLD1 file")
        header = json.loads(fh.readline().decode("ascii"))
        raw = fh.read()
    values = np.frombuffer(raw, dtype="<f8").astype(float)
    if values.size != header["length"]:
        raise ValueError(f"{path}: expected {header['length']} values, found {values.size}")
    if header["kind"] == "real":
        values = values.reshape(header["n_side"], header["n_side"])
    return values, header
