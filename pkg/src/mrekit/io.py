"""File formats: .cgrid grids, 16-bit PGM previews, CSV and JSON output.

A .cgrid file is one UTF-8 JSON header line terminated by "\n", followed
by a raw row-major little-endian float64 payload. Complex kinds store
interleaved (re, im) pairs; real kinds store one float per pixel; masks
store 0.0/1.0. The header carries format_version, dims, spacing_mm and
kind, plus optional frequency_hz and direction_label.

All writers are atomic (temp file + rename) and timestamp-free so that
reruns with identical inputs are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from typing import Iterable, Sequence

import numpy as np

from .grid import ComplexGrid, GridGeom

FORMAT_VERSION = 1

COMPLEX_KINDS = ("displacement", "mr_image")
REAL_KINDS = ("wavenumber_re", "wavenumber_im", "modulus_re", "modulus_im", "mask")
ALL_KINDS = COMPLEX_KINDS + REAL_KINDS


class FileFormatError(Exception):
    """Base class for .cgrid read failures."""


class HeaderError(FileFormatError):
    """Header line is not valid JSON or is missing required fields."""


class VersionError(FileFormatError):
    """Header declares an unsupported format_version."""


class PayloadLengthError(FileFormatError):
    """Payload byte count disagrees with the header dims."""


def _atomic_write_bytes(path, data: bytes):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, compact separators, no NaN."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True, allow_nan=False)


def config_digest(obj) -> str:
    """sha256 hex digest of the canonical JSON form of obj."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def write_json(path, obj):
    text = json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=True,
                      allow_nan=False) + "\n"
    _atomic_write_bytes(path, text.encode("utf-8"))


def fmt_float(x) -> str:
    """17-significant-digit decimal, enough to round-trip any float64."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]):
    """RFC-4180 CSV (CRLF line endings), floats at 17 significant digits."""
    import io as _io

    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(list(header))
    for row in rows:
        out = []
        for cell in row:
            if isinstance(cell, (float, np.floating)):
                out.append(fmt_float(cell))
            elif isinstance(cell, (int, np.integer)):
                out.append(str(int(cell)))
            else:
                out.append(str(cell))
        w.writerow(out)
    _atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def write_cgrid(path, values, geom: GridGeom, kind: str, *,
                frequency_hz: float | None = None,
                direction_label: str | None = None,
                extra: dict | None = None):
    """Write one grid. `values` may be complex or real per the kind."""
    if kind not in ALL_KINDS:
        raise ValueError(f"unknown cgrid kind {kind!r}, expected one of {ALL_KINDS}")
    header = {
        "format_version": FORMAT_VERSION,
        "dims": list(geom.dims),
        "spacing_mm": [float(s) for s in geom.spacing_mm],
        "kind": kind,
    }
    if frequency_hz is not None:
        header["frequency_hz"] = float(frequency_hz)
    if direction_label is not None:
        header["direction_label"] = str(direction_label)
    if extra:
        for k, v in extra.items():
            if k in header:
                raise ValueError(f"extra header field {k!r} collides with a core field")
            header[k] = v

    arr = np.asarray(values)
    if arr.shape != geom.dims:
        raise ValueError(f"values shape {arr.shape} != geom dims {geom.dims}")
    if kind in COMPLEX_KINDS:
        arr = np.ascontiguousarray(arr, dtype=np.complex128)
        flat = arr.view(np.float64).reshape(-1)  # interleaved re, im
    else:
        if np.iscomplexobj(arr):
            raise ValueError(f"kind {kind!r} is real but values are complex")
        flat = np.ascontiguousarray(arr, dtype=np.float64).reshape(-1)
    payload = flat.astype("<f8", copy=False).tobytes()
    head = canonical_json(header).encode("utf-8") + b"\n"
    _atomic_write_bytes(path, head + payload)


def read_cgrid(path):
    """Read a .cgrid file.

    Returns (values, geom, header). values is complex128 for complex
    kinds and float64 otherwise.
    """
    with open(path, "rb") as f:
        head_line = f.readline()
        payload = f.read()
    try:
        header = json.loads(head_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise HeaderError(f"{path}: malformed header line: {e}") from None
    if not isinstance(header, dict):
        raise HeaderError(f"{path}: header is not a JSON object")
    for field in ("format_version", "dims", "spacing_mm", "kind"):
        if field not in header:
            raise HeaderError(f"{path}: header missing field {field!r}")
    if header["format_version"] != FORMAT_VERSION:
        raise VersionError(
            f"{path}: format_version {header['format_version']} not supported "
            f"(this reader handles {FORMAT_VERSION})"
        )
    kind = header["kind"]
    if kind not in ALL_KINDS:
        raise HeaderError(f"{path}: unknown kind {kind!r}")
    dims = tuple(int(d) for d in header["dims"])
    geom = GridGeom(dims, tuple(float(s) for s in header["spacing_mm"]))
    n_floats = int(np.prod(dims)) * (2 if kind in COMPLEX_KINDS else 1)
    expected = n_floats * 8
    if len(payload) != expected:
        raise PayloadLengthError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} "
            f"for dims {list(dims)} kind {kind!r}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    if kind in COMPLEX_KINDS:
        values = flat.view(np.complex128).reshape(dims).copy()
    else:
        values = flat.reshape(dims).copy()
    return values, geom, header


def read_cgrid_complex(path) -> tuple[ComplexGrid, dict]:
    """read_cgrid restricted to complex kinds, wrapped as a ComplexGrid."""
    values, geom, header = read_cgrid(path)
    if header["kind"] not in COMPLEX_KINDS:
        raise HeaderError(
            f"{path}: expected a complex kind {COMPLEX_KINDS}, got {header['kind']!r}"
        )
    return ComplexGrid(values, geom), header


def write_pgm16(path, values, *, lo: float | None = None, hi: float | None = None):
    """16-bit binary PGM preview of a real 2D array.

    gray = round((v - lo) / (hi - lo) * 65535) with v clipped to [lo, hi].
    Non-finite pixels map to 0. The mapping is recorded in a sidecar JSON
    next to the image so gray values can be inverted back to physics.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("PGM preview requires a 2D array")
    finite = np.isfinite(arr)
    if lo is None:
        lo = float(arr[finite].min()) if finite.any() else 0.0
    if hi is None:
        hi = float(arr[finite].max()) if finite.any() else 1.0
    lo, hi = float(lo), float(hi)
    if hi <= lo:
        hi = lo + 1.0
    scaled = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
    gray = np.round(scaled * 65535.0).astype(">u2")
    gray[~finite] = 0
    ny, nx = arr.shape
    head = f"P5\n{nx} {ny}\n65535\n".encode("ascii")
    _atomic_write_bytes(path, head + gray.tobytes())
    sidecar = {
        "image": os.path.basename(os.fspath(path)),
        "lo": lo,
        "hi": hi,
        "maxval": 65535,
        "dims": [int(ny), int(nx)],
        "mapping": "gray = round((value - lo) / (hi - lo) * 65535), clipped; non-finite -> 0",
    }
    write_json(os.fspath(path) + ".json", sidecar)
