"""Spectral cube containers and their on-disk formats.

Cube files (``.rfcb``) are a small little-endian container::

    offset  size            field
    0       4               magic b"RFCB"
    4       2   u16         format version (1)
    6       1   u8          dtype code: 0 = real64, 1 = complex128
    7       1   u8          reserved, 0
    8       8   u64         rows
    16      8   u64         cols
    24      8   u64         n_freq
    32      4   u32         n_masks
    36      8*n_freq f64    frequency axis (cm^-1), strictly increasing
    ...     per mask: u16 name length, utf-8 name, rows*cols u8 (0/1)
    ...     payload: rows*cols*n_freq samples, pixel-row-major,
            spectrum-contiguous; complex samples are (re, im) pairs

See docs/formats.md for the full description.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import FormatError, InvalidInputError, InvalidReferenceError

CUBE_MAGIC = b"RFCB"
CUBE_VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<c16")}
_CODES = {"f": 0, "c": 1}
_FIXED = struct.Struct("<4sHBBQQQI")


@dataclass
class SpectralCube:
    """A rows x cols image of spectra sampled on a shared frequency axis.

    ``data`` has shape (rows, cols, n_freq) and is float64 for raw CARS
    intensities or complex128 for retrieved K_CARS spectra.
    """

    data: np.ndarray
    freq: np.ndarray
    masks: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.freq = np.ascontiguousarray(self.freq, dtype=float)
        if self.data.ndim != 3:
            raise InvalidInputError(f"cube data must be 3-D, got shape {self.data.shape}")
        if self.data.dtype.kind not in "fc":
            self.data = self.data.astype(float)
        if self.freq.ndim != 1 or self.freq.shape[0] != self.data.shape[2]:
            raise InvalidInputError("frequency axis length does not match cube")
        if self.freq.shape[0] > 1 and not np.all(np.diff(self.freq) > 0):
            raise InvalidInputError("frequency axis must be strictly increasing")
        masks = {}
        for name, mask in self.masks.items():
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != self.data.shape[:2]:
                raise InvalidInputError(f"mask {name!r} has shape {mask.shape}")
            masks[name] = mask
        self.masks = masks

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    @property
    def n_freq(self):
        return self.data.shape[2]

    @property
    def n_spectra(self):
        return self.rows * self.cols

    @property
    def is_complex(self):
        return self.data.dtype.kind == "c"

    def flat(self):
        """(rows*cols, n_freq) view of the spectra."""
        return self.data.reshape(-1, self.n_freq)

    @classmethod
    def from_flat(cls, spectra, rows, cols, freq, masks=None):
        spectra = np.asarray(spectra)
        return cls(spectra.reshape(rows, cols, spectra.shape[-1]), freq, dict(masks or {}))

    def crop(self, row_slice=slice(None), col_slice=slice(None)):
        """Sub-rectangle of the image, masks cropped alongside."""
        return SpectralCube(
            np.ascontiguousarray(self.data[row_slice, col_slice]),
            self.freq,
            {k: v[row_slice, col_slice] for k, v in self.masks.items()},
        )

    def mask_bounds(self, name):
        """Bounding rectangle (row slice, col slice) of a named mask."""
        mask = self.masks[name]
        r = np.flatnonzero(mask.any(axis=1))
        c = np.flatnonzero(mask.any(axis=0))
        if r.size == 0:
            raise InvalidInputError(f"mask {name!r} is empty")
        return slice(r[0], r[-1] + 1), slice(c[0], c[-1] + 1)


@dataclass
class ReferenceSpectrum:
    """Surrogate-material CARS spectrum used in place of the sample NRB."""

    freq: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.freq = np.ascontiguousarray(self.freq, dtype=float)
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.freq.shape != self.values.shape or self.freq.ndim != 1:
            raise InvalidInputError("reference axis and values must be equal-length vectors")

    def check_axis(self, freq):
        freq = np.asarray(freq, dtype=float)
        if freq.shape != self.freq.shape or not np.array_equal(freq, self.freq):
            raise InvalidInputError("reference frequency axis does not match the cube")

    def check_positive(self):
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0):
            raise InvalidReferenceError("reference spectrum must be finite and strictly positive")


# --------------------------------------------------------------------------- #
# binary cube files
# --------------------------------------------------------------------------- #

def _header_bytes(rows, cols, freq, dtype_code, masks):
    parts = [_FIXED.pack(CUBE_MAGIC, CUBE_VERSION, dtype_code, 0,
                         rows, cols, len(freq), len(masks)),
             np.asarray(freq, dtype="<f8").tobytes()]
    for name, mask in masks.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(np.asarray(mask, dtype="u1").tobytes())
    return b"".join(parts)


def _dtype_code(data):
    code = _CODES.get(np.asarray(data).dtype.kind)
    if code is None:
        raise InvalidInputError(f"unsupported cube dtype {data.dtype}")
    return code


def write_cube(path, cube: SpectralCube):
    """Write a cube to `path` in the RFCB format."""
    code = _dtype_code(cube.data)
    header = _header_bytes(cube.rows, cube.cols, cube.freq, code, cube.masks)
    payload = np.ascontiguousarray(cube.data, dtype=_DTYPES[code])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


class CubeWriter:
    """Streams pixel rows of a cube to disk; used for chunked processing."""

    def __init__(self, path, rows, cols, freq, complex_=True, masks=None):
        self.rows, self.cols, self.n_freq = int(rows), int(cols), len(freq)
        self.dtype = _DTYPES[1 if complex_ else 0]
        self._written = 0
        self._fh = open(path, "wb")
        self._fh.write(_header_bytes(self.rows, self.cols, freq, 1 if complex_ else 0,
                                     dict(masks or {})))

    def write(self, block):
        """Append image rows, `block` shaped (r, cols, n_freq)."""
        block = np.ascontiguousarray(block, dtype=self.dtype)
        if block.ndim != 3 or block.shape[1:] != (self.cols, self.n_freq):
            raise InvalidInputError(f"block shape {block.shape} does not fit the cube")
        self._fh.write(block.tobytes())
        self._written += block.shape[0]

    def close(self):
        self._fh.close()
        if self._written != self.rows:
            raise FormatError(f"wrote {self._written} of {self.rows} rows")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()


@dataclass
class CubeHeader:
    rows: int
    cols: int
    n_freq: int
    dtype: np.dtype
    freq: np.ndarray
    masks: Dict[str, np.ndarray]
    payload_offset: int

    @property
    def bytes_per_row(self):
        return self.cols * self.n_freq * self.dtype.itemsize


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def read_header(fh) -> CubeHeader:
    magic, version, code, _, rows, cols, n_freq, n_masks = _FIXED.unpack(
        _read_exact(fh, _FIXED.size, "header"))
    if magic != CUBE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CUBE_MAGIC!r}")
    if version != CUBE_VERSION:
        raise FormatError(f"unsupported cube format version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    freq = np.frombuffer(_read_exact(fh, 8 * n_freq, "frequency axis"), dtype="<f8").astype(float)
    if n_freq > 1 and not np.all(np.diff(freq) > 0):
        raise FormatError("frequency axis is not strictly increasing")
    masks = {}
    for _ in range(n_masks):
        (length,) = struct.unpack("<H", _read_exact(fh, 2, "mask name length"))
        name = _read_exact(fh, length, "mask name").decode("utf-8")
        raw = np.frombuffer(_read_exact(fh, rows * cols, "mask"), dtype="u1")
        masks[name] = raw.reshape(rows, cols).astype(bool)
    return CubeHeader(rows, cols, n_freq, _DTYPES[code], freq, masks, fh.tell())


def read_cube(path, row_range: Optional[Tuple[int, int]] = None) -> SpectralCube:
    """Read a cube, optionally only image rows ``[start, stop)``."""
    with open(path, "rb") as fh:
        header = read_header(fh)
        fh.seek(0, os.SEEK_END)
        payload = fh.tell() - header.payload_offset
        if payload != header.rows * header.bytes_per_row:
            raise FormatError(
                f"payload is {payload} bytes, header implies {header.rows * header.bytes_per_row}")
        start, stop = (0, header.rows) if row_range is None else row_range
        if not 0 <= start <= stop <= header.rows:
            raise InvalidInputError(f"row range {row_range} outside [0, {header.rows}]")
        fh.seek(header.payload_offset + start * header.bytes_per_row)
        count = (stop - start) * header.cols * header.n_freq
        data = np.frombuffer(_read_exact(fh, count * header.dtype.itemsize, "payload"),
                             dtype=header.dtype, count=count)
    data = data.astype(header.dtype.newbyteorder("="))
    masks = {k: v[start:stop] for k, v in header.masks.items()}
    return SpectralCube(data.reshape(stop - start, header.cols, header.n_freq), header.freq, masks)


def iter_cube_rows(path, chunk_rows):
    """Yield ``(start, cube_chunk)`` over the image rows of a cube file."""
    with open(path, "rb") as fh:
        header = read_header(fh)
    for start in range(0, header.rows, chunk_rows):
        stop = min(start + chunk_rows, header.rows)
        yield start, read_cube(path, (start, stop))


def peek_header(path) -> CubeHeader:
    with open(path, "rb") as fh:
        return read_header(fh)


# --------------------------------------------------------------------------- #
# reference spectra
# --------------------------------------------------------------------------- #

def parse_reference_csv(text) -> ReferenceSpectrum:
    """Parse ``wavenumber,intensity`` rows; a non-numeric first row is a header."""
    rows = [r for r in csv.reader(io.StringIO(text.replace("\r\n", "\n").replace("\r", "\n")))
            if r and any(cell.strip() for cell in r)]
    values = []
    for i, row in enumerate(rows):
        if len(row) < 2:
            raise FormatError(f"reference row {i + 1} needs two columns")
        try:
            values.append((float(row[0]), float(row[1])))
        except ValueError:
            if i == 0:
                continue
            raise FormatError(f"non-numeric reference row {i + 1}: {row!r}") from None
    if not values:
        raise FormatError("reference file holds no data rows")
    arr = np.array(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise FormatError("reference contains non-finite values")
    if arr.shape[0] > 1 and not np.all(np.diff(arr[:, 0]) > 0):
        raise FormatError("reference wavenumber axis is not strictly increasing")
    if np.any(arr[:, 1] <= 0):
        raise FormatError("reference intensities must be strictly positive")
    return ReferenceSpectrum(arr[:, 0], arr[:, 1])


def read_reference_csv(path) -> ReferenceSpectrum:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_reference_csv(fh.read())


def write_reference_csv(path, ref: ReferenceSpectrum):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("wavenumber,intensity\n")
        for w, v in zip(ref.freq, ref.values):
            fh.write(f"{float(w)!r},{float(v)!r}\n")


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
