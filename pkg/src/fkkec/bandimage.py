"""Band-math pseudocolor images from retrieved Raman spectra.

A band spec is JSON::

    {"percentiles": [1, 99],
     "channels": [{"name": "DNA", "peak": 716, "baseline": [691, 738],
                   "color": [1, 1, 0]}, ...]}

Each channel value is ``Im{K}`` at the sample nearest `peak`, minus a
baseline: linear interpolation between two anchors, the value at a single
anchor, or nothing when `baseline` is absent. Channels are scaled to [0, 1]
between the given percentiles, tinted with their color and summed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence, Tuple

import numpy as np

from .cubeio import SpectralCube
from .errors import InvalidInputError, InvalidParameterError

DEFAULT_PERCENTILES = (1.0, 99.0)


class BandRangeError(InvalidParameterError):
    """A band position lies outside the cube's frequency axis."""


@dataclass(frozen=True)
class BandChannel:
    name: str
    peak: float
    color: Tuple[float, float, float]
    baseline: Tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.baseline) not in (0, 1, 2):
            raise InvalidParameterError(f"channel {self.name!r}: baseline needs 0, 1 or 2 anchors")
        if len(self.color) != 3 or not all(0 <= c <= 1 for c in self.color):
            raise InvalidParameterError(f"channel {self.name!r}: color must be 3 values in [0, 1]")


@dataclass(frozen=True)
class BandSpec:
    channels: Tuple[BandChannel, ...]
    percentiles: Tuple[float, float] = DEFAULT_PERCENTILES

    def __post_init__(self):
        lo, hi = self.percentiles
        if not 0 <= lo < hi <= 100:
            raise InvalidParameterError("percentiles must satisfy 0 <= lo < hi <= 100")
        if not self.channels:
            raise InvalidParameterError("band spec has no channels")


def parse_band_spec(obj) -> BandSpec:
    try:
        channels = tuple(
            BandChannel(str(c.get("name", f"band{i}")), float(c["peak"]),
                        tuple(float(v) for v in c["color"]),
                        tuple(float(v) for v in c.get("baseline") or ()))
            for i, c in enumerate(obj["channels"]))
        pct = tuple(float(v) for v in obj.get("percentiles", DEFAULT_PERCENTILES))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidParameterError(f"malformed band spec: {exc}") from exc
    if len(pct) != 2:
        raise InvalidParameterError("percentiles needs two values")
    return BandSpec(channels, pct)


def load_band_spec(path) -> BandSpec:
    with open(path) as fh:
        return parse_band_spec(json.load(fh))


def example_band_spec() -> BandSpec:
    """Three-band tissue example (DNA, collagen, lipids) shipped with the package."""
    text = resources.files("fkkec").joinpath("data/tissue_bands.json").read_text()
    return parse_band_spec(json.loads(text))


def _index(freq, position, name):
    if not freq[0] <= position <= freq[-1]:
        raise BandRangeError(f"band {name!r} at {position} cm-1 is outside "
                             f"[{freq[0]}, {freq[-1]}]")
    return int(np.argmin(np.abs(freq - position)))


def check_ranges(spec: BandSpec, freq):
    freq = np.asarray(freq, dtype=float)
    for ch in spec.channels:
        for pos in (ch.peak, *ch.baseline):
            _index(freq, pos, ch.name)


def band_values(cube: SpectralCube, channel: BandChannel):
    """Baseline-subtracted ``Im{K}`` at the channel peak, shape (rows, cols)."""
    freq = cube.freq
    im = cube.data.imag if cube.is_complex else cube.data
    ip = _index(freq, channel.peak, channel.name)
    value = im[..., ip].astype(float)
    if len(channel.baseline) == 1:
        value = value - im[..., _index(freq, channel.baseline[0], channel.name)]
    elif len(channel.baseline) == 2:
        ia, ib = (_index(freq, b, channel.name) for b in channel.baseline)
        wa, wb = freq[ia], freq[ib]
        t = 0.0 if wb == wa else (freq[ip] - wa) / (wb - wa)
        value = value - ((1 - t) * im[..., ia] + t * im[..., ib])
    return value


def normalize(values, percentiles: Sequence[float] = DEFAULT_PERCENTILES):
    """Scale to [0, 1] between two percentiles; a flat image maps to zeros."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values.copy()
    lo, hi = np.percentile(values, percentiles)
    if not hi > lo:
        return np.zeros_like(values)
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def render(cube: SpectralCube, spec: BandSpec, out: Optional[np.ndarray] = None):
    """RGB uint8 image (rows, cols, 3)."""
    check_ranges(spec, cube.freq)
    rgb = np.zeros((cube.rows, cube.cols, 3))
    for ch in spec.channels:
        rgb += normalize(band_values(cube, ch), spec.percentiles)[..., None] * np.asarray(ch.color)
    img = np.round(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)
    if out is not None:
        out[...] = img
        return out
    return img


def write_ppm(path, rgb):
    """Binary PPM (P6) writer."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise InvalidInputError("expected a (rows, cols, 3) uint8 image")
    rows, cols = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb).tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise InvalidInputError("not an 8-bit binary PPM")
    cols, rows = int(fields[1]), int(fields[2])
    return np.frombuffer(data, np.uint8, rows * cols * 3, pos + 1).reshape(rows, cols, 3)
