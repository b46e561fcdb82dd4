"""Synthetic CARS phantoms with known Raman-to-NRB ground truth.

Each chemical is a sum of complex Lorentzians on top of a real, non-negative
polynomial nonresonant susceptibility. Pixels mix chemicals linearly at the
susceptibility level and the detected intensity is ``|C_st * chi|**2`` with
a constant system response.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cubeio import ReferenceSpectrum, SpectralCube
from .errors import InvalidParameterError
from .numerics import hilbert

_CHUNK = 4096


@dataclass
class PhantomConfig:
    """Parameters of a synthetic phantom.

    Image size is ``round(base_rows*side_scale) x round(base_cols*side_scale)``.
    ``train_rect`` is the (row0, row1, col0, col1) fraction of the image
    flagged as the training region.
    """

    n_chemicals: int = 3
    base_rows: int = 74
    base_cols: int = 246
    side_scale: float = 1.0
    freq_start: float = -500.0
    freq_end: float = 2500.0
    n_freq: int = 810
    peak_band: Tuple[float, float] = (500.0, 1700.0)
    rng_seed: int = 0
    nrb_mode: str = "polynomial"
    ref_mode: str = "linear_polynomial"
    peak_count_range: Tuple[int, int] = (5, 30)
    peak_counts: Optional[Tuple[int, ...]] = None
    amplitude_max: float = 1.0
    width_range: Tuple[float, float] = (5.0, 25.0)
    nrb_offset_range: Tuple[float, float] = (0.5, 1.0)
    nrb_coef_range: Tuple[float, float] = (0.0, 1.0)
    ref_offset_range: Tuple[float, float] = (0.5, 1.0)
    ref_slope_range: Tuple[float, float] = (0.0, 0.5)
    c_st: float = 1.0
    blob_centers: Optional[Tuple[Tuple[float, float], ...]] = None
    blob_width: float = 0.3
    blob_floor: float = 1e-3
    train_rect: Tuple[float, float, float, float] = (0.0, 1.0, 0.4, 0.6)

    def __post_init__(self):
        if self.n_chemicals < 0:
            raise InvalidParameterError("n_chemicals must be >= 0")
        if self.base_rows < 0 or self.base_cols < 0 or not self.side_scale > 0:
            raise InvalidParameterError("image size parameters must be positive")
        if not self.freq_start < self.freq_end or self.n_freq < 8:
            raise InvalidParameterError("need freq_start < freq_end and n_freq >= 8")
        lo, hi = self.peak_band
        if not self.freq_start <= lo <= hi <= self.freq_end:
            raise InvalidParameterError("peak_band must lie inside the frequency range")
        if self.nrb_mode not in ("polynomial", "constant"):
            raise InvalidParameterError(f"unknown nrb_mode {self.nrb_mode!r}")
        if self.ref_mode not in ("linear_polynomial", "constant"):
            raise InvalidParameterError(f"unknown ref_mode {self.ref_mode!r}")
        a, b = self.peak_count_range
        if not 0 <= a <= b:
            raise InvalidParameterError("peak_count_range must satisfy 0 <= lo <= hi")
        if self.peak_counts is not None and len(self.peak_counts) != self.n_chemicals:
            raise InvalidParameterError("peak_counts needs one entry per chemical")
        if not self.amplitude_max > 0 or not 0 < self.width_range[0] <= self.width_range[1]:
            raise InvalidParameterError("peak amplitudes and widths must be positive")
        if self.nrb_offset_range[0] <= 0 or self.nrb_coef_range[0] < 0:
            raise InvalidParameterError("NRB coefficients must be non-negative with a positive offset")
        if self.ref_offset_range[0] <= 0 or self.ref_slope_range[0] < 0:
            raise InvalidParameterError("reference coefficients must be non-negative with a positive offset")
        r0, r1, c0, c1 = self.train_rect
        if not (0 <= r0 < r1 <= 1 and 0 <= c0 < c1 <= 1):
            raise InvalidParameterError("train_rect fractions must satisfy 0 <= lo < hi <= 1")

    @property
    def rows(self):
        return int(round(self.base_rows * self.side_scale))

    @property
    def cols(self):
        return int(round(self.base_cols * self.side_scale))

    @property
    def n_spectra(self):
        return self.rows * self.cols

    def freq(self):
        return np.linspace(self.freq_start, self.freq_end, self.n_freq)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("peak_band", "peak_count_range", "width_range", "nrb_offset_range",
                    "nrb_coef_range", "ref_offset_range", "ref_slope_range", "train_rect"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        if d.get("peak_counts") is not None:
            d["peak_counts"] = tuple(d["peak_counts"])
        if d.get("blob_centers") is not None:
            d["blob_centers"] = tuple(tuple(c) for c in d["blob_centers"])
        return cls(**d)


@dataclass
class LorentzianPeak:
    amplitude: float
    center: float
    width: float


@dataclass
class ChemicalSpecies:
    """Pure constituent: Lorentzian resonances plus a real NRB susceptibility."""

    peaks: List[LorentzianPeak]
    chi_nr: np.ndarray

    def chi_r(self, freq):
        freq = np.asarray(freq, dtype=float)
        out = np.zeros(freq.shape, dtype=complex)
        for p in self.peaks:
            out += p.amplitude / (p.center - freq - 1j * p.width)
        return out

    def chi(self, freq):
        return self.chi_r(freq) + self.chi_nr


@dataclass
class GroundTruth:
    """Known quantities behind a phantom.

    Per-pixel arrays are derived on demand from the concentration map so
    large phantoms do not hold several M x N copies in memory.
    """

    concentrations: np.ndarray          # (rows, cols, n_chemicals)
    species: List[ChemicalSpecies]
    freq: np.ndarray
    reference: ReferenceSpectrum
    c_st: float = 1.0
    masks: dict = field(default_factory=dict)

    @property
    def flat_concentrations(self):
        return self.concentrations.reshape(-1, self.concentrations.shape[-1])

    @cached_property
    def chi_r_species(self):
        """(n_chemicals, N) resonant susceptibilities of the pure constituents."""
        n = self.freq.shape[0]
        return np.stack([s.chi_r(self.freq) for s in self.species]) if self.species \
            else np.zeros((0, n), dtype=complex)

    @cached_property
    def chi_nr_species(self):
        n = self.freq.shape[0]
        return np.stack([s.chi_nr for s in self.species]) if self.species else np.zeros((0, n))

    def chi_nr(self, rows=slice(None)):
        """Per-pixel nonresonant susceptibility, shape (m, N)."""
        return self.flat_concentrations[rows] @ self.chi_nr_species

    def chi(self, rows=slice(None)):
        conc = self.flat_concentrations[rows]
        return conc @ self.chi_r_species + conc @ self.chi_nr_species

    def nrb(self, rows=slice(None)):
        """I_NRB per pixel."""
        return np.abs(self.c_st * self.chi_nr(rows)) ** 2

    @cached_property
    def im_chi_ratio(self):
        """True Im{chi/chi_nr} per pixel, shape (M, N)."""
        m = self.flat_concentrations.shape[0]
        out = np.empty((m, self.freq.shape[0]))
        for start in range(0, m, _CHUNK):
            rows = slice(start, min(start + _CHUNK, m))
            out[rows] = (self.chi(rows) / self.chi_nr(rows)).imag
        return out

    def error_model(self, rows=slice(None)):
        """(Xi per pixel, xi per pixel and frequency) with I_ref = Xi*xi*I_NRB.

        Xi is the spectral mean of I_ref/I_NRB, so xi has unit mean.
        """
        ratio = self.reference.values / self.nrb(rows)
        scale = ratio.mean(axis=-1)
        return scale, ratio / scale[:, None]

    def phase_error(self, rows=slice(None)):
        """Phase error H{1/2 ln(1/(Xi*xi))} introduced by the surrogate reference."""
        scale, shape = self.error_model(rows)
        return hilbert(-0.5 * np.log(scale[:, None] * shape))


def _blob_centers(n):
    if n == 3:
        return ((0.3, 0.2), (0.7, 0.5), (0.3, 0.8))
    return tuple((0.3 if i % 2 == 0 else 0.7, (i + 0.5) / max(n, 1)) for i in range(n))


def concentration_map(config: PhantomConfig):
    """Smooth mixture map from overlapping 2-D Gaussians, summing to one."""
    rows, cols, n = config.rows, config.cols, config.n_chemicals
    y = (np.arange(rows) + 0.5) / max(rows, 1)
    x = (np.arange(cols) + 0.5) / max(cols, 1)
    yy, xx = np.meshgrid(y, x, indexing="ij")
    centers = config.blob_centers or _blob_centers(n)
    if len(centers) != n:
        raise InvalidParameterError("blob_centers needs one entry per chemical")
    fields = np.stack(
        [np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * config.blob_width ** 2))
         for cy, cx in centers], axis=-1) if n else np.zeros((rows, cols, 0))
    fields += config.blob_floor
    return fields / fields.sum(axis=-1, keepdims=True) if n else fields


def train_mask(config: PhantomConfig):
    r0, r1, c0, c1 = config.train_rect
    mask = np.zeros((config.rows, config.cols), dtype=bool)
    rs = slice(int(np.floor(r0 * config.rows)), int(np.ceil(r1 * config.rows)))
    cs = slice(int(np.floor(c0 * config.cols)), int(np.ceil(c1 * config.cols)))
    mask[rs, cs] = True
    return mask


def draw_species(config: PhantomConfig, rng, freq):
    x = (freq - config.freq_start) / (config.freq_end - config.freq_start)
    species = []
    for c in range(config.n_chemicals):
        if config.peak_counts is not None:
            n_peaks = int(config.peak_counts[c])
        else:
            n_peaks = int(rng.integers(config.peak_count_range[0], config.peak_count_range[1] + 1))
        amps = config.amplitude_max * (1.0 - rng.random(n_peaks))
        centers = rng.uniform(*config.peak_band, size=n_peaks)
        widths = rng.uniform(*config.width_range, size=n_peaks)
        offset = rng.uniform(*config.nrb_offset_range)
        c1, c2 = rng.uniform(*config.nrb_coef_range, size=2)
        if config.nrb_mode == "constant":
            chi_nr = np.full_like(freq, offset)
        else:
            chi_nr = offset + c1 * x + c2 * x ** 2
        peaks = [LorentzianPeak(float(a), float(o), float(g)) for a, o, g in zip(amps, centers, widths)]
        species.append(ChemicalSpecies(peaks, chi_nr))
    r0 = rng.uniform(*config.ref_offset_range)
    r1 = rng.uniform(*config.ref_slope_range)
    chi_ref = np.full_like(freq, r0) if config.ref_mode == "constant" else r0 + r1 * x
    return species, chi_ref


def generate_phantom(config: PhantomConfig, concentrations=None):
    """Build a phantom cube, its reference spectrum and the ground truth.

    Parameters
    ----------
    config : PhantomConfig
    concentrations : array_like, optional
        (rows, cols, n_chemicals) map replacing the default Gaussian mixture.

    Returns
    -------
    (SpectralCube, ReferenceSpectrum, GroundTruth)
    """
    rng = np.random.default_rng(config.rng_seed)
    freq = config.freq()
    species, chi_ref = draw_species(config, rng, freq)
    if concentrations is None:
        conc = concentration_map(config)
    else:
        conc = np.asarray(concentrations, dtype=float)
        if conc.shape != (config.rows, config.cols, config.n_chemicals):
            raise InvalidParameterError(f"concentrations shape {conc.shape} does not match config")
    reference = ReferenceSpectrum(freq, np.abs(config.c_st * chi_ref) ** 2)
    masks = {"train": train_mask(config)}
    truth = GroundTruth(conc, species, freq, reference, config.c_st, masks)

    m = config.n_spectra
    intensities = np.empty((m, config.n_freq))
    for start in range(0, m, _CHUNK):
        rows = slice(start, min(start + _CHUNK, m))
        intensities[rows] = np.abs(config.c_st * truth.chi(rows)) ** 2
    cube = SpectralCube.from_flat(intensities, config.rows, config.cols, freq, masks)
    return cube, reference, truth


def add_noise(cube: SpectralCube, alpha, sigma_g, rng_seed=0):
    """Mixed Poisson-Gaussian noise: ``alpha*Poisson(I/alpha) + N(0, sigma_g**2)``."""
    if alpha < 0 or sigma_g < 0:
        raise InvalidParameterError("alpha and sigma_g must be non-negative")
    data = cube.data
    if alpha == 0 and sigma_g == 0:
        return SpectralCube(data.copy(), cube.freq, dict(cube.masks))
    if np.any(data < 0):
        raise InvalidParameterError("noise model needs non-negative intensities")
    rng = np.random.default_rng(rng_seed)
    out = alpha * rng.poisson(data / alpha) if alpha > 0 else data.astype(float)
    out = np.asarray(out, dtype=float)
    if sigma_g > 0:
        out = out + rng.normal(0.0, sigma_g, size=data.shape)
    return SpectralCube(out, cube.freq, dict(cube.masks))


def pure_species_cube(truth: GroundTruth, index, shape=(1, 1)):
    """Cube whose every pixel is the pure constituent `index`."""
    sp = truth.species[index]
    spectrum = np.abs(truth.c_st * sp.chi(truth.freq)) ** 2
    return SpectralCube(np.broadcast_to(spectrum, shape + spectrum.shape).copy(), truth.freq)


def side_scaled(config: PhantomConfig, scale) -> PhantomConfig:
    d = config.to_dict()
    d["side_scale"] = float(scale)
    return PhantomConfig.from_dict(d)


SIDE_SCALES: Sequence[float] = (0.5, 1.0, 2.0, 3.0, 4.0)
