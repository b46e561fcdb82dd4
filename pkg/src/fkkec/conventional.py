"""Per-spectrum Kramers-Kronig retrieval with phase- and scale-error correction.

This is the reference workflow: SVD-denoise the raw cube, then for every
spectrum retrieve K(w) with the KK relation, remove the phase error found by
ALS detrending, and divide out the scale error with a trendline of the real
part.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cubeio import ReferenceSpectrum, SpectralCube
from .errors import InvalidInputError, InvalidReferenceError
from .numerics import (AlsParams, als_detrend_rows, hilbert, rank_cutoff,
                       savgol_trend, svd_reduced)
from .timing import NULL_TIMER

INTENSITY_FLOOR = 1e-8


class ScaleErrorWarning(UserWarning):
    """The SEC trendline was not strictly positive; the global mean was used."""


def clamp_intensity(i_cars, floor=INTENSITY_FLOOR):
    """Clip each spectrum from below at ``floor * max(spectrum)``."""
    i_cars = np.asarray(i_cars, dtype=float)
    peak = i_cars.max(axis=-1, keepdims=True)
    peak = np.where(peak > 0, peak, 1.0)
    return np.maximum(i_cars, floor * peak)


def half_log_ratio(i_cars, i_ref, floor=INTENSITY_FLOOR):
    """``0.5*ln(I_CARS/I_ref)`` with the intensity floor applied."""
    i_ref = np.asarray(i_ref, dtype=float)
    if not np.all(np.isfinite(i_ref)) or np.any(i_ref <= 0):
        raise InvalidReferenceError("reference spectrum must be finite and strictly positive")
    i_cars = np.asarray(i_cars, dtype=float)
    if i_cars.shape[-1] != i_ref.shape[-1]:
        raise InvalidInputError("CARS and reference spectra differ in length")
    if not np.all(np.isfinite(i_cars)):
        raise InvalidInputError("CARS spectrum contains NaN or Inf")
    return 0.5 * np.log(clamp_intensity(i_cars, floor) / i_ref)


def kk(i_cars, i_ref, floor=INTENSITY_FLOOR):
    """Kramers-Kronig retrieval of ``K = sqrt(I/I_ref) * exp(i*H{0.5*ln(I/I_ref)})``.

    Works on a single spectrum or on the rows of a 2-D array.
    """
    log_amp = half_log_ratio(i_cars, i_ref, floor)
    return np.exp(log_amp + 1j * hilbert(log_amp))


@dataclass
class PecResult:
    corrected: np.ndarray
    phi_err: np.ndarray


def retrieved_phase(k):
    return np.unwrap(np.angle(k), axis=-1)


def pec(k, als: Optional[AlsParams] = None):
    """Phase-error correction.

    The phase error is the ALS baseline of the retrieved phase; the
    spectrum is multiplied by ``exp(H{phi_err}) * exp(-i*phi_err)`` so the
    amplitude error tied to it by the KK relation is removed as well.
    """
    k = np.asarray(k, dtype=complex)
    phi_err = als_detrend_rows(retrieved_phase(k), als).reshape(k.shape)
    corrected = k * np.exp(hilbert(phi_err) - 1j * phi_err)
    return PecResult(corrected, phi_err)


def sec(pec_out, window=None, order=2):
    """Scale-error correction: divide by a trendline of the real part.

    Rows whose trendline is not strictly positive fall back to the mean of
    the real part, with a :class:`ScaleErrorWarning`.
    """
    corrected = pec_out.corrected if isinstance(pec_out, PecResult) else np.asarray(pec_out)
    trend = savgol_trend(corrected.real, window, order, axis=-1)
    bad = np.any(trend <= 0, axis=-1)
    if np.any(bad):
        warnings.warn("scale-error trendline not positive; using the mean of Re{K}",
                      ScaleErrorWarning, stacklevel=2)
        mean = np.broadcast_to(corrected.real.mean(axis=-1, keepdims=True), trend.shape)
        trend = np.where(bad[..., None] if trend.ndim > 1 else bad, mean, trend)
    return corrected / trend


@dataclass
class ConventionalOptions:
    """Knobs of the conventional workflow.

    ``rank=None`` keeps the singular values above the machine-precision
    cutoff; ``denoise=False`` skips the SVD step entirely.
    """

    denoise: bool = True
    rank: Optional[int] = None
    als: AlsParams = field(default_factory=AlsParams)
    sec_window: Optional[int] = None
    sec_order: int = 2
    floor: float = INTENSITY_FLOOR
    chunk_rows: int = 2048


def denoise_factorization(spectra, rank=None):
    """Truncated SVD of raw spectra using the machine-precision rank rule."""
    m, n = spectra.shape
    peak = float(np.max(np.abs(spectra))) if spectra.size else 0.0
    rule = rank if rank is not None else (lambda s: rank_cutoff(s, peak, m, n))
    return svd_reduced(spectra, rank=rule)


def process_spectra(spectra, i_ref, options: ConventionalOptions, timer=NULL_TIMER):
    """KK -> PEC -> SEC on already-denoised spectra, shape (m, N)."""
    with timer("kk"):
        k = kk(spectra, i_ref, options.floor)
    with timer("pec"):
        corrected = pec(k, options.als)
    with timer("sec"):
        return sec(corrected, options.sec_window, options.sec_order)


def process_conventional(cube: SpectralCube, ref: ReferenceSpectrum,
                         options: Optional[ConventionalOptions] = None, timer=NULL_TIMER):
    """Full conventional workflow on a raw CARS cube.

    Returns
    -------
    (SpectralCube, dict)
        Complex K_CARS cube and run info (retained rank).
    """
    options = options or ConventionalOptions()
    ref.check_axis(cube.freq)
    ref.check_positive()
    spectra = cube.flat()
    m, n = spectra.shape
    out = np.empty((m, n), dtype=complex)
    info = {"rank": None}
    fact = None
    if options.denoise and m > 0:
        with timer("svd"):
            fact = denoise_factorization(spectra, options.rank)
            scores = fact.U * fact.s
        info["rank"] = fact.k
    for start in range(0, m, options.chunk_rows):
        rows = slice(start, min(start + options.chunk_rows, m))
        if fact is not None:
            with timer("svd"):
                block = scores[rows] @ fact.V.T
        else:
            block = spectra[rows]
        out[rows] = process_spectra(block, ref.values, options, timer)
    return SpectralCube.from_flat(out, cube.rows, cube.cols, cube.freq, cube.masks), info
