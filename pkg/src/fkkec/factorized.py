"""Factorized Kramers-Kronig retrieval and error correction (fKK-EC).

The log-ratio matrix ``A[m] = f * 0.5*ln(I_m/I_ref)`` is factorized once as
``U S V^T``. Because the Hilbert transform is linear, phase retrieval, phase
error correction and scale error correction are carried out on the k rows
of ``V^T`` only, and the complex cube is assembled at the end as::

    K = exp(U S (V^T/f + H{Phi_pec} - V_sec^T)) * exp(i U S (H{V^T/f} - Phi_pec))
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .conventional import INTENSITY_FLOOR, half_log_ratio
from .cubeio import ReferenceSpectrum, SpectralCube
from .errors import InvalidInputError, InvalidParameterError
from .numerics import (AlsParams, Factorization, als_detrend_rows, blocked_matmul, hilbert,
                       rank_cutoff, ridge_solve, savgol_trend, svd_reduced)
from .timing import NULL_TIMER

DEFAULT_RIDGE_SCALE = 1e-12


def estimate_f(spectra, alpha=0.0, sigma_g=0.0):
    """Noise-scaling spectrum ``f = 2<I> / sqrt(alpha*<I> + sigma_g**2)``.

    With ``alpha == sigma_g == 0`` scaling is disabled and f is all ones.
    """
    if isinstance(spectra, SpectralCube):
        spectra = spectra.flat()
    spectra = np.asarray(spectra, dtype=float)
    n = spectra.shape[-1]
    if alpha < 0 or sigma_g < 0:
        raise InvalidParameterError("alpha and sigma_g must be non-negative")
    if alpha == 0 and sigma_g == 0:
        return np.ones(n)
    mean = spectra.reshape(-1, n).mean(axis=0)
    if np.any(mean <= 0):
        raise InvalidInputError("mean spectrum must be strictly positive for noise scaling")
    variance = alpha * mean + sigma_g ** 2
    if np.any(variance <= 0):
        raise InvalidParameterError("alpha*<I> + sigma_g**2 vanishes; disable scaling instead")
    return 2.0 * mean / np.sqrt(variance)


def build_log_ratio(spectra, i_ref, f, floor=INTENSITY_FLOOR):
    """Scaled log-ratio matrix with rows ``f * 0.5*ln(I_m/I_ref)``."""
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise InvalidInputError("noise scaling f must be strictly positive")
    a = half_log_ratio(spectra, i_ref, floor)
    a *= f
    return a


def factorize(A, rank=None):
    """SVD of the log-ratio matrix truncated at the machine-precision cutoff.

    `rank` overrides the cutoff with an explicit count.
    """
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    peak = float(np.max(np.abs(A))) if A.size else 0.0
    rule = rank if rank is not None else (lambda s: rank_cutoff(s, peak, m, n))
    return svd_reduced(A, rank=rule)


def fkk(fact: Factorization, f):
    """Hilbert transform of the scaled spectral basis, ``H{V^T/f}`` (k x N)."""
    return hilbert(fact.V.T / f)


def subsample_u(U, extras_per_column=0):
    """Row indices of U at each column's maximum and minimum.

    ``extras_per_column`` further rows per column are taken at evenly spaced
    ranks strictly between the minimum and the maximum.
    """
    U = np.asarray(U)
    if extras_per_column < 0:
        raise InvalidParameterError("extras_per_column must be >= 0")
    m, k = U.shape
    if m == 0 or k == 0:
        return np.zeros(0, dtype=int)
    picks = [np.argmax(U, axis=0), np.argmin(U, axis=0)]
    if extras_per_column:
        order = np.argsort(U, axis=0, kind="stable")
        ranks = np.round(np.arange(1, extras_per_column + 1)
                         * (m - 1) / (extras_per_column + 1)).astype(int)
        picks.append(order[ranks].ravel())
    return np.unique(np.concatenate(picks))


def default_ridge_lambda(s, scale=DEFAULT_RIDGE_SCALE):
    return scale * float(s[0]) ** 2 if len(s) else 0.0


def fpec(fact: Factorization, hilbert_v, als: Optional[AlsParams], lam, q):
    """Phase-error basis ``Phi_pec^T`` (k x N).

    The phases of the sub-sampled spectra ``X @ H{V^T/f}`` with
    ``X = U[q] S`` are detrended with ALS, and the detrended phase errors
    are regressed back onto X with ridge regularisation `lam`.
    """
    q = np.asarray(q, dtype=int)
    if len(q) < fact.k:
        warnings.warn(f"only {len(q)} sub-sampled rows for {fact.k} basis vectors; "
                      "consider extras_per_column > 0", RuntimeWarning, stacklevel=2)
    x = fact.U[q] * fact.s
    phi_err = als_detrend_rows(x @ hilbert_v, als)
    return ridge_solve(x, phi_err, lam)


def fsec(fact: Factorization, f, hilbert_phi_pec, window=None, order=2):
    """Scale-error basis: row-wise trendline of ``V^T/f + H{Phi_pec}``."""
    return savgol_trend(fact.V.T / f + hilbert_phi_pec, window, order, axis=-1)


@dataclass
class CorrectionBasis:
    """Everything fKK-EC derives on the k spectral basis vectors."""

    hilbert_v: np.ndarray
    phi_pec: np.ndarray
    hilbert_phi_pec: np.ndarray
    v_sec: np.ndarray
    ridge_lambda: float = 0.0
    q: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        k = self.hilbert_v.shape[0]
        for name in ("phi_pec", "hilbert_phi_pec", "v_sec"):
            if getattr(self, name).shape != self.hilbert_v.shape:
                raise InvalidInputError(f"{name} shape does not match hilbert_v ({k} rows)")

    @property
    def k(self):
        return self.hilbert_v.shape[0]

    def exponent_bases(self, V, f):
        """(magnitude basis, phase basis), each k x N."""
        magnitude = V.T / f + self.hilbert_phi_pec - self.v_sec
        phase = self.hilbert_v - self.phi_pec
        return magnitude, phase

    @classmethod
    def uncorrected(cls, fact: Factorization, f):
        """Basis with PEC and SEC switched off (plain fKK)."""
        hv = fkk(fact, f)
        zero = np.zeros_like(hv)
        return cls(hv, zero, zero.copy(), zero.copy())


def _exp_complex(exponents, n, out):
    amp = np.exp(exponents[:, :n])
    np.multiply(amp, np.cos(exponents[:, n:]), out=out.real)
    np.multiply(amp, np.sin(exponents[:, n:]), out=out.imag)


def reconstruct_scores(scores, magnitude_basis, phase_basis, chunk_rows=4096, out=None):
    """``exp(scores @ magnitude) * exp(i * scores @ phase)`` row-chunk by row-chunk.

    `scores` is ``U S`` (m x k). Each output row depends only on its own
    score row, bit for bit, whatever `chunk_rows` is.
    """
    m = scores.shape[0]
    n = magnitude_basis.shape[1]
    if magnitude_basis.shape != phase_basis.shape or scores.shape[1] != magnitude_basis.shape[0]:
        raise InvalidInputError("score and basis shapes are inconsistent")
    if out is None:
        out = np.empty((m, n), dtype=complex)
    both = np.hstack([magnitude_basis, phase_basis])
    for start in range(0, m, chunk_rows):
        rows = slice(start, min(start + chunk_rows, m))
        _exp_complex(blocked_matmul(scores[rows], both), n, out[rows])
    return out


def reconstruct(fact: Factorization, basis: CorrectionBasis, f, row_range=None, chunk_rows=4096):
    """Assemble K_CARS for the pixels in `row_range` (all pixels by default)."""
    if basis.k != fact.k or fact.V.shape[0] != np.shape(f)[0]:
        raise InvalidInputError("factorization, basis and f have inconsistent shapes")
    start, stop = (0, fact.U.shape[0]) if row_range is None else row_range
    if not 0 <= start <= stop <= fact.U.shape[0]:
        raise InvalidInputError(f"row range {row_range} is out of bounds")
    magnitude, phase = basis.exponent_bases(fact.V, f)
    scores = fact.U[start:stop] * fact.s
    return reconstruct_scores(scores, magnitude, phase, chunk_rows)


@dataclass
class FkkecOptions:
    """Knobs of the factorized workflow.

    ``ridge_lambda=None`` uses ``ridge_scale * s_max**2``.
    ``pec``/``sec`` switch the two corrections off for diagnostics.
    """

    alpha: float = 0.0
    sigma_g: float = 0.0
    rank: Optional[int] = None
    als: AlsParams = field(default_factory=AlsParams)
    ridge_lambda: Optional[float] = None
    ridge_scale: float = DEFAULT_RIDGE_SCALE
    extras_per_column: int = 2
    sec_window: Optional[int] = None
    sec_order: int = 2
    floor: float = INTENSITY_FLOOR
    chunk_rows: int = 4096
    pec: bool = True
    sec: bool = True


@dataclass
class FkkecFit:
    f: np.ndarray
    fact: Factorization
    basis: CorrectionBasis
    max_abs_A: float


def fit_fkkec(spectra, i_ref, options: Optional[FkkecOptions] = None, timer=NULL_TIMER):
    """Factorize and correct on the basis vectors; no reconstruction."""
    options = options or FkkecOptions()
    with timer("svd"):
        f = estimate_f(spectra, options.alpha, options.sigma_g)
        A = build_log_ratio(spectra, i_ref, f, options.floor)
        max_abs = float(np.max(np.abs(A))) if A.size else 0.0
        fact = factorize(A, options.rank)
        del A
    with timer("fkk"):
        hilbert_v = fkk(fact, f)
    lam = options.ridge_lambda
    if lam is None:
        lam = default_ridge_lambda(fact.s, options.ridge_scale)
    q = np.zeros(0, dtype=int)
    with timer("fpec"):
        if options.pec and fact.k:
            q = subsample_u(fact.U, options.extras_per_column)
            phi_pec = fpec(fact, hilbert_v, options.als, lam, q)
            hilbert_phi_pec = hilbert(phi_pec)
        else:
            phi_pec = np.zeros_like(hilbert_v)
            hilbert_phi_pec = np.zeros_like(hilbert_v)
    with timer("fsec"):
        if options.sec and fact.k:
            v_sec = fsec(fact, f, hilbert_phi_pec, options.sec_window, options.sec_order)
        else:
            v_sec = np.zeros_like(hilbert_v)
    basis = CorrectionBasis(hilbert_v, phi_pec, hilbert_phi_pec, v_sec, float(lam), q)
    return FkkecFit(f, fact, basis, max_abs)


def process_fkkec(cube: SpectralCube, ref: ReferenceSpectrum,
                  options: Optional[FkkecOptions] = None, timer=NULL_TIMER):
    """Full fKK-EC on a raw CARS cube.

    Returns
    -------
    (SpectralCube, FkkecFit)
    """
    options = options or FkkecOptions()
    ref.check_axis(cube.freq)
    ref.check_positive()
    fit = fit_fkkec(cube.flat(), ref.values, options, timer)
    with timer("reconstruct"):
        out = reconstruct(fit.fact, fit.basis, fit.f, chunk_rows=options.chunk_rows)
    return SpectralCube.from_flat(out, cube.rows, cube.cols, cube.freq, cube.masks), fit
