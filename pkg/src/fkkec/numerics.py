"""Numerical kernels: Hilbert transform, reduced SVD, ALS detrending,
Savitzky-Golay trendlines and ridge regression.

All functions are pure and operate along the last axis unless noted.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg
from scipy.linalg import lapack
from scipy.signal import savgol_filter

from .errors import InvalidInputError, InvalidParameterError, NumericalError

__all__ = [
    "AlsParams",
    "Factorization",
    "als_detrend",
    "als_detrend_rows",
    "blocked_matmul",
    "default_trend_window",
    "hilbert",
    "padded_length",
    "rank_cutoff",
    "ridge_solve",
    "savgol_trend",
    "svd_reduced",
]


def _require_finite(x, name="input"):
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains NaN or Inf")


# --------------------------------------------------------------------------- #
# Hilbert transform
# --------------------------------------------------------------------------- #

def padded_length(n):
    """FFT length used by :func:`hilbert`: twice the next power of two >= n."""
    return 2 * (1 << (int(n) - 1).bit_length())


def hilbert(x, axis=-1):
    """Discrete Hilbert transform along `axis`.

    The signal is mean-centred, reflect-padded to :func:`padded_length`
    samples, transformed with the analytic-signal multiplier ``-i*sign(k)``
    and cropped back. With this convention ``hilbert(cos) == sin``, which
    makes the Kramers-Kronig phase of a positive Lorentzian resonance
    positive.

    Parameters
    ----------
    x : array_like, shape (..., N)
        Real input, N >= 4.
    axis : int, optional
        Axis holding the spectral dimension.

    Returns
    -------
    numpy.ndarray
        Real array with the same shape as `x`.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[axis] < 4:
        raise InvalidInputError("hilbert needs at least 4 samples")
    _require_finite(x, "hilbert input")
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    total = padded_length(n)
    left = (total - n) // 2
    right = total - n - left

    # constants are removed exactly before the FFT
    centred = x - x.mean(axis=-1, keepdims=True)
    pad = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    spectrum = np.fft.rfft(np.pad(centred, pad, mode="reflect"), axis=-1)
    spectrum *= -1j
    spectrum[..., 0] = 0.0
    spectrum[..., -1] = 0.0
    out = np.fft.irfft(spectrum, n=total, axis=-1)[..., left:left + n]
    return np.moveaxis(np.ascontiguousarray(out), -1, axis)


# --------------------------------------------------------------------------- #
# row-deterministic matrix product
# --------------------------------------------------------------------------- #

MATMUL_BLOCK_ROWS = 256
_COL_ALIGN = 32


def blocked_matmul(a, b, out=None, block_rows=MATMUL_BLOCK_ROWS):
    """``a @ b`` with each output row bitwise independent of the other rows.

    BLAS picks different micro-kernels for edge tiles and small problems, so
    one row can round differently depending on how many rows share a call.
    Here every call has exactly `block_rows` rows (zero-padded) and a column
    count padded to a multiple of 32, so splitting `a` into chunks never
    changes the result.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m, k = a.shape
    if b.shape[0] != k:
        raise InvalidInputError(f"shapes {a.shape} and {b.shape} do not align")
    n = b.shape[1]
    if out is None:
        out = np.empty((m, n))
    n_pad = n + (-n) % _COL_ALIGN
    if n_pad != n:
        bp = np.zeros((k, n_pad))
        bp[:, :n] = b
    else:
        bp = np.ascontiguousarray(b)
    buf = np.zeros((block_rows, k))
    prod = np.empty((block_rows, n_pad))
    for start in range(0, m, block_rows):
        rows = min(block_rows, m - start)
        buf[:rows] = a[start:start + rows]
        buf[rows:] = 0.0
        np.matmul(buf, bp, out=prod)
        out[start:start + rows] = prod[:rows, :n]
    return out


# --------------------------------------------------------------------------- #
# SVD
# --------------------------------------------------------------------------- #

@dataclass
class Factorization:
    """Truncated SVD ``A ~= U @ diag(s) @ V.T``.

    U is (M, k), s is (k,) descending, V is (N, k).
    """

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray

    @property
    def k(self):
        return int(self.s.shape[0])

    @property
    def Vt(self):
        return self.V.T

    def truncate(self, k):
        k = int(k)
        if not 0 <= k <= self.k:
            raise InvalidParameterError(f"cannot truncate rank {self.k} to {k}")
        return Factorization(self.U[:, :k], self.s[:k], self.V[:, :k])

    def reconstruct(self):
        return (self.U * self.s) @ self.V.T


RankRule = Union[None, int, Callable[[np.ndarray], int]]


def _resolve_rank(rank, s):
    if rank is None:
        k = s.shape[0]
    elif callable(rank):
        k = int(rank(s))
    else:
        k = int(rank)
    if not 0 <= k <= s.shape[0]:
        raise InvalidParameterError(f"rank {k} outside [0, {s.shape[0]}]")
    return k


def _tall_svd(B, rank):
    """SVD of a tall matrix (rows >= 2*cols) via Householder QR.

    Only the requested left singular vectors are formed, by applying the
    implicit Q to the small SVD factor with LAPACK ``ormqr``.
    """
    m, n = B.shape
    (qr, tau), _ = scipy.linalg.qr(B, mode="raw", check_finite=False)
    r = np.triu(qr[:n, :n])
    ur, s, vt = np.linalg.svd(r)
    k = _resolve_rank(rank, s)
    if k == 0:
        return np.zeros((m, 0)), s[:0], np.zeros((n, 0))
    c = np.zeros((m, k), order="F")
    c[:n] = ur[:, :k]
    lwork = max(1, int(k) * 64, n * 64)
    u, _, info = lapack.dormqr("L", "N", qr, tau, c, lwork=lwork, overwrite_c=1)
    if info != 0:
        raise NumericalError(f"ormqr failed with info={info}")
    return np.ascontiguousarray(u), s[:k].copy(), np.ascontiguousarray(vt[:k].T)


def svd_reduced(A, rank: RankRule = None):
    """Reduced SVD of a real matrix, optionally truncated.

    Parameters
    ----------
    A : array_like, shape (M, N)
    rank : None, int or callable, optional
        ``None`` keeps all ``min(M, N)`` triplets. An int keeps that many.
        A callable receives the full singular-value vector and returns the
        count to keep; only the kept singular vectors are materialised.

    Returns
    -------
    Factorization
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or min(A.shape) < 1:
        raise InvalidInputError(f"svd_reduced needs a non-empty 2-D matrix, got {A.shape}")
    _require_finite(A, "SVD input")
    m, n = A.shape
    try:
        if m >= 2 * n:
            u, s, v = _tall_svd(A, rank)
        elif n >= 2 * m:
            v, s, u = _tall_svd(A.T, rank)
        else:
            u_full, s, vt = np.linalg.svd(A, full_matrices=False)
            k = _resolve_rank(rank, s)
            u, s, v = u_full[:, :k], s[:k], vt[:k].T
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    return Factorization(np.ascontiguousarray(u), np.ascontiguousarray(s),
                         np.ascontiguousarray(v))


def rank_cutoff(s, max_abs_A, M, N, epsilon=None):
    """Number of singular values strictly above ``max|A| * max(M, N) * eps``."""
    if epsilon is None:
        epsilon = np.finfo(float).eps
    threshold = float(max_abs_A) * max(int(M), int(N)) * float(epsilon)
    return int(np.count_nonzero(np.asarray(s) > threshold))


# --------------------------------------------------------------------------- #
# Asymmetric least squares
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class AlsParams:
    """Hyperparameters of asymmetric least squares baseline fitting."""

    smoothness: float = 1e4
    asymmetry: float = 1e-3
    max_iterations: int = 10
    tolerance: float = 1e-6

    def __post_init__(self):
        if not self.smoothness > 0:
            raise InvalidParameterError("ALS smoothness must be positive")
        if not 0 < self.asymmetry < 0.5:
            raise InvalidParameterError("ALS asymmetry must lie in (0, 0.5)")
        if int(self.max_iterations) < 1:
            raise InvalidParameterError("ALS max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise InvalidParameterError("ALS tolerance must be positive")


@functools.lru_cache(maxsize=32)
def _penalty_bands(n, smoothness):
    # upper banded storage of smoothness * D2.T @ D2, D2 the second difference
    main = np.full(n, 6.0)
    main[[0, -1]] = 1.0
    main[[1, -2]] = 5.0
    first = np.full(n - 1, -4.0)
    first[[0, -1]] = -2.0
    second = np.ones(n - 2)
    bands = np.zeros((3, n))
    bands[0, 2:] = second
    bands[1, 1:] = first
    bands[2] = main
    bands *= smoothness
    bands.flags.writeable = False
    return bands


def als_detrend(y, params: Optional[AlsParams] = None):
    """Asymmetric least squares baseline of a single spectrum.

    Minimises ``sum w*(y-b)**2 + smoothness*sum((diff(b, 2))**2)`` with
    weights ``asymmetry`` above the baseline and ``1-asymmetry`` below,
    re-weighting until the relative weight change drops under
    ``tolerance`` or ``max_iterations`` solves have been done.

    Returns
    -------
    numpy.ndarray
        The baseline, same length as `y`.
    """
    params = params or AlsParams()
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] < 8:
        raise InvalidInputError("als_detrend needs a 1-D spectrum with >= 8 samples")
    _require_finite(y, "ALS input")
    n = y.shape[0]
    bands = _penalty_bands(n, float(params.smoothness))
    p = params.asymmetry
    w = np.ones(n)
    baseline = y
    for _ in range(int(params.max_iterations)):
        ab = bands.copy()
        ab[2] += w
        try:
            baseline = scipy.linalg.solveh_banded(
                ab, w * y, overwrite_ab=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"ALS penalty system is singular: {exc}") from exc
        w_new = np.where(y > baseline, p, 1.0 - p)
        change = np.linalg.norm(w_new - w) / np.linalg.norm(w)
        w = w_new
        if change < params.tolerance:
            break
    return baseline


def als_detrend_rows(Y, params: Optional[AlsParams] = None):
    """Apply :func:`als_detrend` to every row of a 2-D array."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    out = np.empty_like(Y)
    for i, row in enumerate(Y):
        out[i] = als_detrend(row, params)
    return out


# --------------------------------------------------------------------------- #
# Savitzky-Golay trendline
# --------------------------------------------------------------------------- #

def default_trend_window(n):
    """Nearest odd integer to 0.75*n, clamped to [5, n] (kept odd)."""
    w = 2 * int(round((0.75 * n - 1) / 2)) + 1
    top = n if n % 2 else n - 1
    return int(min(max(w, 5), top))


def savgol_trend(y, window=None, order=2, axis=-1):
    """Large-window, low-order Savitzky-Golay trendline.

    Edges are handled by fitting a polynomial to the first/last window.
    A window longer than the signal is clamped to the longest odd length.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[axis]
    if window is None:
        window = default_trend_window(n)
    window = int(window)
    if window % 2 == 0:
        raise InvalidParameterError("Savitzky-Golay window must be odd")
    top = n if n % 2 else n - 1
    window = min(window, top)
    if int(order) >= window:
        raise InvalidParameterError(
            f"Savitzky-Golay order {order} must be smaller than window {window}")
    return savgol_filter(y, window, int(order), axis=axis, mode="interp")


# --------------------------------------------------------------------------- #
# Ridge regression
# --------------------------------------------------------------------------- #

def ridge_solve(X, Y, lam=0.0):
    """Solve ``(X.T X + lam I) B = X.T Y`` for B.

    Parameters
    ----------
    X : array_like, shape (p, k)
    Y : array_like, shape (p, n) or (p,)
    lam : float
        Non-negative regularisation weight.

    Returns
    -------
    numpy.ndarray, shape (k, n) or (k,)
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.shape[0] != X.shape[0]:
        raise InvalidInputError(f"ridge_solve shape mismatch: X {X.shape}, Y {Y.shape}")
    if lam < 0:
        raise InvalidParameterError("ridge lambda must be non-negative")
    _require_finite(X, "ridge design matrix")
    _require_finite(Y, "ridge targets")
    k = X.shape[1]
    if lam == 0 and np.linalg.matrix_rank(X) < k:
        raise NumericalError(
            "design matrix is rank deficient with lambda=0; increase lambda")
    gram = X.T @ X
    gram[np.diag_indices(k)] += lam
    try:
        factor = scipy.linalg.cho_factor(gram, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"ridge system is singular; increase lambda ({exc})") from exc
    return scipy.linalg.cho_solve(factor, X.T @ Y, check_finite=False)
