import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fkkec.errors import InvalidInputError, InvalidParameterError, NumericalError
from fkkec.numerics import (AlsParams, als_detrend, als_detrend_rows, blocked_matmul,
                            default_trend_window, hilbert, padded_length, rank_cutoff,
                            ridge_solve, savgol_trend, svd_reduced)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def lorentzian(w, center, width):
    return 1.0 / (center - w - 1j * width)


# --------------------------------------------------------------------------- #
# hilbert
# --------------------------------------------------------------------------- #

def test_padded_length():
    assert padded_length(4) == 8
    assert padded_length(5) == 16
    assert padded_length(810) == 2048
    assert padded_length(1024) == 2048


@given(st.integers(4, 300), finite)
def test_hilbert_annihilates_constants(n, c):
    assert np.max(np.abs(hilbert(np.full(n, c)))) < 1e-10


@given(arrays(float, (2, 57), elements=finite), finite, finite)
def test_hilbert_linear(yz, a, b):
    y, z = yz
    lhs = hilbert(a * y + b * z)
    rhs = a * hilbert(y) + b * hilbert(z)
    scale = max(1.0, abs(a) * np.abs(y).max(), abs(b) * np.abs(z).max())
    assert np.max(np.abs(lhs - rhs)) < 1e-10 * scale


def test_hilbert_lorentzian_pair():
    # Im and Re of a complex Lorentzian form a Hilbert pair
    w = np.linspace(-4000, 6000, 4001)
    chi = lorentzian(w, 1000.0, 10.0)
    out = hilbert(chi.imag)
    mid = (w > 0) & (w < 2000)
    offset = np.median(out[mid] + chi.real[mid])
    assert np.max(np.abs(out[mid] + chi.real[mid] - offset)) < 1e-3


def test_hilbert_sign_gives_positive_kk_peak():
    w = np.linspace(-500, 2500, 751)
    log_amp = 0.5 * np.log(np.abs(lorentzian(w, 1000.0, 10.0) + 0.5) ** 2 / 0.25)
    phase = hilbert(log_amp)
    assert phase[np.argmin(np.abs(w - 1000))] > 0


def test_hilbert_axis_and_errors():
    x = np.random.default_rng(0).standard_normal((5, 40))
    np.testing.assert_allclose(hilbert(x.T, axis=0), hilbert(x).T, atol=1e-14)
    with pytest.raises(InvalidInputError):
        hilbert(np.ones(3))
    with pytest.raises(InvalidInputError):
        hilbert(np.array([1.0, np.nan, 2.0, 3.0]))


# --------------------------------------------------------------------------- #
# SVD
# --------------------------------------------------------------------------- #

def test_svd_identity():
    f = svd_reduced(np.eye(3))
    np.testing.assert_allclose(f.s, 1.0)
    assert f.k == 3


def test_svd_rank_one():
    rng = np.random.default_rng(1)
    u, v = rng.standard_normal(30), rng.standard_normal(8)
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)
    f = svd_reduced(np.outer(u, v))
    assert f.s[0] == pytest.approx(1.0)
    assert np.all(f.s[1:] < 1e-14)


@pytest.mark.parametrize("shape", [(50, 20), (20, 50), (30, 25), (400, 12), (12, 400), (1, 5)])
def test_svd_orthonormal_and_reconstructs(shape):
    a = np.random.default_rng(2).standard_normal(shape)
    f = svd_reduced(a)
    k = min(shape)
    assert f.k == k
    np.testing.assert_allclose(f.U.T @ f.U, np.eye(k), atol=1e-10)
    np.testing.assert_allclose(f.V.T @ f.V, np.eye(k), atol=1e-10)
    assert np.all(np.diff(f.s) <= 0) and np.all(f.s >= 0)
    assert np.linalg.norm(f.reconstruct() - a) / np.linalg.norm(a) < 1e-12


@given(arrays(float, st.tuples(st.integers(1, 40), st.integers(1, 12)), elements=finite))
def test_svd_property(a):
    f = svd_reduced(a)
    np.testing.assert_allclose(f.V.T @ f.V, np.eye(f.k), atol=1e-10)
    norm = np.linalg.norm(a)
    if norm > 0:
        assert np.linalg.norm(f.reconstruct() - a) <= 1e-12 * norm * max(a.shape)


def test_svd_truncation_matches_full():
    a = np.random.default_rng(3).standard_normal((300, 40))
    full = svd_reduced(a)
    part = svd_reduced(a, rank=7)
    np.testing.assert_allclose(part.s, full.s[:7], rtol=1e-12)
    np.testing.assert_allclose(np.abs(part.U.T @ full.U[:, :7]), np.eye(7), atol=1e-8)


def test_truncation_monotone():
    a = np.random.default_rng(4).standard_normal((100, 20))
    f = svd_reduced(a)
    errs = [np.linalg.norm(a - f.truncate(k).reconstruct()) for k in range(f.k + 1)]
    assert all(e1 >= e2 - 1e-12 for e1, e2 in zip(errs, errs[1:]))


def test_svd_errors():
    with pytest.raises(InvalidInputError):
        svd_reduced(np.array([[1.0, np.inf]]))
    with pytest.raises(InvalidInputError):
        svd_reduced(np.zeros((0, 3)))
    with pytest.raises(InvalidParameterError):
        svd_reduced(np.eye(3), rank=4)


def test_rank_cutoff():
    assert rank_cutoff([1, 1e-10, 1e-15], 1.0, 100, 100, 2.22e-16) == 2
    assert rank_cutoff([0.0], 1.0, 5, 5) == 0
    # strictly greater: a tie at the threshold is dropped
    assert rank_cutoff([1.0, 1e-12], 1.0, 100, 1, 1e-14) == 1


# --------------------------------------------------------------------------- #
# ALS
# --------------------------------------------------------------------------- #

def dense_als(y, p: AlsParams):
    """Oracle: same iteration with a dense solve."""
    n = len(y)
    d = np.diff(np.eye(n), 2, axis=0)
    h = p.smoothness * d.T @ d
    w = np.ones(n)
    z = y
    for _ in range(p.max_iterations):
        z = np.linalg.solve(np.diag(w) + h, w * y)
        new = np.where(y > z, p.asymmetry, 1 - p.asymmetry)
        change = np.linalg.norm(new - w) / np.linalg.norm(w)
        w = new
        if change < p.tolerance:
            break
    return z


def test_als_line_and_constant():
    x = np.linspace(0, 1, 200)
    np.testing.assert_allclose(als_detrend(3 * x - 1), 3 * x - 1, atol=1e-8)
    np.testing.assert_allclose(als_detrend(np.full(200, 2.5)), 2.5, atol=1e-10)


def test_als_matches_dense_oracle():
    x = np.linspace(0, 1, 300)
    base = 0.5 + x - 0.8 * x ** 2
    peaks = sum(a / (1 + ((x - c) / 0.01) ** 2) for a, c in ((1.0, 0.2), (0.6, 0.5), (0.8, 0.75)))
    y = base + peaks
    p = AlsParams()
    z = als_detrend(y, p)
    np.testing.assert_allclose(z, dense_als(y, p), atol=1e-9)
    away = np.ones_like(x, dtype=bool)
    for c in (0.2, 0.5, 0.75):
        away &= np.abs(x - c) > 0.05
    rms = np.sqrt(np.mean((z - base)[away] ** 2)) / np.sqrt(np.mean(base[away] ** 2))
    assert rms < 0.02


@given(arrays(float, 64, elements=st.floats(-10, 10)), st.floats(-100, 100))
def test_als_shift_invariant(y, c):
    np.testing.assert_allclose(als_detrend(y + c), als_detrend(y) + c, atol=1e-8)


def test_als_rows_and_errors():
    y = np.random.default_rng(5).standard_normal((3, 50))
    rows = als_detrend_rows(y)
    for i in range(3):
        np.testing.assert_array_equal(rows[i], als_detrend(y[i]))
    with pytest.raises(InvalidInputError):
        als_detrend(np.ones(7))
    with pytest.raises(InvalidParameterError):
        AlsParams(asymmetry=0.6)
    with pytest.raises(InvalidParameterError):
        AlsParams(smoothness=0)


# --------------------------------------------------------------------------- #
# Savitzky-Golay trend
# --------------------------------------------------------------------------- #

def brute_savgol(y, window, order):
    """Oracle: explicit least-squares polynomial per window; edges fit once."""
    n, h = len(y), window // 2
    x = np.arange(n, dtype=float)
    out = np.empty(n)
    for i in range(h, n - h):
        c = np.polyfit(x[i - h:i + h + 1] - i, y[i - h:i + h + 1], order)
        out[i] = c[-1]
    for lo in (0, n - window):
        c = np.polyfit(x[lo:lo + window], y[lo:lo + window], order)
        sl = slice(0, h) if lo == 0 else slice(n - h, n)
        out[sl] = np.polyval(c, x[sl])
    return out


def test_default_trend_window():
    assert default_trend_window(810) == 607
    assert default_trend_window(100) == 75
    assert default_trend_window(6) == 5
    assert default_trend_window(5) == 5


@given(st.integers(20, 200), arrays(float, 3, elements=st.floats(-5, 5)))
def test_savgol_reproduces_polynomials(n, coef):
    x = np.linspace(-1, 1, n)
    y = np.polyval(coef, x)
    np.testing.assert_allclose(savgol_trend(y, order=2), y, atol=1e-10)


def test_savgol_constant_and_oracle():
    np.testing.assert_allclose(savgol_trend(np.full(40, 5.0), 11, 2), 5.0, atol=1e-12)
    x = np.linspace(0, 1, 400)
    y = np.sin(2 * np.pi * x) + 0.2 * np.sin(2 * np.pi * 60 * x)
    out = savgol_trend(y, 41, 2)
    np.testing.assert_allclose(out, brute_savgol(y, 41, 2), atol=1e-9)
    slow = np.sin(2 * np.pi * x)
    resid = out - slow
    assert np.std(resid[50:-50]) < 0.2 * 0.707 / 10
    assert np.max(np.abs(out[50:-50])) == pytest.approx(1.0, rel=0.05)


def test_savgol_window_rules():
    y = np.arange(10.0)
    np.testing.assert_allclose(savgol_trend(y, window=25), y, atol=1e-10)
    with pytest.raises(InvalidParameterError):
        savgol_trend(np.ones(30), 10, 2)
    with pytest.raises(InvalidParameterError):
        savgol_trend(np.ones(30), 5, 5)


# --------------------------------------------------------------------------- #
# ridge
# --------------------------------------------------------------------------- #

def test_ridge_identity():
    y = np.random.default_rng(6).standard_normal((4, 3))
    np.testing.assert_allclose(ridge_solve(np.eye(4), y, 0.0), y, atol=1e-14)


def test_ridge_lstsq_oracle():
    rng = np.random.default_rng(7)
    x, y = rng.standard_normal((20, 5)), rng.standard_normal((20, 3))
    np.testing.assert_allclose(ridge_solve(x, y, 0.0), np.linalg.lstsq(x, y, rcond=None)[0],
                               atol=1e-9)


@given(arrays(float, (12, 3), elements=st.floats(-10, 10)),
       arrays(float, (12, 2), elements=st.floats(-10, 10)))
def test_ridge_lambda_zero_property(x, y):
    if np.linalg.cond(x) > 1e6:
        return
    np.testing.assert_allclose(ridge_solve(x, y, 0.0), np.linalg.lstsq(x, y, rcond=None)[0],
                               atol=1e-9 * max(1.0, np.abs(y).max()) * np.linalg.cond(x))


def test_ridge_shrinkage_and_singular():
    rng = np.random.default_rng(8)
    x, y = rng.standard_normal((20, 5)), rng.standard_normal((20, 3))
    big = 1e12 * np.linalg.norm(x.T @ x)
    b0 = ridge_solve(x, y, 0.0)
    assert np.linalg.norm(ridge_solve(x, y, big)) < 1e-6 * np.linalg.norm(b0)
    x[:, 1] = x[:, 0]
    with pytest.raises(NumericalError, match="increase lambda"):
        ridge_solve(x, y, 0.0)
    assert np.all(np.isfinite(ridge_solve(x, y, 1e-3)))


# --------------------------------------------------------------------------- #
# blocked matmul
# --------------------------------------------------------------------------- #

@pytest.mark.parametrize("k,n", [(35, 810), (6, 810), (810, 41), (200, 256)])
def test_blocked_matmul_chunk_invariant(k, n):
    rng = np.random.default_rng(9)
    a, b = rng.standard_normal((1000, k)), rng.standard_normal((k, n))
    whole = blocked_matmul(a, b)
    np.testing.assert_allclose(whole, a @ b, atol=1e-11)
    for chunk in (1, 7, 123, 300):
        parts = np.vstack([blocked_matmul(a[i:i + chunk], b) for i in range(0, 1000, chunk)])
        np.testing.assert_array_equal(parts, whole)
