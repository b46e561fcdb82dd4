"""Residual sum-of-squares of retrieved Raman-to-NRB spectra."""

import numpy as np

from .cubeio import SpectralCube
from .errors import InvalidInputError


def _as_rows(x):
    if isinstance(x, SpectralCube):
        return x.flat()
    if hasattr(x, "im_chi_ratio"):
        return x.im_chi_ratio
    x = np.asarray(x)
    return x.reshape(-1, x.shape[-1]) if x.ndim != 2 else x


def rss(pred, truth):
    """Per-pixel ``sum_w (Im{K}(w) - truth(w))**2`` and its mean over pixels.

    `pred` is a complex cube/array of K_CARS; `truth` is a GroundTruth or an
    (M, N) array of Im{chi/chi_nr}. Real-valued `pred` is taken as already
    being the imaginary part.
    """
    p = _as_rows(pred)
    t = _as_rows(truth)
    if p.shape != t.shape:
        raise InvalidInputError(f"prediction shape {p.shape} != truth shape {t.shape}")
    im = p.imag if np.iscomplexobj(p) else p
    per_pixel = np.sum((im - t) ** 2, axis=-1)
    return per_pixel, float(per_pixel.mean()) if per_pixel.size else 0.0


def null_rss(truth):
    """Mean RSS of the all-zero predictor."""
    t = _as_rows(truth)
    return float(np.sum(t ** 2, axis=-1).mean()) if t.size else 0.0
