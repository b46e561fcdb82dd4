"""Trained fKK-EC models (ML:fKK-EC).

A model keeps the spectral side of a fKK-EC run: ``f``, ``s``, ``V`` and the
corrected bases. New spectra are projected onto it by ridge regression,
``U_new = A_new P``, and assembled with the same exponential formula as the
training run. Applying a model uses matrix products and elementwise
functions only.

Model files::

    b"RFMC" | u16 version | u32 metadata length | metadata JSON (utf-8)
    | little-endian float64 blocks in the order listed in metadata["blocks"]
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .conventional import INTENSITY_FLOOR
from .cubeio import ReferenceSpectrum, SpectralCube
from .errors import FormatError, IncompatibleModelError, InvalidParameterError
from .factorized import (CorrectionBasis, FkkecOptions, build_log_ratio,
                         process_fkkec, reconstruct_scores)
from .numerics import blocked_matmul
from .timing import NULL_TIMER

MODEL_MAGIC = b"RFMC"
MODEL_VERSION = 1
# residual_diagnostic level above which a spectrum is reported as outside
# the trained basis
DEFAULT_FLAG_THRESHOLD = 1e-3
BLOCK_ORDER = ("axis", "f", "s", "V", "hilbert_v", "phi_pec", "v_sec", "P",
               "reference", "hilbert_phi_pec")


def regression_projector(s, V, lam):
    """``P = (X^T X + lam I)^-1 X^T`` for ``X = S V^T``, shape (N, k).

    Since V has orthonormal columns this equals ``V diag(s / (s**2 + lam))``,
    which stays exact at ``lam = 0``.
    """
    if lam < 0:
        raise InvalidParameterError("regression lambda must be non-negative")
    s = np.asarray(s, dtype=float)
    return V * (s / (s ** 2 + lam))


@dataclass
class CorrectionModel:
    freq: np.ndarray
    reference: np.ndarray
    f: np.ndarray
    s: np.ndarray
    V: np.ndarray
    basis: CorrectionBasis
    P: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n, k = self.V.shape
        if self.P.shape != (n, k) or self.s.shape != (k,) or self.basis.k != k:
            raise FormatError("inconsistent model block shapes")
        for name in ("freq", "reference", "f"):
            if getattr(self, name).shape != (n,):
                raise FormatError(f"model block {name!r} has wrong length")
        if n > 1 and not np.all(np.diff(self.freq) > 0):
            raise FormatError("model frequency axis is not strictly increasing")
        self._bases = None

    @property
    def k(self):
        return self.s.shape[0]

    @property
    def n_freq(self):
        return self.freq.shape[0]

    @property
    def floor(self):
        return float(self.metadata.get("floor", INTENSITY_FLOOR))

    def bases(self):
        if self._bases is None:
            self._bases = self.basis.exponent_bases(self.V, self.f)
        return self._bases

    def check_axis(self, freq):
        freq = np.asarray(freq, dtype=float)
        if freq.shape != self.freq.shape or not np.array_equal(freq, self.freq):
            raise IncompatibleModelError("cube frequency axis differs from the model axis")


def train(cube: SpectralCube, ref: ReferenceSpectrum, options: Optional[FkkecOptions] = None,
          regress_lambda=None, seed=None, timer=NULL_TIMER):
    """Run fKK-EC on training data and keep the basis as a model.

    Returns
    -------
    (CorrectionModel, SpectralCube)
        The model and the fKK-EC reconstruction of the training cube.
    """
    options = options or FkkecOptions()
    out, fit = process_fkkec(cube, ref, options, timer)
    lam = fit.basis.ridge_lambda if regress_lambda is None else float(regress_lambda)
    meta = {
        "format_version": MODEL_VERSION,
        "seed": seed,
        "training_shape": [cube.rows, cube.cols, cube.n_freq],
        "rank": fit.fact.k,
        "regress_lambda": lam,
        "ridge_lambda": fit.basis.ridge_lambda,
        "alpha": options.alpha,
        "sigma_g": options.sigma_g,
        "floor": options.floor,
        "als": {"smoothness": options.als.smoothness, "asymmetry": options.als.asymmetry,
                "max_iterations": options.als.max_iterations,
                "tolerance": options.als.tolerance},
        "extras_per_column": options.extras_per_column,
        "sec_window": options.sec_window,
        "sec_order": options.sec_order,
    }
    model = CorrectionModel(cube.freq.copy(), ref.values.copy(), fit.f, fit.fact.s, fit.fact.V,
                            fit.basis, regression_projector(fit.fact.s, fit.fact.V, lam), meta)
    return model, out


def with_regress_lambda(model: CorrectionModel, lam):
    """Copy of `model` with a different regression lambda."""
    meta = dict(model.metadata, regress_lambda=float(lam))
    return CorrectionModel(model.freq, model.reference, model.f, model.s, model.V, model.basis,
                           regression_projector(model.s, model.V, lam), meta)


def regress_scores(model: CorrectionModel, spectra):
    """``U_new S`` for raw spectra (m x N)."""
    a = build_log_ratio(spectra, model.reference, model.f, model.floor)
    return blocked_matmul(a, model.P * model.s), a


def apply(model: CorrectionModel, cube: SpectralCube, chunk_rows=4096, timer=NULL_TIMER):
    """Transform a raw cube with a trained model, `chunk_rows` spectra at a time."""
    model.check_axis(cube.freq)
    magnitude, phase = model.bases()
    spectra = cube.flat()
    m = spectra.shape[0]
    out = np.empty((m, cube.n_freq), dtype=complex)
    for start in range(0, m, chunk_rows):
        rows = slice(start, min(start + chunk_rows, m))
        with timer("regress"):
            scores, _ = regress_scores(model, spectra[rows])
        with timer("reconstruct"):
            reconstruct_scores(scores, magnitude, phase, chunk_rows, out=out[rows])
    return SpectralCube.from_flat(out, cube.rows, cube.cols, cube.freq, cube.masks)


def residual_diagnostic(model: CorrectionModel, cube: SpectralCube, chunk_rows=4096):
    """Fraction of each log-ratio spectrum outside the model's basis span.

    ``||A_row - U_new,row S V^T|| / ||A_row||``, with 0 for all-zero rows.
    """
    model.check_axis(cube.freq)
    spectra = cube.flat()
    m = spectra.shape[0]
    out = np.zeros(m)
    for start in range(0, m, chunk_rows):
        rows = slice(start, min(start + chunk_rows, m))
        scores, a = regress_scores(model, spectra[rows])
        resid = np.linalg.norm(a - blocked_matmul(scores, model.V.T), axis=1)
        norm = np.linalg.norm(a, axis=1)
        out[rows] = np.divide(resid, norm, out=np.zeros_like(resid), where=norm > 0)
    return out


# --------------------------------------------------------------------------- #
# persistence
# --------------------------------------------------------------------------- #

def _blocks(model: CorrectionModel):
    b = model.basis
    return {"axis": model.freq, "f": model.f, "s": model.s, "V": model.V,
            "hilbert_v": b.hilbert_v, "phi_pec": b.phi_pec, "v_sec": b.v_sec, "P": model.P,
            "reference": model.reference, "hilbert_phi_pec": b.hilbert_phi_pec}


def save(model: CorrectionModel) -> bytes:
    blocks = _blocks(model)
    meta = dict(model.metadata)
    meta.update({
        "format_version": MODEL_VERSION,
        "n_freq": model.n_freq,
        "k": model.k,
        "q": [int(i) for i in model.basis.q],
        "ridge_lambda": model.basis.ridge_lambda,
        "blocks": [[name, list(blocks[name].shape)] for name in BLOCK_ORDER],
    })
    raw_meta = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<HI", MODEL_VERSION, len(raw_meta)), raw_meta]
    parts += [np.ascontiguousarray(blocks[name], dtype="<f8").tobytes() for name in BLOCK_ORDER]
    return b"".join(parts)


def load(data: bytes) -> CorrectionModel:
    data = bytes(data)
    if len(data) < 10:
        raise FormatError("model stream is truncated")
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"bad model magic {data[:4]!r}")
    version, meta_len = struct.unpack("<HI", data[4:10])
    if version != MODEL_VERSION:
        raise FormatError(f"model format version {version} is not supported (need {MODEL_VERSION})")
    if len(data) < 10 + meta_len:
        raise FormatError("model metadata is truncated")
    try:
        meta = json.loads(data[10:10 + meta_len].decode("utf-8"))
        layout = [(str(name), tuple(int(d) for d in shape)) for name, shape in meta["blocks"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"model metadata is unreadable: {exc}") from exc
    if [name for name, _ in layout] != list(BLOCK_ORDER):
        raise FormatError("model block layout is not recognised")
    offset = 10 + meta_len
    expected = offset + 8 * sum(int(np.prod(shape)) for _, shape in layout)
    if len(data) != expected:
        raise FormatError(f"model stream is {len(data)} bytes, layout implies {expected}")
    arrays = {}
    for name, shape in layout:
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset) \
            .astype(float).reshape(shape)
        offset += 8 * count
    q = np.asarray(meta.pop("q", []), dtype=int)
    basis = CorrectionBasis(arrays["hilbert_v"], arrays["phi_pec"], arrays["hilbert_phi_pec"],
                            arrays["v_sec"], float(meta.get("ridge_lambda", 0.0)), q)
    for key in ("blocks", "n_freq", "k"):
        meta.pop(key, None)
    return CorrectionModel(arrays["axis"], arrays["reference"], arrays["f"], arrays["s"],
                           arrays["V"], basis, arrays["P"], meta)


def save_model(path, model):
    with open(path, "wb") as fh:
        fh.write(save(model))


def load_model(path):
    with open(path, "rb") as fh:
        return load(fh.read())
