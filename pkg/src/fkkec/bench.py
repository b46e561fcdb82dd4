"""Scaling benchmark of conventional KK-EC, fKK-EC and ML:fKK-EC.

Every size gets one seeded phantom that all three methods process. Times
are per-step wall clock around compute calls only; phantom generation and
file output are outside the timed regions. A warm-up pass on a small
phantom is run and discarded first.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .conventional import ConventionalOptions, denoise_factorization, process_conventional, \
    process_spectra
from .errors import InvalidParameterError
from .factorized import FkkecOptions, process_fkkec
from .mlmodel import apply, train
from .simulate import PhantomConfig, generate_phantom, side_scaled
from .timing import StepTimer

log = logging.getLogger(__name__)

METHODS = ("conventional", "fkkec", "ml")
CSV_FIELDS = ("size", "spectra", "method", "step", "mean_s", "std_s", "workers")
# phase retrieval step of each method
RETRIEVAL_STEP = {"conventional": "kk", "fkkec": "fkk"}


def _mean_std(values):
    values = np.asarray(values, dtype=float)
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), std


@dataclass
class BenchReport:
    """Timings of one method at one size over all repeats.

    ``runs`` holds one ``{step: seconds}`` dict per repeat. ``estimated``
    marks conventional runs whose per-spectrum steps were timed on a subset
    and scaled up.
    """

    size: float
    spectra: int
    method: str
    workers: int
    runs: List[Dict[str, float]] = field(default_factory=list)
    estimated: bool = False
    rank: Optional[int] = None

    @property
    def repeats(self):
        return len(self.runs)

    @property
    def steps(self):
        out = []
        for run in self.runs:
            out += [s for s in run if s not in out]
        return out

    def step_times(self, step):
        return np.array([run.get(step, 0.0) for run in self.runs])

    def step_stats(self, step):
        return _mean_std(self.step_times(step))

    def totals(self, include_train=True):
        skip = () if include_train else ("train",)
        return np.array([sum(v for s, v in run.items() if s not in skip) for run in self.runs])

    def total_stats(self, include_train=True):
        return _mean_std(self.totals(include_train))

    def per_spectrum(self, include_train=True):
        return _mean_std(self.totals(include_train) / max(self.spectra, 1))

    def as_dict(self):
        d = {"size": self.size, "spectra": self.spectra, "method": self.method,
             "workers": self.workers, "repeats": self.repeats, "estimated": self.estimated,
             "rank": self.rank, "runs": self.runs, "steps": {}}
        for step in self.steps:
            mean, std = self.step_stats(step)
            d["steps"][step] = {"mean_s": mean, "std_s": std}
        return d


def speedup(baseline: BenchReport, candidate: BenchReport, include_train=True):
    """Mean and std over repeats of ``baseline_total / candidate_total``."""
    if baseline.repeats != candidate.repeats:
        raise InvalidParameterError("reports have different repeat counts")
    return _mean_std(baseline.totals() / candidate.totals(include_train))


def step_speedup(baseline: BenchReport, b_step, candidate: BenchReport, c_step):
    return _mean_std(baseline.step_times(b_step) / candidate.step_times(c_step))


def _time_conventional(cube, ref, options, max_spectra):
    timer = StepTimer()
    m = cube.n_spectra
    if max_spectra is None or m <= max_spectra:
        _, info = process_conventional(cube, ref, options, timer)
        return timer.as_dict(), False, info["rank"]
    # whole-cube SVD, per-spectrum steps on a subset scaled by m / max_spectra
    spectra = cube.flat()
    with timer("svd"):
        fact = denoise_factorization(spectra, options.rank)
        block = (fact.U[:max_spectra] * fact.s) @ fact.V.T
    sub = StepTimer()
    for start in range(0, max_spectra, options.chunk_rows):
        process_spectra(block[start:start + options.chunk_rows], ref.values, options, sub)
    scale = m / max_spectra
    times = timer.as_dict()
    times.update({k: v * scale for k, v in sub.times.items()})
    return times, True, fact.k


def _time_fkkec(cube, ref, options):
    timer = StepTimer()
    _, fit = process_fkkec(cube, ref, options, timer)
    return timer.as_dict(), fit.fact.k


def _time_ml(cube, ref, options, chunk_rows):
    timer = StepTimer()
    row_sl, col_sl = cube.mask_bounds("train")
    with timer("train"):
        model, _ = train(cube.crop(row_sl, col_sl), ref, options)
    apply(model, cube, chunk_rows, timer)
    return timer.as_dict(), model.k


def run_benchmark(sizes: Sequence[float] = (0.5, 1.0, 2.0), repeats=3, seed=0, workers=1,
                  methods: Sequence[str] = METHODS, base_config: Optional[PhantomConfig] = None,
                  conventional_options: Optional[ConventionalOptions] = None,
                  fkkec_options: Optional[FkkecOptions] = None,
                  conventional_max_spectra=None, warmup=True) -> List[BenchReport]:
    """Time every method at every side scale.

    Parameters
    ----------
    sizes : side-scale factors of the base 74 x 246 phantom.
    repeats : measured repeats per method and size (>= 1).
    workers : BLAS/LAPACK thread count pinned for all runs.
    conventional_max_spectra : if set, larger conventional runs time the
        per-spectrum steps on this many spectra and scale up (flagged as
        estimated).
    """
    if repeats < 1:
        raise InvalidParameterError("repeats must be >= 1")
    if workers < 1:
        raise InvalidParameterError("workers must be >= 1")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise InvalidParameterError(f"unknown methods {sorted(unknown)}")
    base = base_config or PhantomConfig(rng_seed=seed)
    conv_opts = conventional_options or ConventionalOptions()
    fk_opts = fkkec_options or FkkecOptions()
    reports = []
    with threadpool_limits(limits=workers):
        if warmup:
            cube, ref, _ = generate_phantom(side_scaled(base, 0.25))
            _run_once(cube, ref, methods, conv_opts, fk_opts, None)
        for size in sizes:
            cube, ref, _ = generate_phantom(side_scaled(base, size))
            log.info("size %s: %d spectra", size, cube.n_spectra)
            by_method = {m: BenchReport(size, cube.n_spectra, m, workers) for m in methods}
            for r in range(repeats):
                for method, (times, estimated, rank) in _run_once(
                        cube, ref, methods, conv_opts, fk_opts, conventional_max_spectra).items():
                    rep = by_method[method]
                    rep.runs.append(times)
                    rep.estimated |= estimated
                    rep.rank = rank
                    log.debug("size %s repeat %d %s: %.3f s", size, r, method, sum(times.values()))
            reports += [by_method[m] for m in methods]
            del cube
    return reports


def _run_once(cube, ref, methods, conv_opts, fk_opts, max_spectra):
    out = {}
    for method in methods:
        if method == "conventional":
            out[method] = _time_conventional(cube, ref, conv_opts, max_spectra)
        elif method == "fkkec":
            times, k = _time_fkkec(cube, ref, fk_opts)
            out[method] = (times, False, k)
        else:
            times, k = _time_ml(cube, ref, fk_opts, fk_opts.chunk_rows)
            out[method] = (times, False, k)
    return out


def speedup_table(reports: Sequence[BenchReport]):
    """Rows of ``(size, spectra, label, mean, std)`` against conventional."""
    rows = []
    by_size = {}
    for rep in reports:
        by_size.setdefault(rep.size, {})[rep.method] = rep
    for size, reps in by_size.items():
        base = reps.get("conventional")
        if base is None:
            continue
        if "fkkec" in reps:
            rows.append((size, base.spectra, "fkkec", *speedup(base, reps["fkkec"])))
        if "ml" in reps:
            rows.append((size, base.spectra, "ml+train", *speedup(base, reps["ml"], True)))
            rows.append((size, base.spectra, "ml-train", *speedup(base, reps["ml"], False)))
    return rows


def write_csv(reports: Sequence[BenchReport], path):
    """One row per (size, method, step) plus a ``total`` row per method."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for rep in reports:
            for step in rep.steps + ["total"]:
                mean, std = rep.total_stats() if step == "total" else rep.step_stats(step)
                w.writerow([rep.size, rep.spectra, rep.method, step, repr(mean), repr(std),
                            rep.workers])
    return path


def write_speedup_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("size", "spectra", "method", "speedup_mean", "speedup_std"))
        for size, spectra, label, mean, std in speedup_table(reports):
            w.writerow([size, spectra, label, repr(mean), repr(std)])
    return path


def step_fractions(reports: Sequence[BenchReport], include_train=False):
    """Fraction of total time per step, keyed by ``"method@spectra"``."""
    out = {}
    for rep in reports:
        total = rep.total_stats(include_train)[0]
        steps = [s for s in rep.steps if include_train or s != "train"]
        out[f"{rep.method}@{rep.spectra}"] = {
            s: (rep.step_stats(s)[0] / total if total > 0 else 0.0) for s in steps}
    return out


def write_outputs(reports: Sequence[BenchReport], out_dir):
    """CSV tables, JSON report and SVG plots into `out_dir`."""
    from . import plotting
    from .cubeio import write_json

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"csv": write_csv(reports, out_dir / "bench.csv"),
             "speedup_csv": write_speedup_csv(reports, out_dir / "speedup.csv")}
    table = speedup_table(reports)
    write_json(out_dir / "bench.json", {
        "reports": [r.as_dict() for r in reports],
        "speedups": [{"size": s, "spectra": n, "method": lab, "mean": m, "std": sd}
                     for s, n, lab, m, sd in table]})
    paths["json"] = out_dir / "bench.json"
    series = {}
    for size, spectra, label, mean, std in table:
        n, m, sd = series.setdefault(label, ([], [], []))
        n.append(spectra)
        m.append(mean)
        sd.append(std)
    if series:
        paths["enhancement_svg"] = plotting.plot_enhancement(series, out_dir / "enhancement.svg")
    paths["fractions_svg"] = plotting.plot_step_fractions(step_fractions(reports),
                                                          out_dir / "step_fractions.svg")
    return paths
