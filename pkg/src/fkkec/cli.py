"""Command-line interface.

Exit status: 0 on success, 1 on a runtime failure, 2 on a usage error
(bad flags, missing inputs, band outside the axis).

Every flag can also come from ``--config FILE``: a JSON object whose
top-level keys set global options and whose per-command sections (e.g.
``{"process": {"mode": "fkkec"}}``) set that command's options. Flags given
on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .errors import FkkecError
from .mlmodel import DEFAULT_FLAG_THRESHOLD

log = logging.getLogger("fkkec")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Invalid invocation detected after argument parsing."""


def _require(args, *names):
    missing = ["--" + n.replace("_", "-") for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


def _existing(path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _writable(path):
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise UsageError(f"output directory does not exist: {parent}")
    return path


def _image_rows(chunk_spectra, cols):
    return max(1, int(chunk_spectra) // max(int(cols), 1))


# --------------------------------------------------------------------------- #
# option builders
# --------------------------------------------------------------------------- #

def _als(args):
    from .numerics import AlsParams
    return AlsParams(smoothness=args.als_smoothness, asymmetry=args.als_asymmetry,
                     max_iterations=args.als_iterations)


def _fkkec_options(args):
    from .factorized import FkkecOptions
    return FkkecOptions(alpha=args.alpha, sigma_g=args.sigma_g, rank=args.rank, als=_als(args),
                        ridge_lambda=args.fpec_ridge, extras_per_column=args.extras,
                        sec_window=args.sec_window, chunk_rows=args.chunk_rows)


def _options_dict(opts):
    d = dict(vars(opts))
    d["als"] = dict(vars(opts.als))
    return d


# --------------------------------------------------------------------------- #
# commands
# --------------------------------------------------------------------------- #

def cmd_simulate(args):
    from .cubeio import SpectralCube, write_cube, write_json, write_reference_csv
    from .simulate import PhantomConfig, add_noise, generate_phantom

    _require(args, "out_dir")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = PhantomConfig(n_chemicals=args.n_chemicals, side_scale=args.side_scale,
                           rng_seed=args.seed, nrb_mode=args.nrb, ref_mode=args.ref_mode)
    cube, ref, truth = generate_phantom(config)
    if args.alpha or args.sigma_g:
        cube = add_noise(cube, args.alpha, args.sigma_g, args.noise_seed)
    write_cube(out / "phantom.rfcb", cube)
    write_reference_csv(out / "reference.csv", ref)
    truth_data = truth.im_chi_ratio.reshape(cube.rows, cube.cols, cube.n_freq)
    write_cube(out / "truth.rfcb", SpectralCube(truth_data, cube.freq, cube.masks))
    write_cube(out / "concentrations.rfcb",
               SpectralCube(truth.concentrations, np.arange(config.n_chemicals, dtype=float)))
    write_json(out / "config.json", {"phantom": config.to_dict(), "alpha": args.alpha,
                                     "sigma_g": args.sigma_g, "noise_seed": args.noise_seed,
                                     "version": __version__})
    log.info("wrote %d x %d x %d phantom to %s", cube.rows, cube.cols, cube.n_freq, out)
    return EXIT_OK


def _process_fkkec_stream(cube, ref, opts, out_path, timer):
    from .cubeio import CubeWriter
    from .factorized import fit_fkkec, reconstruct

    ref.check_axis(cube.freq)
    ref.check_positive()
    fit = fit_fkkec(cube.flat(), ref.values, opts, timer)
    step = _image_rows(opts.chunk_rows, cube.cols)
    with CubeWriter(out_path, cube.rows, cube.cols, cube.freq, True, cube.masks) as w:
        for r0 in range(0, cube.rows, step):
            r1 = min(r0 + step, cube.rows)
            with timer("reconstruct"):
                block = reconstruct(fit.fact, fit.basis, fit.f, (r0 * cube.cols, r1 * cube.cols),
                                    opts.chunk_rows)
            w.write(block.reshape(r1 - r0, cube.cols, cube.n_freq))
    return {"rank": fit.fact.k, "ridge_lambda": fit.basis.ridge_lambda,
            "subsample_rows": int(len(fit.basis.q))}


def cmd_process(args):
    from .conventional import ConventionalOptions, process_conventional
    from .cubeio import read_cube, read_reference_csv, write_cube, write_json
    from .timing import StepTimer

    _require(args, "mode", "input", "ref", "out")
    _existing(args.input, "input cube")
    _existing(args.ref, "reference")
    _writable(args.out)
    if args.report:
        _writable(args.report)
    cube = read_cube(args.input)
    ref = read_reference_csv(args.ref)
    timer = StepTimer()
    if args.mode == "conventional":
        opts = ConventionalOptions(rank=args.rank, als=_als(args), sec_window=args.sec_window,
                                   chunk_rows=args.chunk_rows)
        result, info = process_conventional(cube, ref, opts, timer)
        write_cube(args.out, result)
    else:
        opts = _fkkec_options(args)
        info = _process_fkkec_stream(cube, ref, opts, args.out, timer)
    report = {"mode": args.mode, "input": str(args.input), "output": str(args.out),
              "spectra": cube.n_spectra, "shape": [cube.rows, cube.cols, cube.n_freq],
              "options": _options_dict(opts), "timing": timer.as_dict(),
              "total_s": timer.total(), **info}
    if args.report:
        write_json(args.report, report)
    log.info("%s: %d spectra in %.3f s", args.mode, cube.n_spectra, timer.total())
    return EXIT_OK


def cmd_train(args):
    from . import mlmodel
    from .cubeio import read_cube, read_reference_csv, write_cube, write_json
    from .timing import StepTimer

    _require(args, "input", "ref", "model")
    _existing(args.input, "input cube")
    _existing(args.ref, "reference")
    for p in (args.model, args.out, args.report):
        if p:
            _writable(p)
    cube = read_cube(args.input)
    if args.mask:
        if args.mask not in cube.masks:
            raise UsageError(f"cube has no mask named {args.mask!r} "
                             f"(available: {sorted(cube.masks)})")
        cube = cube.crop(*cube.mask_bounds(args.mask))
    ref = read_reference_csv(args.ref)
    timer = StepTimer()
    model, recon = mlmodel.train(cube, ref, _fkkec_options(args), args.ridge, args.seed, timer)
    resid = mlmodel.residual_diagnostic(model, cube, args.chunk_rows)
    model.metadata["train_residual_median"] = float(np.median(resid)) if resid.size else 0.0
    model.metadata["mask"] = args.mask
    mlmodel.save_model(args.model, model)
    if args.out:
        write_cube(args.out, recon)
    if args.report:
        write_json(args.report, {"spectra": cube.n_spectra, "rank": model.k,
                                 "timing": timer.as_dict(), "total_s": timer.total(),
                                 "metadata": model.metadata})
    log.info("trained rank-%d model on %d spectra in %.3f s", model.k, cube.n_spectra,
             timer.total())
    return EXIT_OK


def cmd_apply(args):
    from . import mlmodel
    from .cubeio import CubeWriter, iter_cube_rows, peek_header, write_json
    from .timing import StepTimer

    _require(args, "model", "input", "out")
    _existing(args.model, "model")
    _existing(args.input, "input cube")
    for p in (args.out, args.diagnose, args.report):
        if p:
            _writable(p)
    model = mlmodel.load_model(args.model)
    if args.ridge is not None:
        model = mlmodel.with_regress_lambda(model, args.ridge)
    header = peek_header(args.input)
    model.check_axis(header.freq)
    timer = StepTimer()
    step = _image_rows(args.chunk_rows, header.cols)
    residuals = []
    with CubeWriter(args.out, header.rows, header.cols, header.freq, True, header.masks) as w:
        for _, chunk in iter_cube_rows(args.input, step):
            w.write(mlmodel.apply(model, chunk, args.chunk_rows, timer).data)
            if args.diagnose:
                residuals.append(mlmodel.residual_diagnostic(model, chunk, args.chunk_rows))
    summary = {"spectra": header.rows * header.cols, "timing": timer.as_dict(),
               "total_s": timer.total(), "regress_lambda": model.metadata.get("regress_lambda")}
    if args.diagnose:
        resid = np.concatenate(residuals) if residuals else np.zeros(0)
        threshold = args.flag_threshold
        flagged = resid > threshold
        with open(args.diagnose, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(("row", "col", "residual", "flagged"))
            for i, (r, f) in enumerate(zip(resid, flagged)):
                wr.writerow((i // header.cols, i % header.cols, repr(float(r)), int(f)))
        summary.update({"flag_threshold": float(threshold), "flagged": int(flagged.sum()),
                        "residual_median": float(np.median(resid)) if resid.size else 0.0})
        if flagged.any():
            log.warning("%d of %d spectra lie outside the trained basis (threshold %.3g)",
                        flagged.sum(), resid.size, threshold)
    if args.report:
        write_json(args.report, summary)
    log.info("applied model to %d spectra in %.3f s", summary["spectra"], timer.total())
    return EXIT_OK


def cmd_bench(args):
    from .bench import run_benchmark, write_outputs

    _require(args, "out_dir")
    reports = run_benchmark(sizes=args.sizes, repeats=args.repeats, seed=args.seed,
                            workers=args.workers, methods=args.methods,
                            conventional_max_spectra=args.conventional_max_spectra,
                            warmup=not args.no_warmup)
    paths = write_outputs(reports, args.out_dir)
    for p in paths.values():
        log.info("wrote %s", p)
    return EXIT_OK


def cmd_metrics(args):
    from .cubeio import read_cube, write_json
    from .metrics import null_rss, rss

    _require(args, "pred", "truth")
    _existing(args.pred, "prediction cube")
    _existing(args.truth, "truth cube")
    pred, truth = read_cube(args.pred), read_cube(args.truth)
    per_pixel, mean = rss(pred, truth)
    null = null_rss(truth)
    result = {"rss_mean": mean, "null_rss": null, "rss_over_null": mean / null if null else None,
              "spectra": int(per_pixel.size)}
    if args.out:
        write_json(args.out, result)
    if args.per_pixel:
        np.savetxt(args.per_pixel, per_pixel.reshape(pred.rows, pred.cols), delimiter=",",
                   fmt="%.17g")
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_bandimage(args):
    from .bandimage import BandRangeError, check_ranges, example_band_spec, load_band_spec, \
        render, write_ppm
    from .cubeio import peek_header, read_cube

    _require(args, "input", "out")
    _existing(args.input, "input cube")
    _writable(args.out)
    spec = load_band_spec(_existing(args.bands, "band spec")) if args.bands else example_band_spec()
    if args.percentiles:
        spec = type(spec)(spec.channels, tuple(args.percentiles))
    try:
        check_ranges(spec, peek_header(args.input).freq)
    except BandRangeError as exc:
        raise UsageError(str(exc)) from exc
    write_ppm(args.out, render(read_cube(args.input), spec))
    log.info("wrote %s", args.out)
    return EXIT_OK


# --------------------------------------------------------------------------- #
# parser
# --------------------------------------------------------------------------- #

def _add_processing_flags(p):
    p.add_argument("--rank", type=int, help="fixed SVD rank (default: machine-precision cutoff)")
    p.add_argument("--als-smoothness", type=float, default=1e4)
    p.add_argument("--als-asymmetry", type=float, default=1e-3)
    p.add_argument("--als-iterations", type=int, default=10)
    p.add_argument("--sec-window", type=int, help="trendline window (odd)")
    p.add_argument("--fpec-ridge", type=float, help="phase-error ridge lambda")
    p.add_argument("--extras", type=int, default=2, help="extra sub-sampled rows per column")
    p.add_argument("--alpha", type=float, default=0.0, help="Poisson gain for noise scaling")
    p.add_argument("--sigma-g", type=float, default=0.0, help="Gaussian noise std")
    p.add_argument("--chunk-rows", type=int, default=4096, help="spectra per chunk")


def build_parser():
    parser = argparse.ArgumentParser(prog="fkkec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON file with option defaults")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--workers", type=int, default=1, help="BLAS/LAPACK threads")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["simulate"] = sub.add_parser("simulate", help="generate a synthetic phantom")
    p.add_argument("--out-dir")
    p.add_argument("--side-scale", type=float, default=1.0)
    p.add_argument("--n-chemicals", type=int, default=3)
    p.add_argument("--nrb", choices=["polynomial", "constant"], default="polynomial")
    p.add_argument("--ref-mode", choices=["linear_polynomial", "constant"],
                   default="linear_polynomial")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--sigma-g", type=float, default=0.0)
    p.add_argument("--noise-seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = subs["process"] = sub.add_parser("process", help="retrieve K_CARS from a raw cube")
    p.add_argument("--mode", choices=["conventional", "fkkec"])
    p.add_argument("--in", dest="input")
    p.add_argument("--ref")
    p.add_argument("--out")
    p.add_argument("--report")
    _add_processing_flags(p)
    p.set_defaults(func=cmd_process)

    p = subs["train"] = sub.add_parser("train", help="train an ML:fKK-EC model")
    p.add_argument("--in", dest="input")
    p.add_argument("--ref")
    p.add_argument("--model")
    p.add_argument("--out", help="training reconstruction cube")
    p.add_argument("--report")
    p.add_argument("--mask", help="train on the bounding box of this cube mask")
    p.add_argument("--ridge", type=float, help="regression lambda (default: fPEC lambda)")
    p.add_argument("--seed", type=int)
    _add_processing_flags(p)
    p.set_defaults(func=cmd_train)

    p = subs["apply"] = sub.add_parser("apply", help="apply a trained model to a cube")
    p.add_argument("--model")
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--report")
    p.add_argument("--ridge", type=float, help="override the regression lambda")
    p.add_argument("--chunk-rows", type=int, default=4096)
    p.add_argument("--diagnose", help="CSV of per-pixel basis residuals")
    p.add_argument("--flag-threshold", type=float, default=DEFAULT_FLAG_THRESHOLD,
                   help="flag spectra whose residual exceeds this fraction")
    p.set_defaults(func=cmd_apply)

    p = subs["bench"] = sub.add_parser("bench", help="scaling benchmark")
    p.add_argument("--out-dir")
    p.add_argument("--sizes", type=float, nargs="+", default=[0.5, 1.0, 2.0])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", nargs="+", choices=["conventional", "fkkec", "ml"],
                   default=["conventional", "fkkec", "ml"])
    p.add_argument("--conventional-max-spectra", type=int,
                   help="estimate conventional timing from this many spectra")
    p.add_argument("--no-warmup", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = subs["metrics"] = sub.add_parser("metrics", help="RSS against ground truth")
    p.add_argument("--pred")
    p.add_argument("--truth")
    p.add_argument("--out")
    p.add_argument("--per-pixel", help="CSV image of per-pixel RSS")
    p.set_defaults(func=cmd_metrics)

    p = subs["bandimage"] = sub.add_parser("bandimage", help="band-math pseudocolor image")
    p.add_argument("--in", dest="input")
    p.add_argument("--bands", help="band spec JSON (default: shipped tissue example)")
    p.add_argument("--out")
    p.add_argument("--percentiles", type=float, nargs=2)
    p.set_defaults(func=cmd_bandimage)
    return parser, subs


def _apply_config(parser, subs, path, command):
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    top = {a.dest for a in parser._actions}
    glob = {k: v for k, v in cfg.items() if k not in subs}
    section = cfg.get(command, {})
    known = {a.dest for a in subs[command]._actions}
    for name, values, valid in (("global", glob, top), (command, section, known)):
        bad = sorted(k.replace("-", "_") for k in values if k.replace("-", "_") not in valid)
        if bad:
            raise UsageError(f"unknown {name} config keys: {bad}")
    parser.set_defaults(**{k.replace("-", "_"): v for k, v in glob.items()})
    subs[command].set_defaults(**{k.replace("-", "_"): v for k, v in section.items()})


def main(argv=None):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            _existing(args.config, "config file")
            _apply_config(parser, subs, args.config, args.command)
            args = parser.parse_args(argv)
    except (UsageError, json.JSONDecodeError) as exc:
        parser.error(str(exc))
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        with threadpool_limits(limits=args.workers):
            return args.func(args)
    except UsageError as exc:
        print(f"fkkec {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FkkecError, ValueError, OSError, MemoryError, ArithmeticError) as exc:
        log.error("%s failed: %s", args.command, exc)
        if os.environ.get("FKKEC_TRACEBACK"):
            raise
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
