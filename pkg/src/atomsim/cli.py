"""Command-line interface: batch generation and fitting workflows."""

from __future__ import annotations

import argparse
import json
import multiprocessing
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .errors import AtomSimError, ConfigError, ParameterError
from .experiment import build_site_map
from .fitting import (
    Histogram,
    average_spot,
    build_histogram,
    fit_em_tail,
    fit_three_component,
    fit_zernike,
    initial_three_component_guess,
    roi_sums,
)
from .imageio import read_image, write_ground_truth, write_image
from .optics import build_pupil, encircled_energy, optical_grid_shape, pupil_to_psf, psf_to_mtf
from .pipeline import FrameGenerator

__all__ = ["main"]

# set in each worker (inherited via fork) for the generate pool
_WORKER: dict = {}


def _resolve_threads(count: int) -> int:
    raw = os.environ.get("ATOMSIM_THREADS")
    if raw is None:
        threads = os.cpu_count() or 1
    else:
        try:
            threads = int(raw)
        except ValueError as exc:
            raise ConfigError(f"ATOMSIM_THREADS must be an integer, got {raw!r}") from exc
        if threads < 0:
            raise ConfigError("ATOMSIM_THREADS must be >= 0")
        if threads == 0:
            threads = os.cpu_count() or 1
    return max(1, min(threads, count))


def _frame_paths(out_dir: Path, index: int, fmt: str) -> tuple[Path, Path]:
    stem = f"frame_{index:06d}"
    extension = "pgm" if fmt == "pgm16" else "raw"
    return out_dir / f"{stem}.{extension}", out_dir / f"{stem}.truth.json"


def _write_one_frame(index: int) -> int:
    generator: FrameGenerator = _WORKER["generator"]
    image, truth = generator.frame(_WORKER["seed"], index)
    image_path, truth_path = _frame_paths(_WORKER["out"], index, _WORKER["fmt"])
    write_image(image, image_path, _WORKER["fmt"])
    write_ground_truth(truth, truth_path)
    return index


def _cmd_generate(args) -> int:
    config = load_config(args.config)
    if args.camera is not None and args.camera != config.camera_kind:
        raise ConfigError(
            f"config defines a {config.camera_kind} camera, cannot override to {args.camera}",
            "camera",
        )
    seed = config.seed if args.seed is None else args.seed
    count = config.count if args.count is None else args.count
    if count < 1:
        raise ConfigError("must be >= 1", "count")
    out_dir = Path(args.out if args.out is not None else (config.output_dir or "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    generator = FrameGenerator(config)

    indices = range(args.start, args.start + count)
    _WORKER.update(generator=generator, seed=seed, out=out_dir, fmt=args.format)
    threads = _resolve_threads(count)
    written = 0
    if threads == 1:
        for index in indices:
            _write_one_frame(index)
            written += 1
            if written % 100 == 0:
                print(f"wrote {written}/{count} frames")
    else:
        context = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=threads, mp_context=context) as pool:
            for _ in pool.map(_write_one_frame, indices, chunksize=8):
                written += 1
                if written % 100 == 0:
                    print(f"wrote {written}/{count} frames")
    if written % 100 != 0:
        print(f"wrote {written}/{count} frames")
    return 0


def _load_images(directory: str) -> list[np.ndarray]:
    root = Path(directory)
    paths = sorted(root.glob("*.pgm")) + sorted(root.glob("*.raw"))
    if not paths:
        raise ParameterError(f"no .pgm or .raw images found in {directory}")
    return [read_image(p) for p in paths]


def _emit_report(report: dict, out: str | None) -> None:
    text = json.dumps(report, sort_keys=True, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _cmd_fit_hist(args) -> int:
    config = load_config(args.config)
    sites = build_site_map(config.experiment, resolution=config.image_shape)
    images = _load_images(args.images)
    sums = roi_sums(images, sites, args.radius)
    if args.bin_width is not None:
        width = args.bin_width
    else:
        spread = np.quantile(sums, 0.995) - np.quantile(sums, 0.005)
        width = max(spread / 150.0, 1.0)
    hist = build_histogram(sums, width)
    init = json.loads(Path(args.init).read_text()) if args.init else initial_three_component_guess(hist)
    fit = fit_three_component(hist, init)
    report = {
        "a": fit.a,
        "b": fit.b,
        "c": fit.c,
        "p": fit.p,
        "mu0": fit.mu0,
        "mu1": fit.mu1,
        "sigma0": fit.sigma0,
        "sigma1": fit.sigma1,
        "d": fit.d,
        "chi2": fit.chi2,
        "n_bins": fit.n_bins,
        "uncertainties": fit.uncertainties,
        "histogram": {
            "origin": hist.origin,
            "bin_width": hist.bin_width,
            "counts": hist.counts.tolist(),
        },
    }
    _emit_report(report, args.out)
    return 0


def _pixel_histogram(images: list[np.ndarray], bin_width: int) -> Histogram:
    counts = np.zeros(65536, dtype=np.int64)
    for img in images:
        counts += np.bincount(img.reshape(-1), minlength=65536)
    usable = (counts.size // bin_width) * bin_width
    rebinned = counts[:usable].reshape(-1, bin_width).sum(axis=1)
    return Histogram(bin_width=float(bin_width), origin=0.0, counts=rebinned)


def _auto_tail_range(hist: Histogram) -> tuple[float, float]:
    centers = hist.centers
    counts = hist.counts
    total = counts.sum()
    cumulative = np.cumsum(counts)
    lo_idx = int(np.searchsorted(cumulative, 0.995 * total))
    populated = np.flatnonzero(counts >= 10)
    if populated.size == 0 or populated[-1] <= lo_idx + 3:
        raise ParameterError("tail too sparse for automatic range selection; pass --range")
    return float(centers[lo_idx]), float(centers[populated[-1]])


def _cmd_fit_gain(args) -> int:
    images = _load_images(args.images)
    hist = _pixel_histogram(images, args.bin_width)
    fit_range = tuple(args.range) if args.range else _auto_tail_range(hist)
    fit = fit_em_tail(hist, fit_range)
    report = {
        "gain_counts": fit.gain_counts,
        "gain_uncertainty": fit.gain_uncertainty,
        "fit_range": list(fit_range),
        "n_bins": fit.n_bins,
    }
    if args.preamp is not None:
        report["electron_gain"] = fit.electron_gain(args.preamp)
    _emit_report(report, args.out)
    return 0


def _cmd_fit_zernike(args) -> int:
    config = load_config(args.config)
    sites = build_site_map(config.experiment, resolution=config.image_shape)
    site = tuple(args.site) if args.site else sites[0]
    images = _load_images(args.images)
    spot = average_spot(images, site, args.window)
    fit = fit_zernike(spot, config.optics, grid_size=args.grid)
    report = {
        "coefficients": fit.coefficients,
        "tilt_alignment_only": fit.tilt,
        "uncertainties": fit.uncertainties,
        "scale": fit.scale,
        "offset": fit.offset,
        "chi2": fit.chi2,
    }
    _emit_report(report, args.out)
    return 0


def _cmd_psf(args) -> int:
    config = load_config(args.config)
    ss = config.optics.supersampling
    shape = optical_grid_shape(config.image_shape, ss)
    psf = pupil_to_psf(build_pupil(config.optics, shape))
    center = (shape[0] // 2, shape[1] // 2)
    # radii are in camera pixels; the grid is supersampled
    ring_radius = 1.22 / config.optics.pupil_radius_fraction
    table = [
        {"radius": float(r), "fraction": encircled_energy(psf, center, float(r) * ss)}
        for r in range(0, args.max_radius + 1)
    ]
    report = {
        "grid": list(shape),
        "first_dark_ring": {
            "radius": ring_radius,
            "fraction": encircled_energy(psf, center, ring_radius * ss),
        },
        "encircled_energy": table,
    }
    if args.psf_pgm:
        scaled = np.clip(psf / psf.max() * 65535.0, 0, 65535).astype(np.uint16)
        write_image(scaled, args.psf_pgm, "pgm16")
    if args.mtf_pgm:
        mtf = psf_to_mtf(psf)
        scaled = np.clip(np.fft.fftshift(mtf) * 65535.0, 0, 65535).astype(np.uint16)
        write_image(scaled, args.mtf_pgm, "pgm16")
    _emit_report(report, args.out)
    return 0


def _cmd_validate(args) -> int:
    load_config(args.config)
    print("ok")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atomsim",
        description="Simulate fluorescence images of neutral-atom arrays and fit parameters back.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="emit frames and ground-truth sidecars")
    gen.add_argument("--config", required=True)
    gen.add_argument("--count", type=int, default=None, help="frames to emit (default from config)")
    gen.add_argument("--seed", type=int, default=None, help="master seed (default from config)")
    gen.add_argument("--out", default=None, help="output directory (default from config)")
    gen.add_argument("--format", choices=["pgm16", "raw"], default="pgm16")
    gen.add_argument("--camera", choices=["emccd", "cmos"], default=None,
                     help="assert the camera variant used by the config")
    gen.add_argument("--start", type=int, default=0, help="first frame index")
    gen.set_defaults(func=_cmd_generate)

    hist = sub.add_parser("fit-hist", help="fit the ROI-sum occupancy mixture")
    hist.add_argument("--config", required=True)
    hist.add_argument("--images", required=True)
    hist.add_argument("--radius", type=float, default=3.0)
    hist.add_argument("--bin-width", type=float, default=None)
    hist.add_argument("--init", default=None, help="JSON file with initial guesses")
    hist.add_argument("--out", default=None)
    hist.set_defaults(func=_cmd_fit_hist)

    gain = sub.add_parser("fit-gain", help="fit the EM-gain exponential tail")
    gain.add_argument("--images", required=True)
    gain.add_argument("--range", type=float, nargs=2, default=None, metavar=("LO", "HI"))
    gain.add_argument("--bin-width", type=int, default=4)
    gain.add_argument("--preamp", type=float, default=None)
    gain.add_argument("--out", default=None)
    gain.set_defaults(func=_cmd_fit_gain)

    zern = sub.add_parser("fit-zernike", help="fit Zernike coefficients to an averaged spot")
    zern.add_argument("--config", required=True)
    zern.add_argument("--images", required=True)
    zern.add_argument("--site", type=int, nargs=2, default=None, metavar=("ROW", "COL"))
    zern.add_argument("--window", type=int, default=10, help="half-size of the spot window")
    zern.add_argument("--grid", type=int, default=None, help="model render grid (camera pixels)")
    zern.add_argument("--out", default=None)
    zern.set_defaults(func=_cmd_fit_zernike)

    psf = sub.add_parser("psf", help="dump the PSF/MTF and an encircled-energy table")
    psf.add_argument("--config", required=True)
    psf.add_argument("--max-radius", type=int, default=10)
    psf.add_argument("--psf-pgm", default=None)
    psf.add_argument("--mtf-pgm", default=None)
    psf.add_argument("--out", default=None)
    psf.set_defaults(func=_cmd_psf)

    val = sub.add_parser("validate", help="check a config file and exit")
    val.add_argument("--config", required=True)
    val.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AtomSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
