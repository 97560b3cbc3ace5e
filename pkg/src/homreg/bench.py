"""Perturbation benchmark: convergence domain, rate and timing campaigns.

Each trial perturbs the template corners with i.i.d. Gaussian noise, fits
the induced homography, warps the reference image by it and asks every
configured method to recover the warp from an identity initial guess.
Results aggregate into three CSVs (convergence percentage per sigma,
mean per-step corner RMS over converged trials, mean wall time) plus a
run manifest.
"""

import argparse
import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib.resources import files

import numpy as np

from . import __version__
from .errors import HomregError
from .geometry import corner_rms_error, dlt_homography
from .image import TemplateRegion, load_gray
from .solver import Mode, ReferenceTemplate, SolverConfig, estimate
from .synthetic import warp_image


METHODS = {
    "ESM": SolverConfig(mode=Mode.IB_ONLY, photometric_enabled=False),
    "IBG": SolverConfig(mode=Mode.IB_ONLY),
    "IBG_P": SolverConfig(mode=Mode.IB_ONLY, predictor_enabled=True),
    "FB_ESM": SolverConfig(mode=Mode.FB_ONLY, photometric_enabled=False),
    "UNIF": SolverConfig(mode=Mode.UNIFIED),
    "UNIF_P": SolverConfig(mode=Mode.UNIFIED, predictor_enabled=True),
}

STEP_LABELS = ["predictor", "global"] + [
    f"{level}-{it}" for level in (1, 2, 3) for it in (1, 2, 3)]

CONVERGENCE_RMS_PX = 1.0


def bundled_reference_path():
    """Path of the textured reference image shipped with the package."""
    return str(files("homreg").joinpath("data/reference.pgm"))


@dataclass(frozen=True)
class BenchConfig:
    image: str
    template: TemplateRegion
    sigmas: tuple
    trials: int
    methods: tuple
    seed: int = 0
    threads: int = 1
    out: str = "bench-out"

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods: {unknown}")
        if any(s < 0 for s in self.sigmas):
            raise ValueError("sigma must be >= 0")


@dataclass
class TrialRecord:
    sigma: float
    method: str
    trial: int
    converged: bool
    final_rms: float
    initial_rms: float
    step_rms: dict = field(default_factory=dict)
    wall_time: float = 0.0
    resamples: int = 0
    error: str = None


def _quad_is_convex_ccw(quad):
    """Strictly convex with the source corner orientation preserved.

    A perturbed quad that folds over (self-intersects or reverses a turn)
    does not correspond to a view of the plane from the front, and its
    fitted homography passes through infinity inside the template.
    """
    q = np.asarray(quad)
    for i in range(4):
        a = q[(i + 1) % 4] - q[i]
        b = q[(i + 2) % 4] - q[(i + 1) % 4]
        if a[0] * b[1] - a[1] * b[0] <= 0.0:
            return False
    return True


def perturb_corners(corners, sigma, rng):
    """One draw: each corner coordinate gets independent N(0, sigma^2)."""
    return corners + rng.normal(0.0, sigma, size=(4, 2))


def generate_test_case(ref_image, region, sigma, rng, max_resamples=1000):
    """Perturb the template corners and warp the reference accordingly.

    Returns (H_test, transformed image, resample count).  Degenerate
    perturbed quads are redrawn from the same stream.
    """
    corners = region.corners()
    for resamples in range(max_resamples + 1):
        dst = perturb_corners(corners, sigma, rng)
        if not _quad_is_convex_ccw(dst):
            continue
        try:
            H_test = dlt_homography(corners, dst)
        except HomregError:
            continue
        return H_test, warp_image(ref_image, H_test), resamples
    raise RuntimeError(
        f"no valid perturbed quad after {max_resamples} draws at "
        f"sigma={sigma}")


def trial_rng(seed, sigma, trial):
    """Stream keyed by (seed, sigma, trial): stable under parallelism."""
    return np.random.default_rng(
        np.random.SeedSequence((seed, int(round(sigma * 1e6)), trial)))


def run_trial(ref, method, cur, H_test, sigma, trial, resamples=0):
    """One method on one prepared test case, identity initial guess."""
    corners = ref.region.corners()
    initial = corner_rms_error(np.eye(3), H_test, corners)
    t0 = time.perf_counter()
    error = None
    try:
        report = estimate(ref, cur, METHODS[method])
    except HomregError as exc:
        report = None
        error = type(exc).__name__
    wall = time.perf_counter() - t0

    record = TrialRecord(sigma=sigma, method=method, trial=trial,
                         converged=False, final_rms=float("inf"),
                         initial_rms=initial, wall_time=wall,
                         resamples=resamples, error=error)
    if report is None:
        return record
    record.error = report.error
    for s in report.steps:
        try:
            record.step_rms[s.label] = corner_rms_error(s.H, H_test, corners)
        except HomregError:
            record.step_rms[s.label] = float("inf")
    try:
        record.final_rms = corner_rms_error(report.H, H_test, corners)
    except HomregError:
        record.final_rms = float("inf")
    record.converged = (record.error is None
                        and record.final_rms < CONVERGENCE_RMS_PX)
    return record


_WORKER = {}


def _init_worker(image_path, region_xywh, seed, method_names):
    img = load_gray(image_path)
    region = TemplateRegion(*region_xywh)
    _WORKER["image"] = img
    _WORKER["ref"] = ReferenceTemplate(img, region)
    _WORKER["seed"] = seed
    _WORKER["methods"] = tuple(method_names)


def _run_cell(job):
    """All methods on the shared test case of one (sigma, trial) cell."""
    sigma, trial = job
    rng = trial_rng(_WORKER["seed"], sigma, trial)
    H_test, cur, resamples = generate_test_case(
        _WORKER["image"], _WORKER["ref"].region, sigma, rng)
    return [run_trial(_WORKER["ref"], m, cur, H_test, sigma, trial,
                      resamples)
            for m in _WORKER["methods"]]


def step_rms_table(records):
    """Carry-forward mean per-step RMS over converged records."""
    rows = []
    for r in records:
        if not r.converged:
            continue
        value = r.initial_rms
        row = []
        for label in STEP_LABELS:
            value = r.step_rms.get(label, value)
            row.append(value)
        rows.append(row)
    if not rows:
        return None
    return np.mean(np.asarray(rows), axis=0)


def validate_margins(config, image_shape):
    """Template must sit >= 2 sigma_max inside every image border.

    Otherwise perturbed corners routinely leave the frame and the warped
    current image loses template support to the zero-fill boundary.
    """
    h, w = image_shape
    r = config.template
    margin = 2.0 * max(config.sigmas)
    if (r.x < margin or r.y < margin or r.x + r.width > w - margin
            or r.y + r.height > h - margin):
        raise ValueError(
            f"template {r} closer than {margin:g} px to a border of the "
            f"{w}x{h} image")


def run_campaign(config):
    """Execute the full campaign and return records grouped per cell."""
    validate_margins(config, load_gray(config.image).shape)
    jobs = [(sigma, trial)
            for sigma in config.sigmas for trial in range(config.trials)]
    region = config.template
    init_args = (config.image, (region.x, region.y, region.width,
                                region.height), config.seed, config.methods)
    if config.threads <= 1:
        _init_worker(*init_args)
        results = [_run_cell(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=config.threads,
                                 initializer=_init_worker,
                                 initargs=init_args) as pool:
            results = list(pool.map(_run_cell, jobs, chunksize=4))
    records = [rec for cell in results for rec in cell]
    records.sort(key=lambda r: (r.sigma, r.method, r.trial))
    return records


def write_outputs(config, records, out_dir=None):
    out = out_dir if out_dir is not None else config.out
    os.makedirs(out, exist_ok=True)

    by = {}
    for r in records:
        by.setdefault((r.sigma, r.method), []).append(r)

    with open(os.path.join(out, "convergence.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sigma", "method", "convergence_pct"])
        for sigma in config.sigmas:
            for method in config.methods:
                cell = by.get((sigma, method), [])
                pct = 100.0 * sum(r.converged for r in cell) / len(cell)
                w.writerow([f"{sigma:g}", method, f"{pct:.6f}"])

    with open(os.path.join(out, "rate.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "step", "mean_rms"])
        for method in config.methods:
            mine = [r for r in records if r.method == method]
            table = step_rms_table(mine)
            for i, label in enumerate(STEP_LABELS):
                value = "nan" if table is None else f"{table[i]:.9f}"
                w.writerow([method, label, value])

    with open(os.path.join(out, "timing.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sigma", "method", "mean_seconds"])
        for sigma in config.sigmas:
            for method in config.methods:
                cell = [r for r in by.get((sigma, method), [])
                        if r.converged]
                value = ("nan" if not cell else
                         f"{np.mean([r.wall_time for r in cell]):.6f}")
                w.writerow([f"{sigma:g}", method, value])

    manifest = {
        "image": config.image,
        "template": [config.template.x, config.template.y,
                     config.template.width, config.template.height],
        "sigmas": [float(s) for s in config.sigmas],
        "trials": config.trials,
        "methods": list(config.methods),
        "seed": config.seed,
        "threads": config.threads,
        "version": __version__,
        "convergence_rms_px": CONVERGENCE_RMS_PX,
        "total_resamples": int(sum(r.resamples for r in records
                                   if r.method == config.methods[0])),
    }
    with open(os.path.join(out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return out


def _parse_template(text):
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("template must be X,Y,W,H")
    return TemplateRegion(*parts)


def _parse_sigmas(text):
    return tuple(float(p) for p in text.split(",") if p != "")


def _parse_methods(text):
    return tuple(p.strip() for p in text.split(",") if p.strip())


def build_config(argv=None):
    p = argparse.ArgumentParser(
        prog="homreg-bench",
        description="Randomized corner-perturbation benchmark. Desk-scale "
                    "defaults: 100 trials, sigma 0..14 step 2; pass "
                    "--full-scale for 1000 trials, sigma 0..20 step 1.")
    p.add_argument("--image", default=None,
                   help="grayscale reference image (default: bundled)")
    p.add_argument("--template", type=_parse_template, default=None,
                   help="X,Y,W,H rectangle (default: centered 100x100)")
    p.add_argument("--sigmas", type=_parse_sigmas, default=None,
                   help="comma-separated perturbation levels in px")
    p.add_argument("--trials", type=int, default=None,
                   help="trials per sigma (default 100)")
    p.add_argument("--methods", type=_parse_methods,
                   default=tuple(METHODS),
                   help="comma-separated subset of " + ",".join(METHODS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes; 1 = bitwise-reproducible")
    p.add_argument("--out", default="bench-out")
    p.add_argument("--full-scale", action="store_true",
                   help="full campaign: 1000 trials, sigma 0..20 step 1")
    args = p.parse_args(argv)

    image = args.image if args.image else bundled_reference_path()
    if args.template is None:
        img = load_gray(image)
        h, w = img.shape
        template = TemplateRegion((w - 100) // 2, (h - 100) // 2, 100, 100)
    else:
        template = args.template
    if args.sigmas is None:
        sigmas = tuple(float(s) for s in range(0, 21)) if args.full_scale \
            else tuple(float(s) for s in range(0, 15, 2))
    else:
        sigmas = args.sigmas
    trials = args.trials if args.trials is not None \
        else (1000 if args.full_scale else 100)
    return BenchConfig(image=image, template=template, sigmas=sigmas,
                       trials=trials, methods=args.methods, seed=args.seed,
                       threads=args.threads, out=args.out)


def main(argv=None):
    config = build_config(argv)
    records = run_campaign(config)
    out = write_outputs(config, records)
    for sigma in config.sigmas:
        parts = []
        for method in config.methods:
            cell = [r for r in records
                    if r.sigma == sigma and r.method == method]
            pct = 100.0 * sum(r.converged for r in cell) / len(cell)
            parts.append(f"{method} {pct:5.1f}%")
        print(f"sigma {sigma:5g}: " + "  ".join(parts))
    print(f"wrote {out}/convergence.csv rate.csv timing.csv manifest.json")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
