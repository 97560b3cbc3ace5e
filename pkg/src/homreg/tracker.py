"""Frame-by-frame template tracking over an image sequence.

Each frame warm-starts from the previous frame's homography and
photometric state, with the coarse-level predictor enabled.  Per-frame
results stream to a JSON-lines log; optionally every frame is written
back out with the tracked quadrilateral drawn on it.
"""

import argparse
import json
import os
import time
from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import HomregError
from .geometry import warp_points
from .image import TemplateRegion, load_gray
from .photometric import Photometric
from .solver import Mode, ReferenceTemplate, SolverConfig, estimate


def default_tracker_solver():
    return SolverConfig(mode=Mode.UNIFIED, predictor_enabled=True)


@dataclass(frozen=True)
class TrackerConfig:
    frames: tuple
    template: TemplateRegion
    ref_frame: int = 0
    solver: SolverConfig = field(default_factory=default_tracker_solver)
    out: str = "track.jsonl"
    annotate: str = None

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("need at least 2 frames")
        if not 0 <= self.ref_frame < len(self.frames):
            raise ValueError("ref_frame outside the sequence")


@dataclass
class FrameResult:
    frame: int
    H: np.ndarray
    alpha: float
    beta: float
    quad: np.ndarray
    converged: bool
    used_global: bool
    wall_time: float
    skipped: bool = False
    error: str = None

    def to_json(self):
        quad = None if self.quad is None else \
            [[float(c) for c in p] for p in self.quad]
        return json.dumps({
            "frame": self.frame,
            "H": [[float(c) for c in row] for row in self.H],
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "quad": quad,
            "converged": bool(self.converged),
            "used_global": bool(self.used_global),
            "wall_time": float(self.wall_time),
            "skipped": bool(self.skipped),
            "error": self.error,
        })


def bresenham_line(x0, y0, x1, y1):
    """Integer pixel chain between two endpoints, both included.

    Classic integer error-accumulation walk; one pixel per major-axis
    step, so the chain is 8-connected and deterministic.
    """
    x0, y0 = int(round(x0)), int(round(y0))
    x1, y1 = int(round(x1)), int(round(y1))
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    points = []
    while True:
        points.append((x0, y0))
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return np.array(points, dtype=int)


def annotate_frame(frame, quad, path=None, value=255.0):
    """Draw the quad edges on a copy of the frame; optionally write PNG.

    Edge pixels outside the frame are clipped away rather than wrapped.
    """
    out = np.asarray(frame, dtype=float).copy()
    h, w = out.shape
    q = np.asarray(quad, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("quad must be finite")
    for i in range(4):
        x0, y0 = q[i]
        x1, y1 = q[(i + 1) % 4]
        pts = bresenham_line(x0, y0, x1, y1)
        keep = ((pts[:, 0] >= 0) & (pts[:, 0] < w)
                & (pts[:, 1] >= 0) & (pts[:, 1] < h))
        pts = pts[keep]
        out[pts[:, 1], pts[:, 0]] = value
    if path is not None:
        data = np.clip(np.rint(out), 0, 255).astype(np.uint8)
        if not cv2.imwrite(str(path), data):
            raise IOError(f"could not write {path}")
    return out


def _safe_quad(H, corners):
    try:
        quad = warp_points(H, corners)
    except HomregError:
        return None
    return quad if np.all(np.isfinite(quad)) else None


def track_sequence(config):
    """Track the template through every frame, streaming a JSONL log."""
    ref_image = load_gray(config.frames[config.ref_frame])
    ref = ReferenceTemplate(ref_image, config.template)
    corners = ref.corners

    if config.annotate:
        os.makedirs(config.annotate, exist_ok=True)

    H = np.eye(3)
    photo = Photometric()
    results = []
    with open(config.out, "w") as log:
        for k, path in enumerate(config.frames):
            t0 = time.perf_counter()
            converged = False
            used_global = False
            error = None
            skipped = False
            frame = None
            try:
                frame = load_gray(path)
            except IOError:
                skipped = True
                error = "unreadable-frame"
            if frame is not None:
                try:
                    report = estimate(ref, frame, config.solver,
                                      H0=H, photo0=photo)
                except HomregError as exc:
                    error = type(exc).__name__
                else:
                    converged = report.converged
                    used_global = report.used_global_search
                    error = report.error
                    if np.all(np.isfinite(report.H)):
                        H = report.H
                        photo = Photometric(report.alpha, report.beta)
                    else:
                        error = error or "non-finite-estimate"
            result = FrameResult(
                frame=k, H=H.copy(), alpha=photo.alpha, beta=photo.beta,
                quad=_safe_quad(H, corners), converged=converged,
                used_global=used_global,
                wall_time=time.perf_counter() - t0,
                skipped=skipped, error=error)
            results.append(result)
            log.write(result.to_json() + "\n")
            if config.annotate and frame is not None \
                    and result.quad is not None:
                annotate_frame(frame, result.quad,
                               os.path.join(config.annotate,
                                            f"frame_{k:05d}.png"))
    return results


def discover_frames(directory):
    """Image files of a directory in name order."""
    exts = (".png", ".pgm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
    names = sorted(n for n in os.listdir(directory)
                   if n.lower().endswith(exts))
    return tuple(os.path.join(directory, n) for n in names)


def _parse_template(text):
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("template must be X,Y,W,H")
    return TemplateRegion(*parts)


def main(argv=None):
    p = argparse.ArgumentParser(
        prog="homreg-track",
        description="Track a template rectangle through numbered frames "
                    "with warm starting and occlusion recovery.")
    p.add_argument("--frames", required=True,
                   help="directory of image frames, processed in name order")
    p.add_argument("--ref-frame", type=int, default=0,
                   help="index of the frame defining the template")
    p.add_argument("--template", type=_parse_template, default=None,
                   help="X,Y,W,H rectangle (default: centered 100x100)")
    p.add_argument("--out", default="track.jsonl",
                   help="JSON-lines log, one record per frame")
    p.add_argument("--annotate", default=None,
                   help="directory for PNG frames with the quad drawn")
    args = p.parse_args(argv)

    frames = discover_frames(args.frames)
    if args.template is None:
        h, w = load_gray(frames[args.ref_frame]).shape
        template = TemplateRegion((w - 100) // 2, (h - 100) // 2, 100, 100)
    else:
        template = args.template
    config = TrackerConfig(frames=frames, template=template,
                           ref_frame=args.ref_frame, out=args.out,
                           annotate=args.annotate)
    results = track_sequence(config)
    recovered = sum(r.used_global for r in results)
    converged = sum(r.converged for r in results)
    print(f"{len(results)} frames: {converged} converged, "
          f"{recovered} used global search; log: {config.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
