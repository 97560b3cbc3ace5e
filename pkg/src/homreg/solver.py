"""Unified intensity + feature homography estimation on a pyramid.

One estimate() call runs: optional integer-translation predictor, the
ZNCC-gated local/global feature policy, then damped Gauss-Newton over the
pyramid, coarse to fine.  Intensity residuals use gradient averaging
between the current and reference images (second-order behavior near the
solution); feature residuals are reprojection differences of the matched
keypoints.  The two stacks are blended by weights driven by the feature
RMSD, so the feature term dominates far from the solution and the
intensity term takes over for subpixel refinement.

``converged`` in the report means the final appearance check passed
(ZNCC against the reference template at or above the local threshold);
callers with ground truth apply their own geometric criterion.
"""

import json
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    DegenerateHomographyError,
    GlobalSearchFailedError,
    PointAtInfinityError,
    SingularSystemError,
    TemplateLostError,
    ZeroVarianceError,
)
from .features import (
    OrbBackend,
    detect_and_describe,
    match_arrays,
    match_descriptors,
    robust_homography,
    rmsd_fb,
)
from .geometry import (
    compose,
    exp_lie,
    normalize_det,
    sl3_point_jacobian,
    spatial_jacobian,
    translation,
    warp_points,
)
from .image import (
    TemplateRegion,
    build_pyramid,
    image_gradient,
    sample_with_gradient,
    scale_homography,
    warp_template,
    zncc,
)
from .photometric import Photometric


class Mode(Enum):
    IB_ONLY = "ib"
    FB_ONLY = "fb"
    UNIFIED = "unified"


@dataclass(frozen=True)
class SolverConfig:
    mode: Mode = Mode.UNIFIED
    photometric_enabled: bool = True
    predictor_enabled: bool = False
    pyramid_levels: int = 3
    iterations_per_level: int = 3
    zncc_local_threshold: float = 0.6
    predictor_search_radius: int = 15
    step_stop_epsilon: float = 1e-6
    damping_lambda0: float = 1e-4
    seed: int = 0
    # curation of the match set by geometric consensus before the solve;
    # distinct from robust weighting inside the cost (huber_fb below)
    verify_matches: bool = True
    huber_fb: bool = False
    huber_scale: float = 3.0

    def __post_init__(self):
        if self.pyramid_levels < 1 or self.iterations_per_level < 1:
            raise ValueError("counts must be at least 1")
        if not -1.0 < self.zncc_local_threshold < 1.0:
            raise ValueError("zncc threshold must lie in (-1, 1)")
        if self.mode is Mode.FB_ONLY and self.photometric_enabled:
            raise ValueError(
                "feature residuals carry no intensity; disable photometric")


@dataclass
class StepRecord:
    label: str
    H: np.ndarray
    alpha: float
    beta: float
    d_fb: float | None
    w_fb: float
    residual_norm: float
    step_norm: float
    corner_shift_rms: float
    wall_time: float


@dataclass
class SolverReport:
    steps: list
    H: np.ndarray
    alpha: float
    beta: float
    converged: bool
    final_zncc: float | None
    used_predictor: bool
    used_global_search: bool
    num_matches: int
    error: str | None = None

    def to_json(self):
        doc = {
            "steps": [
                {
                    "label": s.label,
                    "H": np.asarray(s.H).tolist(),
                    "alpha": s.alpha,
                    "beta": s.beta,
                    "d_fb": s.d_fb,
                    "w_fb": s.w_fb,
                    "residual_norm": s.residual_norm,
                    "step_norm": s.step_norm,
                    "corner_shift_rms": s.corner_shift_rms,
                    "wall_time": s.wall_time,
                }
                for s in self.steps
            ],
            "H": np.asarray(self.H).tolist(),
            "alpha": self.alpha,
            "beta": self.beta,
            "converged": self.converged,
            "final_zncc": self.final_zncc,
            "used_predictor": self.used_predictor,
            "used_global_search": self.used_global_search,
            "num_matches": self.num_matches,
            "error": self.error,
        }
        return json.dumps(doc)


@dataclass(frozen=True)
class _LevelData:
    region: TemplateRegion
    grid: np.ndarray       # (m, 2) integer pixel coordinates, as float
    values: np.ndarray     # (m,)
    gradients: np.ndarray  # (m, 2)


class ReferenceTemplate:
    """Precomputed per-level template data plus reference keypoints."""

    def __init__(self, image, region, levels=3, backend=None):
        image = np.asarray(image, dtype=float)
        if not region.inside(image):
            raise ValueError("template region must lie inside the image")
        self.image = image
        self.region = region
        self.levels = levels
        self.backend = backend if backend is not None else OrbBackend()
        self.pyramid = build_pyramid(image, levels)

        self._level_data = []
        for k, img_k in enumerate(self.pyramid):
            reg = region.scaled(2 ** k)
            if reg.width < 8 or reg.height < 8:
                raise ValueError(
                    "template footprint shrinks below 8x8 at the "
                    f"coarsest level (level {k + 1}: "
                    f"{reg.width}x{reg.height})")
            grid = reg.grid()
            ys = slice(reg.y, reg.y + reg.height)
            xs = slice(reg.x, reg.x + reg.width)
            values = img_k[ys, xs].astype(float).ravel()
            gu, gv = image_gradient(img_k)
            grads = np.column_stack([gu[ys, xs].ravel(), gv[ys, xs].ravel()])
            self._level_data.append(_LevelData(reg, grid, values, grads))

        self.features = detect_and_describe(image, region, self.backend)

    def level(self, k):
        return self._level_data[k]

    @property
    def corners(self):
        return self.region.corners()


def ib_residuals_and_jacobian(ref, level, cur_level, H_level, photo,
                              photometric=True, esm=True):
    """Intensity residual stack and its Jacobian at one pyramid level.

    Residual rows are a_i = alpha*I(w(H, p_i)) + beta - I*(p_i) over the
    template pixels whose warp lands in bounds.  Lie columns contract the
    (optionally averaged) image gradient with the warp derivative at the
    warped position; with esm=True the current-image gradient is averaged
    with the reference gradient transported through the warp, which
    coincides with the plain first-order Jacobian at the exact solution.

    Returns (y, J, valid_count).  Raises TemplateLostError when fewer than
    10% of template pixels remain valid.
    """
    data = ref.level(level)
    try:
        pts = warp_points(H_level, data.grid)
    except PointAtInfinityError:
        raise TemplateLostError("template warps through infinity")
    vals, grads, valid = sample_with_gradient(cur_level, pts)
    m_valid = int(valid.sum())
    if m_valid < max(4, 0.1 * data.grid.shape[0]):
        raise TemplateLostError(
            f"only {m_valid}/{data.grid.shape[0]} template pixels visible")

    vals = vals[valid]
    y = photo.alpha * vals + photo.beta - data.values[valid]

    g = photo.alpha * grads[valid]
    if esm:
        # transport the reference gradient to the current frame so both
        # summands live at the warped position
        J_sp = spatial_jacobian(H_level, data.grid[valid])
        det = (J_sp[:, 0, 0] * J_sp[:, 1, 1]
               - J_sp[:, 0, 1] * J_sp[:, 1, 0])
        ok = np.abs(det) > 1e-9
        inv_det = np.where(ok, det, 1.0)
        g_ref = data.gradients[valid]
        gu = (g_ref[:, 0] * J_sp[:, 1, 1]
              - g_ref[:, 1] * J_sp[:, 1, 0]) / inv_det
        gv = (-g_ref[:, 0] * J_sp[:, 0, 1]
              + g_ref[:, 1] * J_sp[:, 0, 0]) / inv_det
        g_ref_cur = np.column_stack([gu, gv])
        g_ref_cur[~ok] = g[~ok]
        g = 0.5 * (g + g_ref_cur)

    J_w = sl3_point_jacobian(pts[valid])
    J_lie = np.einsum("ni,nij->nj", g, J_w)
    if photometric:
        J = np.column_stack([J_lie, vals, np.ones(m_valid)])
    else:
        J = J_lie
    return y, J, m_valid


def fb_residuals_and_jacobian(q_star, q, H_level, scale=1.0,
                              photometric=True):
    """Feature residual stack and Jacobian, expressed in full-res pixels.

    Rows come in (u, v) pairs per match: w(H, q*_j) - q_j.  When evaluated
    at a coarser pyramid level the residual and Jacobian are multiplied by
    the pixel scale so every level optimizes the same geometric objective.
    Matches whose warp degenerates are dropped from the stack.
    """
    if len(q_star) == 0:
        cols = 10 if photometric else 8
        return np.zeros(0), np.zeros((0, cols))
    qs_l = np.asarray(q_star, dtype=float) / scale
    q_l = np.asarray(q, dtype=float) / scale
    g = qs_l @ H_level[:, :2].T + H_level[:, 2]
    denom = g[:, 2]
    ok = np.abs(denom) > 1e-9
    qs_l, q_l, g, denom = qs_l[ok], q_l[ok], g[ok], denom[ok]
    if len(qs_l) == 0:
        cols = 10 if photometric else 8
        return np.zeros(0), np.zeros((0, cols))
    warped = g[:, :2] / denom[:, None]

    y = ((warped - q_l) * scale).reshape(-1)
    J_w = sl3_point_jacobian(warped) * scale
    J_lie = J_w.reshape(-1, 8)
    if photometric:
        J = np.column_stack([J_lie, np.zeros((len(y), 2))])
    else:
        J = J_lie
    return y, J


def compute_weights(d_fb):
    """Convex blend of the two stacks from the feature RMSD.

    w_FB = 1 - exp(-d_FB), w_IB = 1 - w_FB.  d_fb None means no matches
    are available and the solver runs purely on intensity.
    """
    if d_fb is None:
        return 1.0, 0.0
    if d_fb < 0:
        raise ValueError("d_FB must be nonnegative")
    w_fb = 1.0 - np.exp(-float(d_fb))
    return 1.0 - w_fb, w_fb


def assemble_and_solve(y_ib, J_ib, m_valid, y_fb, J_fb, n_matches,
                       weights, lam):
    """Scale, stack and solve the damped normal equations.

    Intensity rows are scaled by sqrt(w_IB/m'), feature rows by
    sqrt(w_FB/(2n)); the step solves (J^T J + lam*diag(J^T J)) z = -J^T y.
    Returns (z, cost) with cost the squared norm of the scaled residual.
    """
    blocks_y, blocks_j = [], []
    w_ib, w_fb = weights
    if y_ib is not None and len(y_ib) and w_ib > 0:
        s = np.sqrt(w_ib / m_valid)
        blocks_y.append(s * y_ib)
        blocks_j.append(s * J_ib)
    if y_fb is not None and len(y_fb) and w_fb > 0:
        s = np.sqrt(w_fb / (2 * n_matches))
        blocks_y.append(s * y_fb)
        blocks_j.append(s * J_fb)
    if not blocks_y:
        raise SingularSystemError("both residual stacks are empty")

    y = np.concatenate(blocks_y)
    J = np.vstack(blocks_j)
    cost = float(y @ y)
    JtJ = J.T @ J
    rhs = -J.T @ y
    A = JtJ + lam * np.diag(np.diag(JtJ))
    try:
        z = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        raise SingularSystemError("damped normal equations are singular")
    if not np.all(np.isfinite(z)):
        raise SingularSystemError("non-finite update")
    return z, cost


def apply_update(H, photo, z, photometric=True):
    """Left-compose the Lie increment onto H; photometric adds."""
    H_new = normalize_det(exp_lie(z[:8]) @ H)
    if photometric and len(z) >= 10:
        photo = photo.compose(float(z[8]), float(z[9]))
    return H_new, photo


def _masked_zncc_rows(template, values, valid, min_count):
    """ZNCC of each row of (values, valid) against the shared template."""
    cnt = valid.sum(axis=1)
    tm = np.where(valid, template[None, :], 0.0)
    vm = np.where(valid, values, 0.0)
    safe = np.maximum(cnt, 1)
    mu_t = tm.sum(axis=1) / safe
    mu_v = vm.sum(axis=1) / safe
    cov = (tm * vm).sum(axis=1) - cnt * mu_t * mu_v
    var_t = (tm * tm).sum(axis=1) - cnt * mu_t ** 2
    var_v = (vm * vm).sum(axis=1) - cnt * mu_v ** 2
    denom = np.sqrt(np.maximum(var_t, 0.0) * np.maximum(var_v, 0.0))
    scores = np.where((cnt >= min_count) & (denom > 1e-12),
                      cov / np.where(denom > 1e-12, denom, 1.0), -np.inf)
    return scores


def zncc_predictor(ref, cur_pyramid, H, radius):
    """Integer-translation search at the coarsest level, maximizing ZNCC.

    Returns H pre-composed with the best full-resolution translation; ties
    go to the smallest displacement, then lexicographic (du, dv).  A flat
    template (or an entirely out-of-frame warp) leaves H unchanged.
    """
    k = len(cur_pyramid) - 1
    s = 2 ** k
    data = ref.level(k)
    if np.ptp(data.values) == 0:
        return H
    cur = cur_pyramid[k]
    h, w = cur.shape
    H_k = scale_homography(H, 1, s)
    grid, template = data.grid, data.values
    if len(grid) > 256:
        # a regular subgrid scores translations just as reliably and keeps
        # the exhaustive search cheap enough for per-frame use
        stride = int(np.ceil(np.sqrt(len(grid) / 256.0)))
        rw = data.region.width
        keep = ((np.arange(len(grid)) % rw) % stride == 0) \
            & ((np.arange(len(grid)) // rw) % stride == 0)
        grid, template = grid[keep], template[keep]
    try:
        base = warp_points(H_k, grid)
    except PointAtInfinityError:
        return H

    x, y = base[:, 0], base[:, 1]
    finite = np.isfinite(x) & np.isfinite(y)
    if not finite.all():
        return H
    # integer search only needs integer samples: rounding the base grid
    # moves each probe under half a pixel, which the ZNCC landscape of a
    # whole template does not notice, and saves the interpolation entirely
    x0 = np.rint(x).astype(np.intp)
    y0 = np.rint(y).astype(np.intp)

    offs = np.arange(-radius, radius + 1)
    dv, du = np.meshgrid(offs, offs, indexing="ij")
    du = du.ravel()
    dv = dv.ravel()

    ix = x0[None, :] + du[:, None]
    iy = y0[None, :] + dv[:, None]
    valid = (ix >= 0) & (ix <= w - 1) & (iy >= 0) & (iy <= h - 1)
    ixc = np.clip(ix, 0, w - 1)
    iyc = np.clip(iy, 0, h - 1)
    vals = cur[iyc, ixc]

    m = grid.shape[0]
    scores = _masked_zncc_rows(template, vals, valid,
                               min_count=max(8, int(0.3 * m)))
    if not np.any(np.isfinite(scores)):
        return H
    order = np.lexsort((dv, du, du ** 2 + dv ** 2, -scores))
    best = order[0]
    if du[best] == 0 and dv[best] == 0:
        return H
    shift = translation(s * float(du[best]), s * float(dv[best]))
    return normalize_det(shift @ H)


@dataclass
class PolicyOutcome:
    decision: str                 # "local" or "global"
    H: np.ndarray
    matches: list
    score: float
    used_global: bool = False
    global_failed: bool = False


def local_global_policy(ref, cur, H, config, rng):
    """ZNCC-gated choice between region-restricted and full-image search.

    Score at or above the threshold keeps H and detects only inside the
    warped-corner bounding box (dilated by the detector patch radius);
    below it, full-image detection + matching + robust fitting replace H.
    A failed global search keeps the prior H with no matches, which sends
    the solver down the intensity-only fallback.
    """
    try:
        vals, valid = warp_template(cur, H, ref.region)
        score = zncc(vals, ref.level(0).values, mask=valid)
    except (PointAtInfinityError, ZeroVarianceError):
        score = -1.0

    if score >= config.zncc_local_threshold:
        matches = _local_matches(ref, cur, H, config, rng)
        return PolicyOutcome("local", H, matches, score)

    feats = detect_and_describe(cur, None, ref.backend)
    matches = match_descriptors(ref.features, feats)
    try:
        # a 4-of-n consensus is meaningless (any four matches fit some
        # homography exactly), so replacing H requires twice the minimal
        # sample; spurious fits on an occluded template fail here
        H_new, inliers = robust_homography(matches, min_inliers=8, rng=rng)
    except GlobalSearchFailedError:
        return PolicyOutcome("global", H, [], score,
                             used_global=True, global_failed=True)
    # the fitted estimate localizes the template, so a region-restricted
    # pass recovers far more correspondences than survive full-image
    # matching; fall back to the consensus set if it comes up short
    local = _local_matches(ref, cur, H_new, config, rng)
    if len(local) < int(inliers.sum()):
        local = [m for m, keep in zip(matches, inliers) if keep]
    return PolicyOutcome("global", H_new, local, score, used_global=True)


def _local_matches(ref, cur, H, config, rng):
    """Detect inside the warped-corner box of H and match to the template.

    The raw corner box is passed through; detect_and_describe dilates the
    crop by the patch radius itself.  When H is exact this makes the
    current crop identical to the reference crop, so match positions (and
    hence d_FB) carry no resampling jitter.
    """
    try:
        corners = warp_points(H, ref.corners)
    except PointAtInfinityError:
        corners = ref.corners
    x0 = int(np.floor(corners[:, 0].min()))
    y0 = int(np.floor(corners[:, 1].min()))
    # corners are inclusive pixel centers; +1 for the exclusive bound
    x1 = int(np.ceil(corners[:, 0].max())) + 1
    y1 = int(np.ceil(corners[:, 1].max())) + 1
    h, w = cur.shape
    x0, y0 = max(0, x0), max(0, y0)
    x1, y1 = min(w, x1), min(h, y1)
    matches = []
    if x1 - x0 >= 16 and y1 - y0 >= 16:
        region = TemplateRegion(x0, y0, x1 - x0, y1 - y0)
        feats = detect_and_describe(cur, region, ref.backend)
        matches = match_descriptors(ref.features, feats)
    if config.verify_matches and len(matches) >= 8:
        try:
            _, inliers = robust_homography(matches, rng=rng)
            matches = [m for m, keep in zip(matches, inliers) if keep]
        except GlobalSearchFailedError:
            pass
    return matches


def _corner_shift(H_prev, H_new, corners):
    try:
        d = warp_points(H_new, corners) - warp_points(H_prev, corners)
    except PointAtInfinityError:
        return float("inf")
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def _huber_row_weights(y, scale):
    norms = np.sqrt(y[0::2] ** 2 + y[1::2] ** 2)
    w = np.minimum(1.0, scale / np.maximum(norms, 1e-12))
    return np.repeat(np.sqrt(w), 2)


def estimate(ref, cur, config=None, H0=None, photo0=None):
    """Run the full estimation pipeline on one image.

    Returns a SolverReport whose steps are labeled "predictor", "global"
    and "<level>-<iteration>" with level 1 the coarsest.
    """
    if config is None:
        config = SolverConfig()
    cur = np.asarray(cur, dtype=float)
    H = normalize_det(np.eye(3) if H0 is None else np.asarray(H0, float))
    photo = Photometric() if photo0 is None else photo0
    rng = np.random.default_rng(config.seed)

    pyr = build_pyramid(cur, config.pyramid_levels)
    steps = []
    used_predictor = False
    used_global = False
    error = None
    matches = []
    corners = ref.corners

    def record(label, H_prev, d_fb, w_fb, res_norm, step_norm, t0):
        steps.append(StepRecord(
            label=label, H=H.copy(), alpha=photo.alpha, beta=photo.beta,
            d_fb=d_fb, w_fb=w_fb, residual_norm=res_norm,
            step_norm=step_norm,
            corner_shift_rms=_corner_shift(H_prev, H, corners),
            wall_time=time.perf_counter() - t0))

    if config.predictor_enabled:
        t0 = time.perf_counter()
        H_prev = H
        H = zncc_predictor(ref, pyr, H, config.predictor_search_radius)
        used_predictor = True
        record("predictor", H_prev, None, 0.0, 0.0, 0.0, t0)

    use_fb = config.mode in (Mode.FB_ONLY, Mode.UNIFIED)
    if use_fb:
        t0 = time.perf_counter()
        H_prev = H
        outcome = local_global_policy(ref, cur, H, config, rng)
        matches = outcome.matches
        if outcome.used_global:
            used_global = True
            H = outcome.H
            if not outcome.global_failed:
                # features estimate geometry only; illumination restarts
                photo = Photometric()
            record("global", H_prev, None, 0.0, 0.0, 0.0, t0)
        if outcome.global_failed:
            # without a replacement estimate UNIFIED proceeds IB-only on
            # the kept H; FB-only has no intensity term to fall back to
            if config.mode is Mode.FB_ONLY:
                error = "global-estimation-failed"
                return _final_report(ref, cur, config, H, photo, steps,
                                     used_predictor, used_global, matches,
                                     error)
        if config.mode is Mode.FB_ONLY and not matches:
            error = error or "global-estimation-failed"
            return _final_report(ref, cur, config, H, photo, steps,
                                 used_predictor, used_global, matches, error)

    q_star, q = match_arrays(matches)
    n = len(matches)
    run_fb = use_fb and n >= 1
    run_ib = config.mode is not Mode.FB_ONLY

    lam = config.damping_lambda0
    try:
        for k in range(config.pyramid_levels - 1, -1, -1):
            s = 2 ** k
            H_k = scale_homography(H, 1, s)
            level_label = config.pyramid_levels - k
            prev_cost = None
            for it in range(1, config.iterations_per_level + 1):
                t0 = time.perf_counter()
                H_prev = H

                d_fb = None
                if run_fb:
                    d_fb = rmsd_fb(H, matches)
                if config.mode is Mode.IB_ONLY:
                    weights = (1.0, 0.0)
                elif config.mode is Mode.FB_ONLY:
                    weights = (0.0, 1.0)
                else:
                    weights = compute_weights(d_fb)

                y_ib = J_ib = None
                m_valid = 0
                if run_ib:
                    y_ib, J_ib, m_valid = ib_residuals_and_jacobian(
                        ref, k, pyr[k], H_k, photo,
                        photometric=config.photometric_enabled)
                y_fb = J_fb = None
                if run_fb:
                    y_fb, J_fb = fb_residuals_and_jacobian(
                        q_star, q, H_k, scale=s,
                        photometric=config.photometric_enabled
                        and run_ib)
                    if config.huber_fb and len(y_fb):
                        hw = _huber_row_weights(y_fb, config.huber_scale)
                        y_fb = y_fb * hw
                        J_fb = J_fb * hw[:, None]

                z, cost = assemble_and_solve(
                    y_ib, J_ib, m_valid, y_fb, J_fb, n, weights, lam)
                if prev_cost is not None:
                    lam = min(lam * 10.0, 1e8) if cost > prev_cost \
                        else max(lam / 10.0, 1e-12)
                prev_cost = cost

                H_k, photo = apply_update(
                    H_k, photo, z,
                    photometric=config.photometric_enabled and run_ib)
                H = scale_homography(H_k, s, 1)
                step_norm = float(np.linalg.norm(z))
                record(f"{level_label}-{it}", H_prev, d_fb, weights[1],
                       float(np.sqrt(cost)), step_norm, t0)
                if step_norm < config.step_stop_epsilon:
                    break
    except (TemplateLostError, SingularSystemError) as exc:
        error = ("template-lost" if isinstance(exc, TemplateLostError)
                 else "singular-system")

    return _final_report(ref, cur, config, H, photo, steps,
                         used_predictor, used_global, matches, error)


def _final_report(ref, cur, config, H, photo, steps, used_predictor,
                  used_global, matches, error):
    final_zncc = None
    try:
        vals, valid = warp_template(cur, H, ref.region)
        final_zncc = zncc(vals, ref.level(0).values, mask=valid)
    except (PointAtInfinityError, ZeroVarianceError):
        pass
    converged = (error is None and final_zncc is not None
                 and final_zncc >= config.zncc_local_threshold)
    return SolverReport(
        steps=steps, H=H, alpha=photo.alpha, beta=photo.beta,
        converged=converged, final_zncc=final_zncc,
        used_predictor=used_predictor, used_global_search=used_global,
        num_matches=len(matches), error=error)
