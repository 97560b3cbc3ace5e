"""Keypoint detection, matching and robust homography fitting.

The default backend is ORB (FAST corners + oriented BRIEF binary
descriptors); any detector can be slotted in by implementing
``detect(img_u8) -> FeatureSet`` and exposing ``patch_radius``.
Positions are always reported in the coordinates of the full image the
region was cut from.
"""

from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import DegenerateHomographyError, GlobalSearchFailedError
from .geometry import dlt_homography, inverse
from .image import TemplateRegion, to_uint8


@dataclass(frozen=True)
class FeatureSet:
    """Keypoints plus descriptors as parallel arrays."""

    positions: np.ndarray    # (n, 2) float64, (u, v)
    responses: np.ndarray    # (n,) float64
    scales: np.ndarray       # (n,) float64
    descriptors: np.ndarray  # (n, d); uint8 rows are binary descriptors

    def __len__(self):
        return len(self.positions)

    def take(self, idx):
        return FeatureSet(self.positions[idx], self.responses[idx],
                          self.scales[idx], self.descriptors[idx])


def _empty_feature_set(dim=32, dtype=np.uint8):
    return FeatureSet(np.zeros((0, 2)), np.zeros(0), np.zeros(0),
                      np.zeros((0, dim), dtype=dtype))


@dataclass(frozen=True)
class FeatureMatch:
    """A reference-template point q_star matched to a current-image point q."""

    q_star: tuple
    q: tuple
    distance: float


class OrbBackend:
    """ORB detector/descriptor behind the uniform backend interface."""

    def __init__(self, max_features=8000, fast_threshold=12):
        self.max_features = max_features
        self.fast_threshold = fast_threshold
        # the descriptor patch also sets how far detections must stay
        # from a crop border to be trustworthy
        self.patch_radius = 31
        self._orb = cv2.ORB_create(nfeatures=max_features,
                                   fastThreshold=fast_threshold)

    def detect(self, img_u8):
        kps, desc = self._orb.detectAndCompute(img_u8, None)
        if not kps:
            return _empty_feature_set()
        pos = np.array([k.pt for k in kps], dtype=np.float64)
        resp = np.array([k.response for k in kps], dtype=np.float64)
        scale = np.array([k.size for k in kps], dtype=np.float64)
        return FeatureSet(pos, resp, scale, np.asarray(desc))


def detect_and_describe(img, region=None, backend=None, max_features=None):
    """Detect keypoints, optionally restricted to a rectangular region.

    Detection runs on the region dilated by the backend patch radius so
    border keypoints keep their context; only positions inside the region
    proper are returned.  Results are sorted by response (ties broken by
    position) and capped.
    """
    if backend is None:
        backend = OrbBackend()
    cap = backend.max_features if max_features is None else max_features
    img_u8 = to_uint8(img)
    h, w = img_u8.shape

    off_x = off_y = 0
    if region is not None:
        pad = backend.patch_radius
        x0 = max(0, region.x - pad)
        y0 = max(0, region.y - pad)
        x1 = min(w, region.x + region.width + pad)
        y1 = min(h, region.y + region.height + pad)
        if x1 - x0 < 16 or y1 - y0 < 16:
            return _empty_feature_set()
        img_u8 = np.ascontiguousarray(img_u8[y0:y1, x0:x1])
        off_x, off_y = x0, y0

    feats = backend.detect(img_u8)
    if len(feats) == 0:
        return feats
    pos = feats.positions + [off_x, off_y]
    feats = FeatureSet(pos, feats.responses, feats.scales, feats.descriptors)

    if region is not None:
        inside = ((pos[:, 0] >= region.x)
                  & (pos[:, 0] <= region.x + region.width - 1)
                  & (pos[:, 1] >= region.y)
                  & (pos[:, 1] <= region.y + region.height - 1))
        feats = feats.take(np.flatnonzero(inside))

    order = np.lexsort((feats.positions[:, 1], feats.positions[:, 0],
                        -feats.responses))
    return feats.take(order[:cap])


def _distance_matrix(ref_desc, cur_desc):
    if ref_desc.dtype == np.uint8:
        if ref_desc.shape[1] % 8 == 0:
            a = np.ascontiguousarray(ref_desc).view(np.uint64)
            b = np.ascontiguousarray(cur_desc).view(np.uint64)
        else:
            a, b = ref_desc, cur_desc
        x = a[:, None, :] ^ b[None, :, :]
        return np.bitwise_count(x).sum(axis=2).astype(np.float64)
    a = ref_desc.astype(np.float64)
    b = cur_desc.astype(np.float64)
    sq = (np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :]
          - 2.0 * a @ b.T)
    return np.sqrt(np.maximum(sq, 0.0))


def match_descriptors(ref, cur, ratio=0.8):
    """Nearest-neighbor matching with Lowe ratio test and mutual-best check.

    Equal best and second-best distances give ratio 1 and are rejected,
    including the all-zero-distance case.
    """
    if len(ref) == 0 or len(cur) == 0:
        return []
    d = _distance_matrix(ref.descriptors, cur.descriptors)
    best_j = np.argmin(d, axis=1)
    best_d = d[np.arange(len(ref)), best_j]

    if d.shape[1] >= 2:
        part = np.partition(d, 1, axis=1)
        second = part[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(second > 0, best_d / second,
                         np.where(best_d == 0, 1.0, np.inf))
        keep = r <= ratio
    else:
        keep = np.ones(len(ref), dtype=bool)

    cur_best_i = np.argmin(d, axis=0)
    mutual = cur_best_i[best_j] == np.arange(len(ref))
    keep &= mutual

    matches = []
    for i in np.flatnonzero(keep):
        j = best_j[i]
        matches.append(FeatureMatch(tuple(ref.positions[i]),
                                    tuple(cur.positions[j]),
                                    float(best_d[i])))
    return matches


def match_arrays(matches):
    """Matches as (q_star (n,2), q (n,2)) arrays."""
    if not matches:
        return np.zeros((0, 2)), np.zeros((0, 2))
    qs = np.array([m.q_star for m in matches], dtype=np.float64)
    q = np.array([m.q for m in matches], dtype=np.float64)
    return qs, q


def _transfer_errors(H, H_inv, qs, q):
    """Symmetric transfer error d(w(H,q*), q)^2 + d(w(H^-1,q), q*)^2."""
    def _sq(M, src, dst):
        g = src @ M[:, :2].T + M[:, 2]
        denom = g[:, 2]
        bad = np.abs(denom) < 1e-9
        safe = np.where(bad, 1.0, denom)
        proj = g[:, :2] / safe[:, None]
        e = np.sum((proj - dst) ** 2, axis=1)
        return np.where(bad, np.inf, e)

    return _sq(H, qs, q) + _sq(H_inv, q, qs)


def robust_homography(matches, threshold=3.0, confidence=0.995,
                      max_iters=1000, rng=None, min_inliers=4):
    """RANSAC over 4-point DLT samples, then DLT refit on the inliers.

    Returns (H in SL(3), inlier mask).  Raises GlobalSearchFailedError
    when fewer than 4 matches are given or no model reaches min_inliers.
    """
    n = len(matches)
    if n < 4:
        raise GlobalSearchFailedError(f"need at least 4 matches, got {n}")
    if rng is None:
        rng = np.random.default_rng(0)
    qs, q = match_arrays(matches)
    thr_sq = float(threshold) ** 2

    best_mask = None
    best_count = 0
    best_sse = np.inf
    needed = max_iters
    it = 0
    while it < needed and it < max_iters:
        it += 1
        idx = rng.choice(n, size=4, replace=False)
        try:
            H = dlt_homography(qs[idx], q[idx])
            H_inv = inverse(H)
        except DegenerateHomographyError:
            continue
        err = _transfer_errors(H, H_inv, qs, q)
        mask = err <= thr_sq
        count = int(mask.sum())
        sse = float(err[mask].sum())
        if count > best_count or (count == best_count and sse < best_sse):
            best_count = count
            best_sse = sse
            best_mask = mask
            # adaptive stopping from the current inlier ratio
            w = count / n
            if w >= 1.0:
                break
            denom = np.log(max(1.0 - w ** 4, 1e-12))
            needed = min(max_iters,
                         int(np.ceil(np.log(1.0 - confidence) / denom)))

    if best_mask is None or best_count < min_inliers:
        raise GlobalSearchFailedError(
            f"no homography with {min_inliers} inliers over {n} matches")

    try:
        H = dlt_homography(qs[best_mask], q[best_mask])
    except DegenerateHomographyError:
        raise GlobalSearchFailedError("inlier set is degenerate")
    return H, best_mask


def rmsd_fb(H, matches):
    """Root mean squared feature transfer error under H, in pixels."""
    if not matches:
        raise ValueError("d_FB is undefined with no matches")
    qs, q = match_arrays(matches)
    g = qs @ H[:, :2].T + H[:, 2]
    denom = g[:, 2]
    bad = np.abs(denom) < 1e-9
    safe = np.where(bad, 1.0, denom)
    proj = g[:, :2] / safe[:, None]
    sq = np.where(bad, np.inf, np.sum((proj - q) ** 2, axis=1))
    return float(np.sqrt(np.mean(sq)))
