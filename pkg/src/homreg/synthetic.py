"""Synthetic imagery: textured references and scripted motion sequences.

The texture generator mixes multi-octave value noise (dense gradients for
intensity-based alignment) with high-contrast rectangles and discs (corner
structure for the feature detector), which is what both residual families
need to get traction on the same image.
"""

import numpy as np
import cv2

from .geometry import inverse, translation, warp_points
from .image import _binomial_blur, bilinear_sample


def value_noise(height, width, rng, octaves=((64, 1.0), (32, 0.7),
                                             (16, 0.45), (8, 0.25))):
    """Sum of bilinearly upsampled random grids, one per (cell size, amp)."""
    out = np.zeros((height, width))
    total = 0.0
    for cell, amp in octaves:
        gh = height // cell + 2
        gw = width // cell + 2
        grid = rng.uniform(-1.0, 1.0, size=(gh, gw))
        layer = cv2.resize(grid, (width, height),
                           interpolation=cv2.INTER_LINEAR)
        out += amp * layer
        total += amp
    return out / total


def _shape_fill(rng, value, h, w):
    # per-shape internal texture keeps corner descriptors distinguishable
    if h < 3 or w < 3:
        return np.full((h, w), value)
    cell = max(2, min(5, min(h, w) // 2))
    grid = rng.uniform(-1, 1, size=(h // cell + 2, w // cell + 2))
    layer = cv2.resize(grid, (w, h), interpolation=cv2.INTER_LINEAR)
    return value + 25.0 * layer


def _draw_shape(img, rng, cx, cy, size, value):
    height, width = img.shape
    if not (2 <= cx <= width - 3 and 2 <= cy <= height - 3):
        return
    if rng.random() < 0.5:
        hw = size / 2
        hh = size * rng.uniform(0.4, 1.0) / 2
        x0, x1 = int(max(0, cx - hw)), int(min(width, cx + hw))
        y0, y1 = int(max(0, cy - hh)), int(min(height, cy + hh))
        if y1 > y0 and x1 > x0:
            img[y0:y1, x0:x1] = _shape_fill(rng, value, y1 - y0, x1 - x0)
    else:
        r = size / 2
        y0, y1 = int(max(0, cy - r - 1)), int(min(height, cy + r + 2))
        x0, x1 = int(max(0, cx - r - 1)), int(min(width, cx + r + 2))
        yy, xx = np.mgrid[y0:y1, x0:x1]
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        fill = _shape_fill(rng, value, y1 - y0, x1 - x0)
        img[y0:y1, x0:x1][mask] = fill[mask]


def textured_reference(height=533, width=800, seed=7, cell=25,
                       num_large_shapes=60):
    """Reference image with both dense texture and strong corners.

    Small shapes are laid on a jittered grid so every template-sized
    window contains corner structure; intensities stay clear of the base
    noise band so the contrast survives blurring.
    """
    rng = np.random.default_rng(seed)
    img = 128.0 + 45.0 * value_noise(height, width, rng)

    for _ in range(num_large_shapes):
        value = rng.uniform(200, 240) if rng.random() < 0.5 \
            else rng.uniform(15, 55)
        _draw_shape(img, rng,
                    rng.uniform(10, width - 10), rng.uniform(10, height - 10),
                    rng.uniform(16, 40), value)

    # every cell gets a shape: a skipped cell becomes a feature-free patch
    # and homographies fitted on one-sided matches extrapolate badly
    for gy in range(height // cell + 1):
        for gx in range(width // cell + 1):
            cx = (gx + rng.uniform(0.15, 0.85)) * cell
            cy = (gy + rng.uniform(0.15, 0.85)) * cell
            value = rng.uniform(208, 243) if rng.random() < 0.5 \
                else rng.uniform(12, 47)
            _draw_shape(img, rng, cx, cy, rng.uniform(6, 14), value)

    # fine-grained noise makes every descriptor patch unique; without it
    # same-colored shape corners are indistinguishable and the ratio test
    # rejects nearly all matches
    img += 22.0 * value_noise(height, width, rng,
                              octaves=((6, 0.55), (3, 0.45)))

    # soften edges by about a pixel so subpixel alignment has a basin
    img = _binomial_blur(img)
    return np.clip(img, 5.0, 250.0)


def warp_image(ref, H):
    """Full-frame inverse warp: out(p) = ref(w(H^-1, p)), zero outside."""
    h, w = ref.shape
    vv, uu = np.mgrid[0:h, 0:w]
    pts = np.column_stack([uu.ravel(), vv.ravel()]).astype(np.float64)
    src = warp_points(inverse(H), pts)
    # rounding noise in a fitted near-identity H pushes boundary samples a
    # few ulp outside the frame; snap those back instead of zero-filling
    eps = 1e-9
    for axis, limit in ((0, w - 1.0), (1, h - 1.0)):
        c = src[:, axis]
        c[(c > -eps) & (c < 0.0)] = 0.0
        c[(c > limit) & (c < limit + eps)] = limit
    vals, _ = bilinear_sample(ref, src)
    return vals.reshape(h, w)


def translation_sequence(ref, num_frames, step=(2.0, 0.0)):
    """Frames of the reference sliding by ``step`` pixels per frame."""
    frames, homs = [], []
    for k in range(num_frames):
        H = translation(step[0] * k, step[1] * k)
        homs.append(H)
        frames.append(warp_image(ref, H))
    return frames, homs


def occlusion_sequence(ref, region, *, drift_frames=4, occluded_frames=5,
                       final_frames=4, jump=(40.0, 25.0), occluder_value=210.0,
                       occluder_margin=25):
    """Scripted track/occlude/jump sequence for recovery testing.

    Phase 1: the scene drifts slowly.  Phase 2: the scene holds still while
    a flat occluder hides the template completely.  Phase 3: the occluder is
    gone and the scene has jumped far enough that only a global re-detection
    can reacquire it.

    Returns (frames, true_homographies, occluded_flags).
    """
    frames, homs, occluded = [], [], []
    drift = (1.5, 1.0)
    for k in range(drift_frames):
        H = translation(drift[0] * k, drift[1] * k)
        frames.append(warp_image(ref, H))
        homs.append(H)
        occluded.append(False)

    H_hold = homs[-1]
    corners = warp_points(H_hold, region.corners())
    x0 = int(max(0, np.floor(corners[:, 0].min()) - occluder_margin))
    x1 = int(min(ref.shape[1], np.ceil(corners[:, 0].max()) + occluder_margin))
    y0 = int(max(0, np.floor(corners[:, 1].min()) - occluder_margin))
    y1 = int(min(ref.shape[0], np.ceil(corners[:, 1].max()) + occluder_margin))
    for _ in range(occluded_frames):
        frame = warp_image(ref, H_hold)
        frame[y0:y1, x0:x1] = occluder_value
        frames.append(frame)
        homs.append(H_hold)
        occluded.append(True)

    H_final = translation(drift[0] * (drift_frames - 1) + jump[0],
                          drift[1] * (drift_frames - 1) + jump[1])
    for _ in range(final_frames):
        frames.append(warp_image(ref, H_final))
        homs.append(H_final)
        occluded.append(False)

    return frames, homs, occluded
