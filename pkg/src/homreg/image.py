"""Grayscale image container conventions, sampling, gradients and pyramids.

Images are plain (H, W) float64 arrays with intensities in [0, 255];
pixel (u, v) = array[v, u].  A pyramid is a list of such arrays, index 0
at full resolution and index k downsampled by the pixel scale 2**k.
"""

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import ZeroVarianceError
from .geometry import warp_points


def load_gray(path):
    """Load an 8-bit grayscale image (PGM P5 or PNG) as float64 in [0, 255].

    Color PNG inputs are converted with the standard luma weighting.
    """
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise IOError(f"could not read image: {path}")
    return img.astype(np.float64)


def to_uint8(img):
    """Round and clip a float image to uint8."""
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def write_pgm(path, img):
    """Write a float image as binary 8-bit PGM (P5)."""
    data = to_uint8(img)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


@dataclass(frozen=True)
class TemplateRegion:
    """Axis-aligned pixel rectangle inside a parent image.

    The region covers the integer pixels x..x+width-1, y..y+height-1.
    """

    x: int
    y: int
    width: int
    height: int

    @property
    def num_pixels(self):
        return self.width * self.height

    def grid(self):
        """All m pixel coordinates as an (m, 2) array, row-major."""
        us = np.arange(self.x, self.x + self.width)
        vs = np.arange(self.y, self.y + self.height)
        uu, vv = np.meshgrid(us, vs)
        return np.column_stack([uu.ravel(), vv.ravel()]).astype(np.float64)

    def corners(self):
        """Corner pixel centers, ordered tl, tr, br, bl, as a (4, 2) array."""
        x0, y0 = float(self.x), float(self.y)
        x1 = float(self.x + self.width - 1)
        y1 = float(self.y + self.height - 1)
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    def scaled(self, scale):
        """The largest region covered by this one at pixel scale ``scale``."""
        if scale == 1:
            return self
        x0 = int(np.ceil(self.x / scale))
        y0 = int(np.ceil(self.y / scale))
        x1 = int(np.floor((self.x + self.width - 1) / scale))
        y1 = int(np.floor((self.y + self.height - 1) / scale))
        return TemplateRegion(x0, y0, x1 - x0 + 1, y1 - y0 + 1)

    def inside(self, img):
        h, w = img.shape
        return (self.x >= 0 and self.y >= 0
                and self.x + self.width <= w and self.y + self.height <= h)


def bilinear_sample(img, pts):
    """Sample an image at subpixel points with bilinear interpolation.

    Parameters
    ----------
    img : (H, W) array
    pts : (N, 2) array of (u, v) positions.

    Returns
    -------
    values : (N,) array, 0.0 where invalid
    valid : (N,) bool array, True where the point lies in
        [0, W-1] x [0, H-1].
    """
    values, _, valid = _gather_bilinear(img, pts, want_gradient=False)
    return values, valid


def sample_with_gradient(img, pts):
    """Bilinear sample plus the exact derivative of the interpolant.

    The gradient is the analytic derivative of the bilinear surface within
    each pixel cell (piecewise in each coordinate), which makes residual
    Jacobians built from it consistent with finite differences of the
    sampled cost.

    Returns
    -------
    values : (N,) array
    grads : (N, 2) array of (d/du, d/dv)
    valid : (N,) bool array
    """
    return _gather_bilinear(img, pts, want_gradient=True)


def _gather_bilinear(img, pts, want_gradient):
    img = np.asarray(img)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    h, w = img.shape
    x, y = pts[:, 0], pts[:, 1]
    valid = np.isfinite(x) & np.isfinite(y)
    x = np.where(valid, x, 0.0)
    y = np.where(valid, y, 0.0)
    valid &= (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)

    x0 = np.clip(np.floor(x), 0, w - 2).astype(np.intp)
    y0 = np.clip(np.floor(y), 0, h - 2).astype(np.intp)
    fx = np.where(valid, x - x0, 0.0)
    fy = np.where(valid, y - y0, 0.0)

    i00 = img[y0, x0]
    i01 = img[y0, x0 + 1]
    i10 = img[y0 + 1, x0]
    i11 = img[y0 + 1, x0 + 1]

    top = i00 + fx * (i01 - i00)
    bot = i10 + fx * (i11 - i10)
    values = np.where(valid, top + fy * (bot - top), 0.0)

    grads = None
    if want_gradient:
        gx = (1.0 - fy) * (i01 - i00) + fy * (i11 - i10)
        gy = (1.0 - fx) * (i10 - i00) + fx * (i11 - i01)
        grads = np.column_stack([np.where(valid, gx, 0.0),
                                 np.where(valid, gy, 0.0)])
    return values, grads, valid


def warp_template(img, H, region):
    """Sample ``img`` at the warped template grid.

    Returns the m sampled intensities and the in-bounds validity mask for
    region pixels p* mapped through w(H, p*).
    """
    pts = warp_points(H, region.grid())
    values, valid = bilinear_sample(img, pts)
    return values, valid


def image_gradient(img):
    """Per-pixel intensity gradient (dI/du, dI/dv).

    Central differences in the interior, one-sided on the borders; exact
    for affine intensity ramps.
    """
    img = np.asarray(img, dtype=float)
    h, w = img.shape
    if h < 3 or w < 3:
        raise ValueError("image must be at least 3x3 for gradients")
    gu = np.empty_like(img)
    gv = np.empty_like(img)
    gu[:, 1:-1] = (img[:, 2:] - img[:, :-2]) / 2.0
    gu[:, 0] = img[:, 1] - img[:, 0]
    gu[:, -1] = img[:, -1] - img[:, -2]
    gv[1:-1, :] = (img[2:, :] - img[:-2, :]) / 2.0
    gv[0, :] = img[1, :] - img[0, :]
    gv[-1, :] = img[-1, :] - img[-2, :]
    return gu, gv


def _binomial_blur(img):
    # separable 5-tap [1, 4, 6, 4, 1]/16 with edge replication
    k = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    return cv2.sepFilter2D(img, -1, k, k, borderType=cv2.BORDER_REPLICATE)


def build_pyramid(img, levels):
    """Multiresolution pyramid: binomial blur + 2x decimation per level.

    Level k has shape (floor(h / 2**k), floor(w / 2**k)); pixel (u, v) at
    level k+1 sits at (2u, 2v) one level below.
    """
    if levels < 1:
        raise ValueError("pyramid needs at least one level")
    img = np.asarray(img, dtype=float)
    pyr = [img]
    for _ in range(levels - 1):
        prev = pyr[-1]
        h, w = prev.shape
        if h // 2 < 8 or w // 2 < 8:
            raise ValueError(
                f"too many pyramid levels for image size {w}x{h}")
        blurred = _binomial_blur(prev)
        pyr.append(np.ascontiguousarray(blurred[::2, ::2][: h // 2, : w // 2]))
    return pyr


def scale_homography(H, scale_from, scale_to):
    """Re-express a homography at a different pyramid pixel scale.

    ``scale_from`` and ``scale_to`` are the pixel sizes of the two levels
    (1 = full resolution, 2 = half, ...).  Warping commutes with the
    coordinate scaling: warp-at-a then rescale equals rescale then
    warp-at-b.
    """
    if scale_from == scale_to:
        return np.asarray(H, dtype=float).copy()
    r = scale_from / scale_to
    D = np.diag([r, r, 1.0])
    Dinv = np.diag([1.0 / r, 1.0 / r, 1.0])
    return D @ np.asarray(H, dtype=float) @ Dinv


def zncc(a, b, mask=None):
    """Zero-mean normalized cross-correlation of two masked signals.

    Invariant to affine intensity changes b -> alpha*b + beta (alpha > 0),
    which is what makes it the right score for gain/bias-robust matching.

    Raises
    ------
    ZeroVarianceError
        If fewer than 2 entries are valid or either signal is constant
        over the mask.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("signals must have equal length")
    if mask is not None:
        m = np.asarray(mask, dtype=bool).ravel()
        a, b = a[m], b[m]
    if a.size < 2:
        raise ZeroVarianceError("need at least 2 valid samples for ZNCC")
    da = a - a.mean()
    db = b - b.mean()
    na = np.linalg.norm(da)
    nb = np.linalg.norm(db)
    if na == 0.0 or nb == 0.0:
        raise ZeroVarianceError("ZNCC undefined for a constant signal")
    return float(np.clip(np.dot(da, db) / (na * nb), -1.0, 1.0))
