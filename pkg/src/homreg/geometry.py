"""SL(3) homography algebra.

Conventions used throughout the package:

* a homography ``H`` is a (3, 3) float64 array with det(H) = 1,
* pixel points are (N, 2) arrays of (u, v) coordinates (u = column axis,
  v = row axis), homogeneous scale fixed to 1,
* an algebra vector ``v`` has 8 components ordered as
  (tu, tv, rotation, anisotropic scale, shear, dilation, proj-u, proj-v),
* a corner quad is a (4, 2) array ordered top-left, top-right,
  bottom-right, bottom-left.
"""

import numpy as np

from .errors import DegenerateHomographyError, PointAtInfinityError

# Generator basis of the traceless 3x3 matrices. The first two entries are
# the pixel translations, so v[0], v[1] read directly as (du, dv).
SL3_BASIS = np.zeros((8, 3, 3))
SL3_BASIS[0, 0, 2] = 1.0                       # translation u
SL3_BASIS[1, 1, 2] = 1.0                       # translation v
SL3_BASIS[2, 1, 0], SL3_BASIS[2, 0, 1] = 1.0, -1.0   # rotation
SL3_BASIS[3, 0, 0], SL3_BASIS[3, 1, 1] = 1.0, -1.0   # anisotropic scale
SL3_BASIS[4, 0, 1], SL3_BASIS[4, 1, 0] = 1.0, 1.0    # shear
SL3_BASIS[5, 0, 0], SL3_BASIS[5, 1, 1], SL3_BASIS[5, 2, 2] = 1.0, 1.0, -2.0
SL3_BASIS[6, 2, 0] = 1.0                       # projective u
SL3_BASIS[7, 2, 1] = 1.0                       # projective v
SL3_BASIS.flags.writeable = False

_DENOM_EPS = 1e-12


def lie_to_matrix(v):
    """Combine the 8 generators into a traceless algebra matrix A(v)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (8,):
        raise ValueError(f"expected 8 algebra components, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("algebra vector must be finite")
    return np.einsum("k,kij->ij", v, SL3_BASIS)


def expm_sl3(A, trace_tol=1e-12):
    """Matrix exponential of a traceless 3x3 matrix.

    Scaling-and-squaring with a fixed-order truncated power series; for
    the small incremental updates used here this reaches ~1e-12 accuracy
    without Pade machinery.  The result lies in SL(3) because
    det(exp(A)) = exp(trace(A)) = 1.
    """
    A = np.asarray(A, dtype=float)
    if A.shape != (3, 3):
        raise ValueError("expected a 3x3 matrix")
    if abs(np.trace(A)) > trace_tol:
        raise ValueError(f"matrix is not traceless: trace = {np.trace(A):g}")
    norm = np.linalg.norm(A, 1)
    squarings = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
    B = A / (2.0 ** squarings)
    # Horner evaluation of sum_{k<=16} B^k / k!; truncation error < 1e-19
    # at the scaled norm bound 0.5.
    E = np.eye(3) + B / 16.0
    for k in range(15, 0, -1):
        E = np.eye(3) + (B @ E) / k
    for _ in range(squarings):
        E = E @ E
    return E


def exp_lie(v):
    """Shorthand for ``expm_sl3(lie_to_matrix(v))``."""
    return expm_sl3(lie_to_matrix(v))


def warp_points(H, pts):
    """Apply a homography to pixel points.

    Parameters
    ----------
    H : (3, 3) array
    pts : (N, 2) or (2,) array

    Returns
    -------
    (N, 2) or (2,) array of dehomogenized image points.

    Raises
    ------
    PointAtInfinityError
        If any denominator h31*u + h32*v + h33 vanishes.
    """
    H = np.asarray(H, dtype=float)
    pts = np.asarray(pts, dtype=float)
    single = pts.ndim == 1
    p = np.atleast_2d(pts)
    denom = p @ H[2, :2] + H[2, 2]
    if np.any(np.abs(denom) < _DENOM_EPS):
        raise PointAtInfinityError("warp denominator vanishes (point at infinity)")
    num = p @ H[:2, :2].T + H[:2, 2]
    out = num / denom[:, None]
    return out[0] if single else out


def compose(H1, H2):
    """Matrix product H1 @ H2, renormalized to determinant 1."""
    return normalize_det(np.asarray(H1, dtype=float) @ np.asarray(H2, dtype=float))


def inverse(H):
    """Inverse homography, renormalized to determinant 1."""
    H = np.asarray(H, dtype=float)
    if abs(np.linalg.det(H)) < _DENOM_EPS:
        raise DegenerateHomographyError("cannot invert a singular homography")
    return normalize_det(np.linalg.inv(H))


def normalize_det(H):
    """Rescale H so that det(H) = 1 (sign-flipped first if det < 0)."""
    H = np.asarray(H, dtype=float)
    d = np.linalg.det(H)
    if abs(d) < _DENOM_EPS:
        raise DegenerateHomographyError(f"determinant {d:g} too close to zero")
    if d < 0:
        H = -H
        d = -d
    return H / np.cbrt(d)


def translation(du, dv):
    """Homography for a pure pixel translation."""
    T = np.eye(3)
    T[0, 2] = du
    T[1, 2] = dv
    return T


def _hartley_normalization(pts):
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    mean_dist = np.mean(np.linalg.norm(centered, axis=1))
    if mean_dist < _DENOM_EPS:
        raise DegenerateHomographyError("coincident points in DLT input")
    s = np.sqrt(2.0) / mean_dist
    T = np.array([[s, 0.0, -s * centroid[0]],
                  [0.0, s, -s * centroid[1]],
                  [0.0, 0.0, 1.0]])
    return centered * s, T


def dlt_homography(src, dst):
    """Least-squares homography from point correspondences.

    Normalized direct linear transform: both point sets are translated to
    their centroid and scaled to mean distance sqrt(2) before building the
    2N x 9 system, which keeps the SVD well conditioned.  Exact for 4
    non-degenerate pairs.

    Parameters
    ----------
    src, dst : (N, 2) arrays, N >= 4
        Corresponding points, ``dst ~ H src``.

    Returns
    -------
    (3, 3) homography with determinant 1.

    Raises
    ------
    DegenerateHomographyError
        For rank-deficient configurations (e.g. 3 collinear source points).
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError("src and dst must be matching (N, 2) arrays")
    n = src.shape[0]
    if n < 4:
        raise ValueError(f"need at least 4 correspondences, got {n}")
    ns, Ts = _hartley_normalization(src)
    nd, Td = _hartley_normalization(dst)

    A = np.zeros((2 * n, 9))
    x, y = ns[:, 0], ns[:, 1]
    xp, yp = nd[:, 0], nd[:, 1]
    A[0::2, 0], A[0::2, 1], A[0::2, 2] = -x, -y, -1.0
    A[0::2, 6], A[0::2, 7], A[0::2, 8] = xp * x, xp * y, xp
    A[1::2, 3], A[1::2, 4], A[1::2, 5] = -x, -y, -1.0
    A[1::2, 6], A[1::2, 7], A[1::2, 8] = yp * x, yp * y, yp

    _, sv, Vt = np.linalg.svd(A)
    # A has rank 8 for a unique (up to scale) solution; sv[7] ~ 0 means the
    # configuration does not determine a homography.
    if sv[7] < 1e-10 * max(sv[0], 1.0):
        raise DegenerateHomographyError("degenerate correspondence configuration")
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    return normalize_det(H)


def corner_rms_error(H_est, H_true, corners):
    """Root-mean-square distance between corners warped by two homographies."""
    pe = warp_points(H_est, corners)
    pt = warp_points(H_true, corners)
    d2 = np.sum((pe - pt) ** 2, axis=1)
    return float(np.sqrt(d2.mean()))


def sl3_point_jacobian(pts):
    """Derivative of the warped point w.r.t. the algebra vector at v = 0.

    For q(v) = w(exp(A(v)) H, p) and (x, y) = w(H, p), the 2x8 Jacobian
    dq/dv at v = 0 depends on (x, y) only:

        [[1, 0, -y,  x, y, 3x, -x*x, -x*y],
         [0, 1,  x, -y, x, 3y, -x*y, -y*y]]

    Parameters
    ----------
    pts : (N, 2) array of warped positions (x, y).

    Returns
    -------
    (N, 2, 8) array.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    n = pts.shape[0]
    J = np.zeros((n, 2, 8))
    J[:, 0, 0] = 1.0
    J[:, 1, 1] = 1.0
    J[:, 0, 2], J[:, 1, 2] = -y, x
    J[:, 0, 3], J[:, 1, 3] = x, -y
    J[:, 0, 4], J[:, 1, 4] = y, x
    J[:, 0, 5], J[:, 1, 5] = 3.0 * x, 3.0 * y
    J[:, 0, 6], J[:, 1, 6] = -x * x, -x * y
    J[:, 0, 7], J[:, 1, 7] = -x * y, -y * y
    return J


def spatial_jacobian(H, pts):
    """Derivative of w(H, p) w.r.t. the source point p.

    Returns a (N, 2, 2) array of local 2x2 warp Jacobians.
    """
    H = np.asarray(H, dtype=float)
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    g = pts @ H[:, :2].T + H[:, 2]          # (N, 3) homogeneous images
    g3 = g[:, 2]
    if np.any(np.abs(g3) < _DENOM_EPS):
        raise PointAtInfinityError("warp denominator vanishes (point at infinity)")
    J = np.empty((pts.shape[0], 2, 2))
    inv = 1.0 / g3
    J[:, 0, 0] = (H[0, 0] - g[:, 0] * inv * H[2, 0]) * inv
    J[:, 0, 1] = (H[0, 1] - g[:, 0] * inv * H[2, 1]) * inv
    J[:, 1, 0] = (H[1, 0] - g[:, 1] * inv * H[2, 0]) * inv
    J[:, 1, 1] = (H[1, 1] - g[:, 1] * inv * H[2, 1]) * inv
    return J
