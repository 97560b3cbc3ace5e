"""Unified feature and intensity homography registration on SL(3).

Core pieces: an SL(3) Lie-algebra warp parametrization (geometry), bilinear
sampling and pyramids (image), ORB feature matching with RANSAC (features),
a damped Gauss-Newton solver mixing intensity and feature residuals with a
global gain/bias model (solver), a perturbation benchmark (bench) and a
frame-by-frame template tracker (tracker).
"""

from .errors import (
    HomregError,
    PointAtInfinityError,
    DegenerateHomographyError,
    ZeroVarianceError,
    TemplateLostError,
    SingularSystemError,
    GlobalSearchFailedError,
)
from .geometry import (
    SL3_BASIS,
    lie_to_matrix,
    expm_sl3,
    exp_lie,
    warp_points,
    compose,
    inverse,
    normalize_det,
    translation,
    dlt_homography,
    corner_rms_error,
    sl3_point_jacobian,
    spatial_jacobian,
)
from .image import (
    TemplateRegion,
    load_gray,
    write_pgm,
    bilinear_sample,
    sample_with_gradient,
    warp_template,
    image_gradient,
    build_pyramid,
    scale_homography,
    zncc,
)
from .photometric import Photometric
from .features import (
    FeatureSet,
    FeatureMatch,
    OrbBackend,
    detect_and_describe,
    match_descriptors,
    match_arrays,
    robust_homography,
    rmsd_fb,
)
from .solver import (
    Mode,
    SolverConfig,
    SolverReport,
    StepRecord,
    ReferenceTemplate,
    compute_weights,
    zncc_predictor,
    local_global_policy,
    estimate,
)

__version__ = "0.1.0"

__all__ = [
    "HomregError",
    "PointAtInfinityError",
    "DegenerateHomographyError",
    "ZeroVarianceError",
    "TemplateLostError",
    "SingularSystemError",
    "GlobalSearchFailedError",
    "SL3_BASIS",
    "lie_to_matrix",
    "expm_sl3",
    "exp_lie",
    "warp_points",
    "compose",
    "inverse",
    "normalize_det",
    "translation",
    "dlt_homography",
    "corner_rms_error",
    "sl3_point_jacobian",
    "spatial_jacobian",
    "TemplateRegion",
    "load_gray",
    "write_pgm",
    "bilinear_sample",
    "sample_with_gradient",
    "warp_template",
    "image_gradient",
    "build_pyramid",
    "scale_homography",
    "zncc",
    "Photometric",
    "FeatureSet",
    "FeatureMatch",
    "OrbBackend",
    "detect_and_describe",
    "match_descriptors",
    "match_arrays",
    "robust_homography",
    "rmsd_fb",
    "Mode",
    "SolverConfig",
    "SolverReport",
    "StepRecord",
    "ReferenceTemplate",
    "compute_weights",
    "zncc_predictor",
    "local_global_policy",
    "estimate",
    "__version__",
]
