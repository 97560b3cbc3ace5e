"""Exception types shared across the package."""


class HomregError(Exception):
    """Base class for all homreg-specific failures."""


class PointAtInfinityError(HomregError):
    """Projective warp sent a point to infinity (vanishing denominator)."""


class DegenerateHomographyError(HomregError):
    """Homography is singular or the fitting problem is rank deficient."""


class ZeroVarianceError(HomregError):
    """ZNCC is undefined because one of the signals has no variance."""


class TemplateLostError(HomregError):
    """Too few template pixels project inside the current image."""


class SingularSystemError(HomregError):
    """Normal equations are rank deficient even after damping."""


class GlobalSearchFailedError(HomregError):
    """Feature-based global estimation could not produce a homography."""
