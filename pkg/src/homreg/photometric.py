"""Global photometric model: a gain/bias pair applied to image intensities."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Photometric:
    """Affine intensity map I -> alpha * I + beta."""

    alpha: float = 1.0
    beta: float = 0.0

    def apply(self, values):
        return self.alpha * np.asarray(values, dtype=float) + self.beta

    def compose(self, d_alpha, d_beta):
        """Additive update used by the solver."""
        return Photometric(self.alpha + d_alpha, self.beta + d_beta)


IDENTITY = Photometric(1.0, 0.0)
