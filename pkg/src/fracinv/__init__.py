"""Forward and inverse problems for time-fractional diffusion on boxes."""

from .specfun import MLParams, mittag_leffler, ml_tail_expansion, recip_gamma
from .spectral import BoxDomain, EigenBasis, SpectralField, build_basis, project, synthesize

__all__ = [
    "BoxDomain",
    "EigenBasis",
    "MLParams",
    "SpectralField",
    "build_basis",
    "mittag_leffler",
    "ml_tail_expansion",
    "project",
    "recip_gamma",
    "synthesize",
]
