"""Fractional variational inference: LB_gamma bounds, case studies, estimators and calibration."""

from .bounds import ConjugateGaussianModel, elbo, lb_gamma, log_evidence
from .gaussian import DivergenceInfinite, Fraction, Gaussian1D, kl_gaussian, renyi_gaussian

__all__ = [
    "ConjugateGaussianModel",
    "DivergenceInfinite",
    "Fraction",
    "Gaussian1D",
    "elbo",
    "kl_gaussian",
    "lb_gamma",
    "log_evidence",
    "renyi_gaussian",
]
