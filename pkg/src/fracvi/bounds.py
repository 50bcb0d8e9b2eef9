"""Closed-form evidence bounds for the conjugate Gaussian-mean model.

The model is ``z ~ prior``, ``x_i | z ~ N(z, obs_variance)``.  Its likelihood
as a function of ``z`` is an exponentiated quadratic, so ``LB_gamma``, the
ELBO, the variational Renyi bound and the log-evidence are all exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gaussian import (
    LOG_2PI,
    DivergenceInfinite,
    Fraction,
    Gaussian1D,
    LogQuad,
    as_gamma,
    as_logquad,
    kl_gaussian,
)


@dataclass(frozen=True)
class ConjugateGaussianModel:
    prior: Gaussian1D
    obs_variance: float
    data: tuple = field(default=())

    def __post_init__(self):
        if not self.obs_variance > 0.0:
            raise ValueError("obs_variance must be positive")
        object.__setattr__(self, "data", tuple(float(x) for x in self.data))

    @property
    def n(self) -> int:
        return len(self.data)

    def log_likelihood(self) -> LogQuad:
        """``log p(D | z)`` as a quadratic in ``z``."""
        x = np.asarray(self.data, dtype=float)
        s2 = self.obs_variance
        return LogQuad(
            const=-0.5 * self.n * (LOG_2PI + math.log(s2)) - 0.5 * float(np.sum(x * x)) / s2,
            lin=float(np.sum(x)) / s2,
            prec=self.n / s2,
        )

    def log_likelihood_at(self, z):
        """Vectorised ``log p(D | z)`` for an array of ``z``."""
        z = np.asarray(z, dtype=float)
        x = np.asarray(self.data, dtype=float)
        s2 = self.obs_variance
        # sum_i (x_i - z)^2 = Sxx - 2 z Sx + n z^2
        sq = float(np.sum(x * x)) - 2.0 * z * float(np.sum(x)) + self.n * z * z
        return -0.5 * self.n * (LOG_2PI + math.log(s2)) - 0.5 * sq / s2

    def posterior(self, gamma: float = 1.0) -> Gaussian1D:
        """Exact posterior with the likelihood raised to ``gamma``."""
        return (self.prior.as_logquad() * self.log_likelihood() ** gamma).normalized()


@dataclass(frozen=True)
class BoundValue:
    """Bound decomposed as ``total = data_term - complexity_term - extra_kl_term``.

    ``complexity_term`` is the raw ``gamma/(1-gamma) log Z_c``.  ``divergence``
    repeats it as a Renyi (or KL) divergence when ``q`` is known to be
    normalised, and is ``None`` otherwise.
    """

    data_term: float
    complexity_term: float
    total: float
    extra_kl_term: Optional[float] = None
    divergence: Optional[float] = None


def log_evidence(model: ConjugateGaussianModel) -> float:
    if model.n == 0:
        return 0.0
    return (model.prior.as_logquad() * model.log_likelihood()).log_integral()


def lb_gamma(model: ConjugateGaussianModel, q: "Gaussian1D | LogQuad", gamma) -> BoundValue:
    """The Holder bound ``LB_gamma`` at a possibly unnormalised ``q``.

    A lower bound on ``log p(D)`` for gamma in (0,1) or (1,inf), an upper bound
    for gamma < 0.  ``gamma == 1`` is rejected; use :func:`elbo`.
    """
    g = as_gamma(gamma)
    if g == 1.0:
        raise ValueError("LB_gamma is undefined at gamma=1; call elbo() instead")
    uq = as_logquad(q)
    log_zd = (uq * model.log_likelihood() ** (1.0 - g)).log_integral()
    log_zc = (uq ** (1.0 / g) * model.prior.as_logquad() ** (1.0 - 1.0 / g)).log_integral()
    data_term = log_zd / (1.0 - g)
    complexity = g / (1.0 - g) * log_zc
    normalised = isinstance(q, Gaussian1D)
    return BoundValue(
        data_term=data_term,
        complexity_term=complexity,
        total=data_term - complexity,
        divergence=complexity if normalised else None,
    )


def expected_log_likelihood(model: ConjugateGaussianModel, q: Gaussian1D) -> float:
    x = np.asarray(model.data, dtype=float)
    s2 = model.obs_variance
    sq = float(np.sum((x - q.mean) ** 2)) + model.n * q.variance
    return -0.5 * model.n * (LOG_2PI + math.log(s2)) - 0.5 * sq / s2


def elbo(model: ConjugateGaussianModel, q: Gaussian1D) -> BoundValue:
    data_term = expected_log_likelihood(model, q)
    kl = kl_gaussian(q, model.prior)
    return BoundValue(data_term=data_term, complexity_term=kl, total=data_term - kl, divergence=kl)


def variational_renyi(model: ConjugateGaussianModel, q: Gaussian1D, alpha: float) -> float:
    """``(1/(1-alpha)) log int q (p(D,z)/q)^(1-alpha) dz``."""
    if not alpha > 0.0 or alpha == 1.0:
        raise ValueError(f"alpha must be positive and != 1, got {alpha}")
    joint = model.prior.as_logquad() * model.log_likelihood()
    log_int = (q.as_logquad() ** alpha * joint ** (1.0 - alpha)).log_integral()
    return log_int / (1.0 - alpha)


def frac_divergence(prior: Gaussian1D, target_fractional: Gaussian1D, approx: Gaussian1D, gamma) -> float:
    """``log p(D) - LB_gamma`` written without the target's normaliser.

    ``prior`` plays ``p0``, ``target_fractional`` the fractional posterior
    ``p1`` and ``approx`` the approximation ``p2``.
    """
    g = as_gamma(gamma)
    if not 0.0 < g < 1.0:
        raise ValueError("frac_divergence needs gamma in (0, 1)")
    p0, p1, p2 = prior.as_logquad(), target_fractional.as_logquad(), approx.as_logquad()
    a = 1.0 / g
    first = (p1**a * p0 ** (1.0 - a)).log_integral()
    second = (p2 * p1 ** (a - 1.0) * p0 ** (1.0 - a)).log_integral()
    third = (p2**a * p0 ** (1.0 - a)).log_integral()
    return first - second / (1.0 - g) + g / (1.0 - g) * third


def transformed(p: Gaussian1D, prior: Gaussian1D, gamma: float) -> Gaussian1D:
    """Normalised ``p**(1/gamma) * prior**(1 - 1/gamma)``."""
    a = 1.0 / gamma
    return (p.as_logquad() ** a * prior.as_logquad() ** (1.0 - a)).normalized()


def interpolate_posterior(prior: Gaussian1D, bayes: Gaussian1D, gamma) -> Gaussian1D:
    """Normalised ``prior**(1-gamma) * bayes**gamma``."""
    g = gamma.gamma if isinstance(gamma, Fraction) else float(gamma)
    if not 0.0 <= g <= 1.0:
        raise ValueError("interpolation needs gamma in [0, 1]")
    if g == 0.0:
        return prior
    if g == 1.0:
        return bayes
    prec = (1.0 - g) / prior.variance + g / bayes.variance
    loc = (1.0 - g) * prior.mean / prior.variance + g * bayes.mean / bayes.variance
    return Gaussian1D(loc / prec, 1.0 / prec)


__all__ = [
    "BoundValue",
    "ConjugateGaussianModel",
    "DivergenceInfinite",
    "elbo",
    "expected_log_likelihood",
    "frac_divergence",
    "interpolate_posterior",
    "lb_gamma",
    "log_evidence",
    "transformed",
    "variational_renyi",
]
