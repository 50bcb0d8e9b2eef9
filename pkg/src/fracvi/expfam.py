"""Fractional updates for conjugate exponential families.

With likelihood ``h(x) exp(z.t(x) - a(z))`` and conjugate prior
``exp(z.nu - kappa a(z))``, the optimal ``LB_gamma`` posterior stays in the
prior's family with parameters ``(nu + gamma * sum t, kappa + gamma * n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussian import Gaussian1D, as_gamma


@dataclass(frozen=True)
class ConjugatePriorParams:
    nu: np.ndarray
    kappa: float

    def __post_init__(self):
        object.__setattr__(self, "nu", np.atleast_1d(np.asarray(self.nu, dtype=float)))
        if not self.kappa > 0.0:
            raise ValueError("kappa must be positive")


@dataclass(frozen=True)
class SufficientStats:
    t_sum: np.ndarray
    n: int

    def __post_init__(self):
        object.__setattr__(self, "t_sum", np.atleast_1d(np.asarray(self.t_sum, dtype=float)))
        if self.n < 0:
            raise ValueError("n must be non-negative")

    @classmethod
    def gaussian_mean(cls, data) -> "SufficientStats":
        """Statistics for the unit-variance Gaussian-mean family, ``t(x) = x``."""
        x = np.asarray(data, dtype=float)
        return cls(t_sum=np.array([x.sum()]), n=len(x))


def fractional_conjugate_update(prior: ConjugatePriorParams, stats: SufficientStats, gamma) -> ConjugatePriorParams:
    g = as_gamma(gamma)
    if not 0.0 < g <= 1.0:
        raise ValueError("fractional update needs gamma in (0, 1]")
    if stats.t_sum.shape != prior.nu.shape:
        raise ValueError("sufficient statistic dimension does not match nu")
    return ConjugatePriorParams(nu=prior.nu + g * stats.t_sum, kappa=prior.kappa + g * stats.n)


def gaussian_from_params(params: ConjugatePriorParams) -> Gaussian1D:
    """``exp(z mu - lambda z^2/2)`` normalised, for the Gaussian-mean instance."""
    return Gaussian1D(float(params.nu[0]) / params.kappa, 1.0 / params.kappa)


def _moments(loc: float, prec: float) -> tuple[float, float]:
    # E[z] and E[-a(z)] = -E[z^2]/2 for a density exp(loc z - prec z^2 / 2)
    mean = loc / prec
    return mean, -0.5 * (1.0 / prec + mean * mean)


def stationarity_residual(
    prior: ConjugatePriorParams,
    stats: SufficientStats,
    candidate: ConjugatePriorParams,
    gamma,
) -> float:
    """Norm of the moment-matching conditions at ``candidate``.

    Gaussian-mean instance only (``t(x) = x``, ``a(z) = z^2/2``).  ``q_c`` and
    ``q_d`` must agree in ``E[z]`` and ``E[-a(z)]`` at a stationary point of
    ``LB_gamma``.  Returns ``inf`` if either tilted density is improper.
    """
    g = as_gamma(gamma)
    mu, lam = float(candidate.nu[0]), candidate.kappa
    nu, kappa = float(prior.nu[0]), prior.kappa
    # q_c ∝ q^(1/g) p^(1-1/g);  q_d ∝ q p(D|z)^(1-g)
    loc_c = mu / g + (1.0 - 1.0 / g) * nu
    prec_c = (lam - (1.0 - g) * kappa) / g
    loc_d = mu + (1.0 - g) * float(stats.t_sum[0])
    prec_d = lam + (1.0 - g) * stats.n
    if prec_c <= 0.0 or prec_d <= 0.0:
        return math.inf
    ez_c, ea_c = _moments(loc_c, prec_c)
    ez_d, ea_d = _moments(loc_d, prec_d)
    return math.hypot(ez_c - ez_d, ea_c - ea_d)
