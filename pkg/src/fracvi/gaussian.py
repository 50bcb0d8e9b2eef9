"""Univariate Gaussian algebra.

Every closed-form integral in the package reduces to integrating a product of
powered Gaussians, which is again an exponentiated quadratic.  ``LogQuad``
carries such a function as ``log f(z) = const + lin * z - prec * z**2 / 2`` so
that products are sums, powers are scalings, and the integral is a single
log-normaliser evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

LOG_2PI = math.log(2.0 * math.pi)


class DivergenceInfinite(ArithmeticError):
    """Raised when a powered-Gaussian integral diverges.

    This happens when the combined precision of the integrand is not positive,
    e.g. a Renyi divergence whose alpha-mixed variance is non-positive.
    """


@dataclass(frozen=True)
class Gaussian1D:
    mean: float
    variance: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.variance)):
            raise ValueError(f"Gaussian1D needs finite parameters, got {self}")
        if self.variance <= 0.0:
            raise ValueError(f"Gaussian1D variance must be positive, got {self.variance}")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    @property
    def precision(self) -> float:
        return 1.0 / self.variance

    def logpdf(self, z):
        return -0.5 * (LOG_2PI + math.log(self.variance)) - 0.5 * (z - self.mean) ** 2 / self.variance

    def as_logquad(self) -> "LogQuad":
        prec = 1.0 / self.variance
        return LogQuad(
            const=-0.5 * (LOG_2PI + math.log(self.variance)) - 0.5 * self.mean**2 * prec,
            lin=self.mean * prec,
            prec=prec,
        )

    def scaled(self, factor: float) -> "LogQuad":
        """The unnormalised density ``factor * N(z | mean, variance)``."""
        if factor <= 0.0:
            raise ValueError("scale factor must be positive")
        return self.as_logquad().shift(math.log(factor))


@dataclass(frozen=True)
class LogQuad:
    """``exp(const + lin * z - prec * z**2 / 2)``; ``prec`` may be any sign."""

    const: float
    lin: float
    prec: float

    def __mul__(self, other: "LogQuad") -> "LogQuad":
        return LogQuad(self.const + other.const, self.lin + other.lin, self.prec + other.prec)

    def __pow__(self, power: float) -> "LogQuad":
        return LogQuad(power * self.const, power * self.lin, power * self.prec)

    def shift(self, log_factor: float) -> "LogQuad":
        return LogQuad(self.const + log_factor, self.lin, self.prec)

    def __call__(self, z):
        return self.const + self.lin * z - 0.5 * self.prec * z * z

    def log_integral(self) -> float:
        """``log`` of the integral over the real line."""
        if not self.prec > 0.0:
            raise DivergenceInfinite(f"integrand precision {self.prec} is not positive")
        return self.const + 0.5 * (LOG_2PI - math.log(self.prec)) + 0.5 * self.lin**2 / self.prec

    def normalized(self) -> Gaussian1D:
        if not self.prec > 0.0:
            raise DivergenceInfinite(f"integrand precision {self.prec} is not positive")
        return Gaussian1D(self.lin / self.prec, 1.0 / self.prec)


def as_logquad(density: "Gaussian1D | LogQuad") -> LogQuad:
    return density.as_logquad() if isinstance(density, Gaussian1D) else density


@dataclass(frozen=True)
class Fraction:
    """The power ``gamma`` applied to the likelihood.

    ``gamma`` in (0, 1) or (1, inf) gives a lower bound, ``gamma < 0`` an upper
    bound, and ``gamma == 1`` is the ELBO limit.
    """

    gamma: float

    def __post_init__(self):
        if not math.isfinite(self.gamma) or self.gamma == 0.0:
            raise ValueError(f"gamma must be finite and non-zero, got {self.gamma}")

    @property
    def is_elbo(self) -> bool:
        return self.gamma == 1.0

    @property
    def regime(self) -> str:
        if self.gamma == 1.0:
            return "elbo"
        return "upper" if self.gamma < 0.0 else "lower"


def as_gamma(gamma: "float | Fraction") -> float:
    return Fraction(float(gamma)).gamma if not isinstance(gamma, Fraction) else gamma.gamma


def kl_gaussian(q: Gaussian1D, p: Gaussian1D) -> float:
    """KL(q || p)."""
    ratio = q.variance / p.variance
    return 0.5 * (ratio - 1.0 - math.log(ratio) + (q.mean - p.mean) ** 2 / p.variance)


def renyi_gaussian(q: Gaussian1D, p: Gaussian1D, alpha: float) -> float:
    """Renyi divergence of order ``alpha`` from ``q`` to ``p``.

    Finite only when ``(1 - alpha) * var(q) + alpha * var(p) > 0``; otherwise
    ``DivergenceInfinite`` is raised.
    """
    if not alpha > 0.0 or alpha == 1.0:
        raise ValueError(f"Renyi order must be positive and != 1, got {alpha}")
    mixed = (1.0 - alpha) * q.variance + alpha * p.variance
    if not mixed > 0.0:
        raise DivergenceInfinite(f"alpha-mixed variance {mixed} is not positive (alpha={alpha})")
    log_z = (q.as_logquad() ** alpha * p.as_logquad() ** (1.0 - alpha)).log_integral()
    return log_z / (alpha - 1.0)
