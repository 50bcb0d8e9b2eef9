"""Multinomial-logit likelihood with a standard Gaussian prior.

With ``1/gamma = 1 + 1/n`` and the structured unnormalised posterior

    uq(z) = prod_c N(z_c | mu_c, sigma2_c) * (sum_c exp z_c) ** (n / (n + 1)),

both tilted densities ``q_c`` and ``q_d`` have closed forms, so the gradient of
``LB_gamma`` is exact.  Only ``uq`` is ever needed, never its normaliser.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, roots_hermite, softmax

from .gaussian import LOG_2PI


class InvalidVariance(ValueError):
    """Raised when some ``sigma2_c >= n + 1`` so that ``s_c^2`` is not positive."""


class DimensionTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class LogitModel:
    class_counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.class_counts)
        if counts.ndim != 1 or len(counts) < 2:
            raise ValueError("need at least two classes")
        if np.any(counts < 0) or counts.sum() < 1:
            raise ValueError("class counts must be non-negative with a positive total")
        object.__setattr__(self, "class_counts", counts.astype(int))

    @property
    def n(self) -> int:
        return int(self.class_counts.sum())

    @property
    def C(self) -> int:
        return len(self.class_counts)

    @property
    def gamma(self) -> float:
        return self.n / (self.n + 1.0)

    @classmethod
    def from_labels(cls, labels, C: int) -> "LogitModel":
        return cls(np.bincount(np.asarray(labels, dtype=int), minlength=C))


@dataclass(frozen=True)
class LogitPosteriorParams:
    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma2 = np.asarray(self.sigma2, dtype=float)
        if mu.shape != sigma2.shape or mu.ndim != 1:
            raise ValueError("mu and sigma2 must be vectors of equal length")
        if np.any(sigma2 <= 0.0):
            raise InvalidVariance("sigma2 must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", sigma2)

    @classmethod
    def default(cls, C: int) -> "LogitPosteriorParams":
        return cls(np.zeros(C), np.ones(C))


def _check(params: LogitPosteriorParams, n: int) -> None:
    if np.any(params.sigma2 >= n + 1):
        raise InvalidVariance(f"every sigma2 must be below n+1={n + 1}, got {params.sigma2}")


def qc_quantities(params: LogitPosteriorParams, n: int):
    """Return ``(m, s2, rho)``: the Gaussian factors of ``q_c`` and the class weights."""
    _check(params, n)
    denom = n + 1.0 - params.sigma2
    m = params.mu * (n + 1.0) / denom
    s2 = n * params.sigma2 / denom
    rho = softmax(m + 0.5 * s2)
    return m, s2, rho


def moments(params: LogitPosteriorParams, model: LogitModel):
    """First and second moments of each ``z_c`` under ``q_c`` and ``q_d``."""
    n = model.n
    m, s2, rho = qc_quantities(params, n)
    eqc_z = m + rho * s2
    eqc_z2 = s2 + m * m + s2 * (s2 + 2.0 * m) * rho
    shifted = params.mu + params.sigma2 * model.class_counts / (n + 1.0)
    eqd_z = shifted
    eqd_z2 = params.sigma2 + shifted * shifted
    return eqc_z, eqc_z2, eqd_z, eqd_z2


def lb_gradient(params: LogitPosteriorParams, model: LogitModel):
    """Gradient of ``LB_gamma`` with respect to ``mu`` and ``sigma2``."""
    eqc_z, eqc_z2, eqd_z, eqd_z2 = moments(params, model)
    mu, s2 = params.mu, params.sigma2
    scale = model.n + 1.0  # 1 / (1 - gamma)
    grad_mu = scale * (eqd_z - eqc_z) / s2
    # E[(z - mu)^2] = E[z^2] - 2 mu E[z] + mu^2; the -1/(2 s2) parts cancel
    sq_d = eqd_z2 - 2.0 * mu * eqd_z
    sq_c = eqc_z2 - 2.0 * mu * eqc_z
    grad_s2 = scale * (sq_d - sq_c) / (2.0 * s2 * s2)
    return grad_mu, grad_s2


def lb_value(params: LogitPosteriorParams, model: LogitModel) -> float:
    """``LB_gamma`` in closed form (both normalisers are Gaussian integrals)."""
    n = model.n
    m, s2, _ = qc_quantities(params, n)
    mu, sig2 = params.mu, params.sigma2
    counts = model.class_counts
    # Z_d: prod_c N(z_c|mu_c,sig2_c) exp(n_c z_c / (n+1))
    t = counts / (n + 1.0)
    log_zd = float(np.sum(t * mu + 0.5 * t * t * sig2))
    # Z_c: prod_c N(mu_c,sig2_c)^((n+1)/n) N(0,1)^(-1/n) * sum_c exp z_c
    a = (n + 1.0) / n
    log_norm = np.sum(
        a * (-0.5 * (LOG_2PI + np.log(sig2)) - 0.5 * mu * mu / sig2)
        + 0.5 * LOG_2PI / n
        + 0.5 * (LOG_2PI + np.log(s2))
        + 0.5 * m * m / s2
    )
    log_zc = float(log_norm + logsumexp(m + 0.5 * s2))
    g = model.gamma
    return log_zd / (1.0 - g) - g / (1.0 - g) * log_zc


def _log_uq(z, params: LogitPosteriorParams, n: int):
    # z has shape (..., C)
    gauss = -0.5 * (LOG_2PI + np.log(params.sigma2)) - 0.5 * (z - params.mu) ** 2 / params.sigma2
    return gauss.sum(-1) + n / (n + 1.0) * logsumexp(z, axis=-1)


def _log_lik(z, model: LogitModel):
    return z @ model.class_counts - model.n * logsumexp(z, axis=-1)


def _log_prior(z):
    return (-0.5 * LOG_2PI - 0.5 * z * z).sum(-1)


def _tensor_quadrature(log_f, centre, scale, order: int) -> float:
    """``log int exp(log_f(z)) dz`` by tensor-product Gauss-Hermite.

    The rule is placed on ``N(centre, diag(scale^2))`` and the Gaussian weight is
    divided out of the integrand.
    """
    x, w = roots_hermite(order)
    C = len(centre)
    nodes = np.array(list(itertools.product(x, repeat=C)))
    logw = np.array(list(itertools.product(np.log(w), repeat=C))).sum(1)
    z = centre + math.sqrt(2.0) * scale * nodes
    log_jac = np.sum(np.log(math.sqrt(2.0) * scale))
    return float(logsumexp(log_f(z) + np.sum(nodes * nodes, axis=1) + logw) + log_jac)


def _quad_order(C: int) -> int:
    return {1: 200, 2: 120, 3: 48}[C]


def lb_value_quadrature(params: LogitPosteriorParams, model: LogitModel, order: int | None = None) -> float:
    """``LB_gamma`` by direct numerical integration of ``Z_d`` and ``Z_c`` (C <= 3).

    Works from ``uq``, the likelihood and the prior pointwise; no closed form
    of the tilted densities is used beyond choosing where to put the nodes.
    """
    C = model.C
    if C > 3:
        raise DimensionTooLarge(f"tensor quadrature supports C <= 3, got {C}")
    _check(params, model.n)
    n, g = model.n, model.gamma
    order = order or _quad_order(C)
    log_zd = _tensor_quadrature(
        lambda z: _log_uq(z, params, n) + (1.0 - g) * _log_lik(z, model),
        params.mu + params.sigma2 * model.class_counts / (n + 1.0),
        np.sqrt(params.sigma2),
        order,
    )
    m, s2, _ = qc_quantities(params, n)
    log_zc = _tensor_quadrature(
        lambda z: _log_uq(z, params, n) / g + (1.0 - 1.0 / g) * _log_prior(z),
        m + 0.5 * s2,
        np.sqrt(s2) * 1.25,
        order,
    )
    return log_zd / (1.0 - g) - g / (1.0 - g) * log_zc


def log_evidence_quadrature(model: LogitModel, order: int | None = None) -> float:
    """``log int p(z) p(D|z) dz`` by tensor-product Gauss-Hermite (C <= 3)."""
    C = model.C
    if C > 3:
        raise DimensionTooLarge(f"tensor quadrature supports C <= 3, got {C}")
    order = order or _quad_order(C)
    # centre on the Laplace-style guess: prior shrinkage of log-frequencies
    freq = (model.class_counts + 0.5) / (model.n + 0.5 * C)
    centre = np.log(freq) - np.log(freq).mean()
    centre = centre * model.n / (model.n + 1.0)
    scale = np.full(C, 1.0 / math.sqrt(1.0 + model.n / C))
    return _tensor_quadrature(lambda z: _log_prior(z) + _log_lik(z, model), centre, scale * 1.5, order)


@dataclass(frozen=True)
class LogitFit:
    params: LogitPosteriorParams
    iterations: int
    grad_norm: float
    trace: tuple


def fit(
    model: LogitModel,
    init: LogitPosteriorParams | None = None,
    step: float = 0.05,
    max_iters: int = 20000,
    tol: float = 1e-8,
) -> LogitFit:
    """Fixed-step projected gradient ascent on ``LB_gamma``.

    ``sigma2`` is kept in ``[1e-8, n + 1 - 1e-8]``.  ``trace`` holds the closed
    form bound after every accepted step, starting with the initial value.
    """
    if not step > 0.0:
        raise ValueError("step must be positive")
    params = init if init is not None else LogitPosteriorParams.default(model.C)
    lo, hi = 1e-8, model.n + 1.0 - 1e-8
    mu, s2 = params.mu.copy(), np.clip(params.sigma2, lo, hi)
    trace = [lb_value(LogitPosteriorParams(mu, s2), model)]
    grad_norm = math.inf
    it = 0
    for it in range(max_iters + 1):
        gm, gs = lb_gradient(LogitPosteriorParams(mu, s2), model)
        grad_norm = float(np.sqrt(np.sum(gm * gm) + np.sum(gs * gs)))
        if grad_norm < tol or it == max_iters:
            break
        # steps are scaled by 1/(n+1) so that the update is O(step) regardless of n
        mu = mu + step * gm / (model.n + 1.0)
        s2 = np.clip(s2 + step * gs / (model.n + 1.0), lo, hi)
        trace.append(lb_value(LogitPosteriorParams(mu, s2), model))
    return LogitFit(LogitPosteriorParams(mu, s2), it, grad_norm, tuple(trace))
