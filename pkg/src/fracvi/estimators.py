"""Monte Carlo estimators of the fractional bounds and of the log-evidence.

All draws are standard normals (or uniforms) pushed through distribution
parameters, and every estimator is a pure function of its inputs and
``SamplerSpec.seed``.  The log-mean-exp terms are shifted by their maximum
before exponentiating.  With a single sample every shifted exponent is
exactly zero, so the plug-in estimators reduce to the single-sample ELBO
bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import logsumexp

from . import gmm
from .bounds import ConjugateGaussianModel
from .gaussian import Gaussian1D, as_gamma


class SubsetInvalid(ValueError):
    """Raised when the cross-entropy subsets cannot exclude their own ``u_i``."""


@dataclass(frozen=True)
class SamplerSpec:
    Ns: int = 1024
    Ns_prime: int = 1
    Ui_size: int = 1
    seed: int = 0
    separate_draws: bool = False

    def __post_init__(self):
        if self.Ns < 1:
            raise ValueError("Ns: must be at least 1")
        if self.Ns_prime < 1:
            raise ValueError("Ns_prime: must be at least 1")
        if self.Ui_size < 1:
            raise ValueError("Ui_size: must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed: must be a 64-bit unsigned integer")

    def check_hierarchical(self) -> None:
        if self.Ns % self.Ns_prime:
            raise ValueError(f"Ns: {self.Ns} is not divisible by Ns_prime={self.Ns_prime}")

    @property
    def per_u(self) -> int:
        return self.Ns // self.Ns_prime

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class SemiImplicitToy:
    """``u ~ mixing`` and ``z | u ~ N(slope * u + intercept, cond_variance)``."""

    mixing: Gaussian1D
    slope: float = 1.0
    intercept: float = 0.0
    cond_variance: float = 1.0

    def __post_init__(self):
        if not self.cond_variance > 0.0:
            raise ValueError("cond_variance: must be positive")

    @property
    def marginal(self) -> Gaussian1D:
        return Gaussian1D(
            self.slope * self.mixing.mean + self.intercept,
            self.slope**2 * self.mixing.variance + self.cond_variance,
        )

    def cond_mean(self, u):
        return self.slope * np.asarray(u) + self.intercept

    def sample_u(self, eps):
        return self.mixing.mean + self.mixing.sd * eps

    def sample_z(self, u, eps):
        return self.cond_mean(u) + math.sqrt(self.cond_variance) * eps

    def cond_logpdf(self, z, u):
        d = np.asarray(z) - self.cond_mean(u)
        return -0.5 * (math.log(2.0 * math.pi * self.cond_variance) + d * d / self.cond_variance)


@dataclass(frozen=True)
class EstimatorReport:
    """``value = data_term - complexity_term - extra_kl_term``."""

    value: float
    data_term: float
    complexity_term: float
    spec: SamplerSpec
    extra_kl_term: float = 0.0


def log_mean_exp(x) -> float:
    x = np.asarray(x, dtype=float).ravel()
    return float(logsumexp(x) - math.log(x.size))


def _powered_mean(log_terms, power: float) -> float:
    """``(1/power) log mean exp(power * log_terms)``, shifted by the max."""
    x = np.asarray(log_terms, dtype=float).ravel()
    top = float(np.max(x))
    return top + log_mean_exp(power * (x - top)) / power


def _fractional_terms(log_lik, log_ratio, g: float) -> tuple[float, float]:
    # data: (1/(1-g)) log mean p(D|z)^(1-g); complexity: (g/(1-g)) log mean (q/p)^(1/g-1)
    return _powered_mean(log_lik, 1.0 - g), _powered_mean(log_ratio, 1.0 / g - 1.0)


def _open_gamma(gamma) -> float:
    g = as_gamma(gamma)
    if not 0.0 < g < 1.0:
        raise ValueError("gamma: Monte Carlo estimators need gamma in (0, 1)")
    return g


def _draws(q: Gaussian1D, spec: SamplerSpec) -> tuple[np.ndarray, np.ndarray]:
    rng = spec.rng()
    z = q.mean + q.sd * rng.standard_normal(spec.Ns)
    z2 = q.mean + q.sd * rng.standard_normal(spec.Ns) if spec.separate_draws else z
    return z, z2


def estimate_lb(model: ConjugateGaussianModel, q: Gaussian1D, gamma, spec: SamplerSpec) -> EstimatorReport:
    """Plug-in ``LB_gamma`` with one batch of draws shared by both terms
    (two batches when ``spec.separate_draws``)."""
    g = _open_gamma(gamma)
    z_d, z_c = _draws(q, spec)
    data, complexity = _fractional_terms(
        model.log_likelihood_at(z_d), q.logpdf(z_c) - model.prior.logpdf(z_c), g
    )
    return EstimatorReport(data - complexity, data, complexity, spec)


def estimate_lb_unnormalized(
    model: ConjugateGaussianModel,
    log_uq: Callable[[np.ndarray], np.ndarray],
    log_Z: float,
    gamma,
    spec: SamplerSpec,
    proposal: Gaussian1D,
) -> EstimatorReport:
    """``LB_gamma`` of ``q = uq / Z`` from draws of ``proposal`` (which should be ``q``).

    The complexity term is reported with ``log_Z`` already folded in, so a
    wrong ``log_Z`` moves ``value`` by exactly the error.
    """
    g = _open_gamma(gamma)
    z_d, z_c = _draws(proposal, spec)
    data, raw = _fractional_terms(model.log_likelihood_at(z_d), log_uq(z_c) - model.prior.logpdf(z_c), g)
    complexity = raw - log_Z
    return EstimatorReport(data - complexity, data, complexity, spec)


def _hierarchical_draws(toy: SemiImplicitToy, spec: SamplerSpec, rng: np.random.Generator):
    spec.check_hierarchical()
    u = toy.sample_u(rng.standard_normal(spec.Ns_prime))
    z = toy.sample_z(u[:, None], rng.standard_normal((spec.Ns_prime, spec.per_u)))
    return u, z


def estimate_lbh(toy: SemiImplicitToy, model: ConjugateGaussianModel, gamma, spec: SamplerSpec) -> EstimatorReport:
    """``LBh_gamma``: ``Ns'`` mixing draws, ``Ns/Ns'`` conditional draws each."""
    g = _open_gamma(gamma)
    u, z = _hierarchical_draws(toy, spec, spec.rng())
    data, complexity = _fractional_terms(
        model.log_likelihood_at(z), toy.cond_logpdf(z, u[:, None]) - model.prior.logpdf(z), g
    )
    return EstimatorReport(data - complexity, data, complexity, spec)


def _shared_mixing(toy_q: SemiImplicitToy, toy_r: SemiImplicitToy) -> None:
    if toy_q.mixing != toy_r.mixing:
        raise ValueError("toy_r: q and r must share the mixing distribution")


def _lbbh_parts(toy_q, toy_r, model, g, spec):
    rng = spec.rng()
    u, z = _hierarchical_draws(toy_q, spec, rng)
    z_r = toy_r.sample_z(u[:, None], rng.standard_normal((spec.Ns_prime, spec.per_u)))
    data = float(np.mean(model.log_likelihood_at(z_r)))
    complexity = _powered_mean(toy_q.cond_logpdf(z, u[:, None]) - model.prior.logpdf(z), 1.0 / g - 1.0)
    return u, z_r, data, complexity


def estimate_lbbh(
    toy_q: SemiImplicitToy, toy_r: SemiImplicitToy, model: ConjugateGaussianModel, gamma, spec: SamplerSpec
) -> EstimatorReport:
    """``LBbh_gamma``: data term under ``r``, conditional KL(r||q) scaled by
    ``1/(1-gamma)``, Renyi term under ``q``.  The KL goes to ``extra_kl_term``."""
    g = _open_gamma(gamma)
    _shared_mixing(toy_q, toy_r)
    u, z_r, data, complexity = _lbbh_parts(toy_q, toy_r, model, g, spec)
    log_ratio = toy_r.cond_logpdf(z_r, u[:, None]) - toy_q.cond_logpdf(z_r, u[:, None])
    kl = float(np.mean(log_ratio)) / (1.0 - g)
    return EstimatorReport(data - kl - complexity, data, complexity, spec, extra_kl_term=kl)


def cyclic_subsets(Ns_prime: int, size: int) -> np.ndarray:
    """Row ``i`` holds the ``size`` indices following ``i`` cyclically."""
    if size >= Ns_prime:
        raise SubsetInvalid(f"Ui_size: {size} must be below Ns_prime={Ns_prime} so U_i can exclude u_i")
    return (np.arange(Ns_prime)[:, None] + np.arange(1, size + 1)[None, :]) % Ns_prime


def estimate_lbbh_alt(
    toy_q: SemiImplicitToy, toy_r: SemiImplicitToy, model: ConjugateGaussianModel, gamma, spec: SamplerSpec
) -> EstimatorReport:
    """``LBbh_gamma``-alt: the cross-entropy to ``q`` is averaged over the other
    mixing draws in ``U_i``.  ``extra_kl_term`` holds entropy plus cross term."""
    g = _open_gamma(gamma)
    _shared_mixing(toy_q, toy_r)
    subsets = cyclic_subsets(spec.Ns_prime, spec.Ui_size)
    spec.check_hierarchical()
    u, z_r, data, complexity = _lbbh_parts(toy_q, toy_r, model, g, spec)
    neg_entropy = float(np.mean(toy_r.cond_logpdf(z_r, u[:, None])))
    # cross[i, k, j] = log q(z'_ik | u_{U_i[j]})
    cross = toy_q.cond_logpdf(z_r[:, :, None], u[subsets][:, None, :])
    cross_entropy = float(np.mean(cross))
    kl = (neg_entropy - cross_entropy) / (1.0 - g)
    return EstimatorReport(data - kl - complexity, data, complexity, spec, extra_kl_term=kl)


class ISEstimate(NamedTuple):
    log_evidence: float
    cv: float
    ns: int
    cv_overflow: bool = False

    @property
    def stderr(self) -> float:
        """Delta-method standard error of ``log_evidence``."""
        return self.cv / math.sqrt(self.ns)


def is_from_log_weights(log_w) -> ISEstimate:
    lw = np.asarray(log_w, dtype=float).ravel()
    if lw.size < 2:
        raise ValueError("Ns: importance sampling needs at least two draws")
    w = np.exp(lw - np.max(lw))
    cv = float(np.std(w, ddof=1) / np.mean(w))
    overflow = not math.isfinite(cv)
    return ISEstimate(log_mean_exp(lw), math.inf if overflow else cv, lw.size, overflow)


def is_log_evidence(
    log_joint: Callable,
    sample: Callable[[np.random.Generator, int], object],
    log_q: Callable,
    Ns: int,
    seed: int = 0,
) -> ISEstimate:
    """Importance-sampling log-evidence with weights ``p(x, theta) / q(theta)``.

    ``sample(rng, Ns)`` returns draws that ``log_joint`` and ``log_q`` map to
    arrays of ``Ns`` log-densities.
    """
    if Ns < 2:
        raise ValueError("Ns: importance sampling needs at least two draws")
    draws = sample(np.random.default_rng(seed), Ns)
    return is_from_log_weights(np.asarray(log_joint(draws)) - np.asarray(log_q(draws)))


def gmm_log_weights(model: gmm.GmmModel, state: gmm.GmmState, rng: np.random.Generator, count: int) -> np.ndarray:
    """Log weights for ``count`` draws of ``(u, c)`` from the mean-field posterior."""
    K = model.K
    u = state.means + np.sqrt(state.variances) * rng.standard_normal((count, K))
    cum = np.cumsum(state.phi, axis=1)
    cum[:, -1] = 1.0
    c = (rng.random((count, model.n, 1)) < cum[None, :, :]).argmax(axis=2)
    s0, s2 = model.prior_variance, model.obs_variance
    log_prior_u = np.sum(-0.5 * (math.log(2 * math.pi * s0) + u * u / s0), axis=1)
    log_q_u = np.sum(-0.5 * (np.log(2 * math.pi * state.variances) + (u - state.means) ** 2 / state.variances), axis=1)
    rows = np.arange(model.n)
    with np.errstate(divide="ignore"):
        log_phi = np.log(state.phi)
    log_q_c = log_phi[rows[None, :], c].sum(1)
    log_prior_c = np.log(model.assignment_prior)[c].sum(1)
    centres = np.take_along_axis(u, c, axis=1)
    d = model.data[None, :] - centres
    log_lik = np.sum(-0.5 * (math.log(2 * math.pi * s2) + d * d / s2), axis=1)
    return log_prior_u + log_prior_c + log_lik - log_q_u - log_q_c


def gmm_is_log_evidence(
    model: gmm.GmmModel, state: gmm.GmmState, Ns: int = 1000, seed: int = 0, batch: int = 1000
) -> ISEstimate:
    """IS evidence with ``u_k ~ q(u_k)`` and ``c_i ~ Categorical(phi_i)`` independently."""
    if Ns < 2:
        raise ValueError("Ns: importance sampling needs at least two draws")
    rng = np.random.default_rng(seed)
    chunks = [gmm_log_weights(model, state, rng, min(batch, Ns - start)) for start in range(0, Ns, batch)]
    return is_from_log_weights(np.concatenate(chunks))


class TwoPointMixing(NamedTuple):
    q1: float
    q2: float
    residual: float
    valid: bool


def two_point_residuals(f1, f2, g1, g2, gamma, q1, q2) -> tuple[float, float]:
    """Stationarity factor of ``LBh_gamma`` at each support point."""
    F = q1 * f1 + q2 * f2
    G = q1 * g1 + q2 * g2
    r = [f / F / (1.0 - gamma) - gamma / (1.0 - gamma) * gg / G - 1.0 for f, gg in ((f1, g1), (f2, g2))]
    return r[0], r[1]


def two_point_mixing(f1: float, f2: float, g1: float, g2: float, gamma) -> TwoPointMixing:
    """Closed-form two-atom mixing weights at which ``LBh_gamma`` is stationary.

    ``valid`` is False when the denominator vanishes or the weights fall
    outside ``(0, 1)``; the weights are then returned as computed (NaN for a
    zero denominator).
    """
    g = _open_gamma(gamma)
    denom = (1.0 - g) * (f1 - f2) * (g1 - g2)
    if denom == 0.0 or not math.isfinite(denom):
        return TwoPointMixing(math.nan, math.nan, math.nan, False)
    q1 = ((1.0 - g) * f2 * g2 - f1 * g2 + g * f2 * g1) / denom
    q2 = ((1.0 - g) * f1 * g1 - f2 * g1 + g * f1 * g2) / denom
    interior = 0.0 < q1 < 1.0 and 0.0 < q2 < 1.0
    if not interior:
        return TwoPointMixing(q1, q2, math.nan, False)
    residual = max(abs(r) for r in two_point_residuals(f1, f2, g1, g2, g, q1, q2))
    return TwoPointMixing(q1, q2, residual, True)
