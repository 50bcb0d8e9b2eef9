"""Mean-field fractional VI for the one-dimensional Gaussian mixture.

Model: ``u_k ~ N(0, prior_variance)``, ``c_i ~ Categorical(assignment_prior)``,
``x_i | c_i, u ~ N(u_{c_i}, obs_variance)``.  The variational family is
``prod_k q(u_k) prod_i q(c_i)`` with Gaussian ``q(u_k)`` and ``phi_ik = q(c_i = k)``.

Each sweep updates the assignments first, then the components.  Inside the
assignment update the tilted densities ``q_i(u_k)`` use ``phi`` from the
previous sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp, xlogy
from scipy.stats import norm

from .bounds import BoundValue
from .gaussian import LOG_2PI, DivergenceInfinite, Gaussian1D, as_gamma


@dataclass(frozen=True)
class GmmModel:
    data: np.ndarray
    K: int
    prior_variance: float = 9.0
    obs_variance: float = 1.0
    assignment_prior: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=float))
        if self.K < 1:
            raise ValueError("K must be positive")
        if not (self.prior_variance > 0.0 and self.obs_variance > 0.0):
            raise ValueError("variances must be positive")
        pi = np.full(self.K, 1.0 / self.K) if self.assignment_prior is None else np.asarray(self.assignment_prior, float)
        if pi.shape != (self.K,) or abs(pi.sum() - 1.0) > 1e-10 or np.any(pi < 0):
            raise ValueError("assignment_prior must be a probability vector of length K")
        object.__setattr__(self, "assignment_prior", pi)

    @property
    def n(self) -> int:
        return len(self.data)

    @property
    def prior(self) -> Gaussian1D:
        return Gaussian1D(0.0, self.prior_variance)


@dataclass(frozen=True)
class GmmState:
    phi: np.ndarray  # (n, K)
    means: np.ndarray  # (K,)
    variances: np.ndarray  # (K,)

    @property
    def K(self) -> int:
        return len(self.means)

    @property
    def components(self) -> tuple:
        return tuple(Gaussian1D(float(m), float(v)) for m, v in zip(self.means, self.variances))

    @classmethod
    def from_components(cls, phi, components) -> "GmmState":
        return cls(
            phi=np.asarray(phi, dtype=float),
            means=np.array([c.mean for c in components], dtype=float),
            variances=np.array([c.variance for c in components], dtype=float),
        )

    def check(self, atol: float = 1e-10) -> None:
        if np.any(self.phi < 0.0) or np.any(self.phi > 1.0):
            raise ValueError("phi entries must lie in [0, 1]")
        if np.any(np.abs(self.phi.sum(1) - 1.0) > atol):
            raise ValueError("phi rows must sum to 1")
        if np.any(self.variances <= 0.0):
            raise ValueError("component variances must be positive")


@dataclass(frozen=True)
class FitResult:
    state: GmmState
    bound: float
    iterations: int
    converged: bool
    trace: tuple = field(default=(), repr=False)


def default_init_means(K: int) -> np.ndarray:
    if K == 1:
        return np.zeros(1)
    if K == 2:
        return np.array([-1.0, 1.0])
    if K == 4:
        return np.array([-1.0, -0.25, 0.25, 1.0])
    return np.linspace(-1.0, 1.0, K)


def init_state(model: GmmModel) -> GmmState:
    """Uniform assignments, means at +-1 (and +-1/4 for K=4), variances n/K."""
    K, n = model.K, model.n
    return GmmState(
        phi=np.full((n, K), 1.0 / K),
        means=default_init_means(K),
        variances=np.full(K, max(n, 1) / K),
    )


def update_components(model: GmmModel, state: GmmState, gamma) -> GmmState:
    g = as_gamma(gamma)
    if not 0.0 < g <= 1.0:
        raise ValueError("component update needs gamma in (0, 1]")
    s2 = model.obs_variance
    weight = state.phi.sum(0)
    wx = state.phi.T @ model.data
    prec = 1.0 / model.prior_variance + g * weight / s2
    var = 1.0 / prec
    return replace(state, means=g * wx / s2 * var, variances=var)


def tilted_expectation(component: Gaussian1D, x, w, obs_variance: float = 1.0):
    """``E_{q_i}[log N(x | u, obs_variance)]`` with ``q_i ∝ component * N(x | u, .)^w``.

    Broadcasts over arrays of ``x`` and ``w``.
    """
    return _tilted_expectation(component.mean, component.variance, x, w, obs_variance)


def _tilted_expectation(m, v, x, w, s2):
    prec = 1.0 / v + w / s2
    tv = 1.0 / prec
    tm = (m / v + w * x / s2) * tv
    return -0.5 * (LOG_2PI + math.log(s2)) - 0.5 * ((x - tm) ** 2 + tv) / s2


def _expected_log_lik(m, v, x, s2):
    return -0.5 * (LOG_2PI + math.log(s2)) - 0.5 * ((x - m) ** 2 + v) / s2


def update_assignments(model: GmmModel, state: GmmState, gamma) -> GmmState:
    g = as_gamma(gamma)
    x = model.data[:, None]
    if g == 1.0:
        # no tilt: the plain CAVI expectation, without the 1/(1/v) round trip
        loglik = _expected_log_lik(state.means[None, :], state.variances[None, :], x, model.obs_variance)
    else:
        w = (1.0 - g) * state.phi
        loglik = _tilted_expectation(state.means[None, :], state.variances[None, :], x, w, model.obs_variance)
    logits = np.log(model.assignment_prior)[None, :] + loglik
    phi = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    return replace(state, phi=phi)


def _log_powered_lik_integral(m, v, x, w, s2):
    # log int N(u|m,v) N(x|u,s2)^w du, closed form; zero when w = 0
    denom = s2 + w * v
    return -0.5 * w * (LOG_2PI + np.log(s2)) + 0.5 * np.log(s2 / denom) - 0.5 * w * (x - m) ** 2 / denom


def _log_joint_powered_integral(m, v, x, w, s2):
    # log int N(u_k|m_k,v_k) prod_i N(x_i|u_k,s2)^(w_ik) du_k for every k
    W = w.sum(0)
    Sx = w.T @ x
    Sxx = w.T @ (x * x)
    prec = 1.0 / v + W / s2
    loc = m / v + Sx / s2
    return (
        -0.5 * W * (LOG_2PI + math.log(s2))
        - 0.5 * Sxx / s2
        - 0.5 * m * m / v
        - 0.5 * np.log(v * prec)
        + 0.5 * loc * loc / prec
    )


def _assignment_kl(model: GmmModel, phi) -> float:
    return float(np.sum(xlogy(phi, phi) - phi * np.log(model.assignment_prior)[None, :]))


def _renyi_to_prior(model: GmmModel, means, variances, alpha: float):
    # D_alpha(N(m, v) || N(0, s0)) for arrays of components
    s0 = model.prior_variance
    mixed = (1.0 - alpha) * variances + alpha * s0
    if np.any(mixed <= 0.0):
        raise DivergenceInfinite("component Renyi divergence to the prior is infinite")
    # closed form of (1/(alpha-1)) log int q^alpha p^(1-alpha)
    return alpha * means**2 / (2.0 * mixed) - (
        np.log(mixed) - (1.0 - alpha) * np.log(variances) - alpha * np.log(s0)
    ) / (2.0 * (alpha - 1.0))


def _kl_to_prior(model: GmmModel, means, variances):
    s0 = model.prior_variance
    r = variances / s0
    return 0.5 * (r - 1.0 - np.log(r) + means**2 / s0)


def mixture_elbo(model: GmmModel, state: GmmState) -> BoundValue:
    ell = _expected_log_lik(state.means[None, :], state.variances[None, :], model.data[:, None], model.obs_variance)
    data = float(np.sum(state.phi * ell))
    assign = _assignment_kl(model, state.phi)
    kl = float(np.sum(_kl_to_prior(model, state.means, state.variances)))
    return BoundValue(data_term=data, complexity_term=kl, extra_kl_term=assign, total=data - kl - assign, divergence=kl)


def evaluate_bound(model: GmmModel, state: GmmState, gamma, form: str = "joint") -> BoundValue:
    """Mixture ``LB_gamma`` with an ELBO over assignments.

    ``data_term`` is the powered-likelihood part, ``extra_kl_term`` the
    assignment KL and ``complexity_term`` the summed Renyi divergences of the
    components to the prior.  ``gamma == 1`` returns :func:`mixture_elbo`.

    ``form="joint"`` integrates each component against the product of its
    powered likelihoods, which is a valid lower bound and reduces to
    ``lb_gamma`` for ``K = 1``.  ``form="split"`` takes one integral per datum
    instead; that version is not a bound in general (it can exceed the
    log-evidence) and is kept for comparison only.
    """
    g = as_gamma(gamma)
    if form not in ("joint", "split"):
        raise ValueError(f"form must be 'joint' or 'split', got {form!r}")
    if g == 1.0:
        return mixture_elbo(model, state)
    if not 0.0 < g < 1.0:
        raise ValueError("mixture bound needs gamma in (0, 1]")
    w = (1.0 - g) * state.phi
    if form == "joint":
        logint = _log_joint_powered_integral(state.means, state.variances, model.data, w, model.obs_variance)
    else:
        x = model.data[:, None]
        logint = _log_powered_lik_integral(state.means[None, :], state.variances[None, :], x, w, model.obs_variance)
    data = float(np.sum(logint)) / (1.0 - g)
    assign = _assignment_kl(model, state.phi)
    renyi = float(np.sum(_renyi_to_prior(model, state.means, state.variances, 1.0 / g)))
    return BoundValue(
        data_term=data, complexity_term=renyi, extra_kl_term=assign, total=data - renyi - assign, divergence=renyi
    )


def fit(
    model: GmmModel,
    gamma,
    init: GmmState | None = None,
    tol: float = 1e-9,
    max_iters: int = 1000,
) -> FitResult:
    """Coordinate ascent until the bound changes by less than ``tol``."""
    g = as_gamma(gamma)
    state = init if init is not None else init_state(model)
    previous = None
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        state = update_components(model, update_assignments(model, state, g), g)
        bound = evaluate_bound(model, state, g).total
        trace.append(bound)
        if previous is not None and abs(bound - previous) < tol:
            converged = True
            break
        previous = bound
    return FitResult(state=state, bound=trace[-1], iterations=it, converged=converged, trace=tuple(trace))


def credible_interval(component: Gaussian1D, alpha: float) -> tuple[float, float]:
    """Central ``1 - alpha`` interval of a Gaussian."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    half = norm.ppf(1.0 - alpha / 2.0) * component.sd
    return component.mean - half, component.mean + half


def fractional_assignment(bayes_assignment, prior, gamma_prime: float) -> np.ndarray:
    """Normalised ``bayes**gamma' * prior**(1 - gamma')``."""
    if not 0.0 < gamma_prime <= 1.0:
        raise ValueError("gamma' must lie in (0, 1]")
    r = np.asarray(bayes_assignment, dtype=float)
    p = np.asarray(prior, dtype=float)
    with np.errstate(divide="ignore"):
        logits = gamma_prime * np.log(r) + (1.0 - gamma_prime) * np.log(p)
    return np.exp(logits - logsumexp(logits))
