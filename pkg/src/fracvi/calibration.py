"""Replica-based coverage study for fractional GMM posteriors.

For every replica we fit the mixture at each ``gamma`` on the grid plus the
ELBO (``gamma = 1``), record whether each component's ``1 - alpha`` interval
covers its true mean, and then pick ``gamma*`` by three regression strategies:

* ``R_ell``: per replica and component, regress gamma on interval length and
  predict at the ideal length; average over components; refit that replica.
* ``R_kappa``: across replicas, regress gamma on coverage and predict at
  ``1 - alpha``; average over components; refit every replica.
* ``R_invsq``: as ``R_ell`` but against ``length ** -2``.

Replica ``i`` draws its data from a stream seeded by ``(seed, i)`` only, so
results do not depend on evaluation order or on the number of workers.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import norm

from . import gmm
from .gaussian import Gaussian1D

GAMMA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
CONFLATED_GAMMAS = (0.1, 0.5, 0.9)
GAMMA_CLAMP = (0.01, 1.0)


class RegressionDegenerate(ValueError):
    """Raised when a gamma* regression has fewer than two points or a constant regressor."""


@dataclass(frozen=True)
class StudySpec:
    K: int = 2
    n: int = 400
    true_means: tuple = (-2.0, 2.0)
    prior_sd: float = 3.0
    obs_variance: float = 1.0
    alpha: float = 0.05
    replicas: int = 500
    gamma_grid: tuple = GAMMA_GRID
    seed: int = 7
    conflated_gammas: tuple = CONFLATED_GAMMAS

    def __post_init__(self):
        object.__setattr__(self, "true_means", tuple(float(m) for m in self.true_means))
        object.__setattr__(self, "gamma_grid", tuple(float(g) for g in self.gamma_grid))
        object.__setattr__(self, "conflated_gammas", tuple(float(g) for g in self.conflated_gammas))
        self.validate()

    def validate(self) -> None:
        if self.replicas < 1:
            raise ValueError("replicas: must be at least 1")
        if self.K < 1 or len(self.true_means) != self.K:
            raise ValueError("true_means: need exactly K values")
        if any(b <= a for a, b in zip(self.true_means, self.true_means[1:])):
            raise ValueError("true_means: must be strictly increasing")
        if self.n < 1:
            raise ValueError("n: must be positive")
        if not self.gamma_grid or any(not 0.0 < g <= 1.0 for g in self.gamma_grid):
            raise ValueError("gamma_grid: values must lie in (0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha: must lie in (0, 1)")
        if not (self.prior_sd > 0.0 and self.obs_variance > 0.0):
            raise ValueError("prior_sd/obs_variance: must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed: must be a 64-bit unsigned integer")

    @property
    def fit_gammas(self) -> tuple:
        """The grid with the ELBO (gamma = 1) appended, sorted and deduplicated."""
        return tuple(sorted(set(self.gamma_grid) | {1.0}))


PRESETS = {
    "table1": dict(K=2, n=400, true_means=(-2.0, 2.0)),
    "table2a": dict(K=2, n=30, true_means=(-2.0, 2.0)),
    "table2b": dict(K=2, n=400, true_means=(-0.5, 0.5)),
    "table3": dict(K=4, n=400, true_means=(-2.0, -0.5, 0.5, 2.0)),
}


def preset(name: str, **overrides) -> StudySpec:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return StudySpec(**{**PRESETS[name], **overrides})


@dataclass(frozen=True)
class CalibrationRow:
    label: str
    kappa: tuple
    ell: tuple
    bound: float


def ideal_length(K: int, n: int, obs_variance: float, alpha: float) -> float:
    """Interval length for a sample mean of ``n / K`` points."""
    if K <= 0 or n <= 0 or obs_variance <= 0 or not 0 < alpha < 1:
        raise ValueError("ideal_length needs positive K, n, obs_variance and alpha in (0, 1)")
    return 2.0 * norm.ppf(1.0 - alpha / 2.0) * math.sqrt(K * obs_variance / n)


def _replica_rng(spec: StudySpec, replica_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(replica_index,)))


def generate_replica(spec: StudySpec, replica_index: int) -> np.ndarray:
    """``n`` draws, each from a uniformly chosen component plus Gaussian noise."""
    rng = _replica_rng(spec, replica_index)
    labels = rng.integers(spec.K, size=spec.n)
    noise = rng.standard_normal(spec.n)
    return np.asarray(spec.true_means)[labels] + math.sqrt(spec.obs_variance) * noise


def match_components(fitted: gmm.GmmState, true_means) -> np.ndarray:
    """Permutation ``perm`` such that fitted component ``perm[k]`` is matched to
    the k-th smallest true mean (fitted components ordered by posterior mean)."""
    order_fit = np.argsort(fitted.means, kind="stable")
    order_true = np.argsort(np.asarray(true_means), kind="stable")
    perm = np.empty(len(order_fit), dtype=int)
    perm[order_true] = order_fit
    return perm


def study_model(spec: StudySpec, data: np.ndarray) -> gmm.GmmModel:
    return gmm.GmmModel(data=data, K=spec.K, prior_variance=spec.prior_sd**2, obs_variance=spec.obs_variance)


@dataclass(frozen=True)
class ReplicaFit:
    """Aligned summaries for one fitted state: per true component."""

    means: np.ndarray
    variances: np.ndarray
    covered: np.ndarray
    length: np.ndarray
    bound: float


def summarize(spec: StudySpec, state: gmm.GmmState, bound: float) -> ReplicaFit:
    perm = match_components(state, spec.true_means)
    means = state.means[perm]
    variances = state.variances[perm]
    half = norm.ppf(1.0 - spec.alpha / 2.0) * np.sqrt(variances)
    truth = np.asarray(spec.true_means)
    return ReplicaFit(
        means=means,
        variances=variances,
        covered=np.abs(means - truth) <= half,
        length=2.0 * half,
        bound=bound,
    )


def conflate(elbo_state: gmm.GmmState, frac_state: gmm.GmmState) -> gmm.GmmState:
    """ELBO means and assignments with the fractional fit's variances."""
    if elbo_state.K != frac_state.K:
        raise ValueError("states must have the same number of components")
    return gmm.GmmState(phi=elbo_state.phi, means=elbo_state.means, variances=frac_state.variances)


@dataclass
class ReplicaResult:
    index: int
    grid: dict  # gamma -> ReplicaFit
    conflated: dict  # gamma -> ReplicaFit


def fit_at(spec: StudySpec, model: gmm.GmmModel, gamma: float) -> gmm.FitResult:
    return gmm.fit(model, gamma, gmm.init_state(model))


def run_replica(spec: StudySpec, index: int) -> ReplicaResult:
    model = study_model(spec, generate_replica(spec, index))
    grid, states = {}, {}
    for g in spec.fit_gammas:
        res = fit_at(spec, model, g)
        states[g] = res.state
        grid[g] = summarize(spec, res.state, res.bound)
    conflated = {}
    for g in spec.conflated_gammas:
        if g not in states:
            res = fit_at(spec, model, g)
            states[g] = res.state
        state = conflate(states[1.0], states[g])
        conflated[g] = summarize(spec, state, gmm.evaluate_bound(model, state, g).total)
    return ReplicaResult(index=index, grid=grid, conflated=conflated)


def refit_replica(spec: StudySpec, index: int, gamma: float) -> ReplicaFit:
    model = study_model(spec, generate_replica(spec, index))
    res = fit_at(spec, model, gamma)
    return summarize(spec, res.state, res.bound)


def _map(fn: Callable, args: Iterable, workers: int):
    args = list(args)
    if workers <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*args), chunksize=max(1, len(args) // (4 * workers))))


def aggregate(label: str, fits: Sequence[ReplicaFit]) -> CalibrationRow:
    covered = np.array([f.covered for f in fits], dtype=float)
    length = np.array([f.length for f in fits])
    return CalibrationRow(
        label=label,
        kappa=tuple(covered.mean(0).tolist()),
        ell=tuple(length.mean(0).tolist()),
        bound=float(np.mean([f.bound for f in fits])),
    )


def _label(prefix: str, gamma: float) -> str:
    return f"{prefix}_{gamma:g}" if gamma != 1.0 else f"{prefix}_1.0"


def run_grid(spec: StudySpec, workers: int = 1, replicas: Sequence[ReplicaResult] | None = None):
    """Per-gamma and conflated rows; returns ``(grid_rows, conflated_rows, replica_results)``."""
    if replicas is None:
        replicas = _map(run_replica, ((spec, i) for i in range(spec.replicas)), workers)
    grid_rows = [aggregate(_label("LB", g), [r.grid[g] for r in replicas]) for g in spec.fit_gammas]
    conflated_rows = [aggregate(_label("C", g), [r.conflated[g] for r in replicas]) for g in spec.conflated_gammas]
    return grid_rows, conflated_rows, replicas


def regress_gamma(x: Sequence[float], gammas: Sequence[float], target: float) -> float:
    """Least-squares line of gamma on ``x``, evaluated at ``target``, clamped to ``(0.01, 1]``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(gammas, dtype=float)
    if len(x) < 2:
        raise RegressionDegenerate("need at least two grid points")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if not sxx > 1e-300 * max(1.0, float(x @ x)) or np.ptp(x) == 0.0:
        raise RegressionDegenerate("regressor is constant")
    slope = float(xc @ (y - y.mean())) / sxx
    pred = y.mean() + slope * (target - x.mean())
    return float(min(max(pred, GAMMA_CLAMP[0]), GAMMA_CLAMP[1]))


def _per_replica_gamma(spec: StudySpec, result: ReplicaResult, transform: Callable, target: float) -> float:
    gammas = spec.fit_gammas
    lengths = np.array([result.grid[g].length for g in gammas])  # (G, K)
    stars = [regress_gamma(transform(lengths[:, k]), gammas, target) for k in range(spec.K)]
    return float(np.mean(stars))


def _refit_all(spec: StudySpec, gammas: Sequence[float], workers: int) -> list:
    return _map(refit_replica, ((spec, i, g) for i, g in enumerate(gammas)), workers)


def strategy_R_ell(replicas: Sequence[ReplicaResult], spec: StudySpec, workers: int = 1):
    target = ideal_length(spec.K, spec.n, spec.obs_variance, spec.alpha)
    stars = [_per_replica_gamma(spec, r, lambda x: x, target) for r in replicas]
    fits = _refit_all(spec, stars, workers)
    return float(np.mean(stars)), aggregate("R_ell", fits)


def strategy_R_invsq(replicas: Sequence[ReplicaResult], spec: StudySpec, workers: int = 1):
    target = ideal_length(spec.K, spec.n, spec.obs_variance, spec.alpha) ** -2
    stars = [_per_replica_gamma(spec, r, lambda x: x**-2, target) for r in replicas]
    fits = _refit_all(spec, stars, workers)
    return float(np.mean(stars)), aggregate("R_invsq", fits)


def strategy_R_kappa(
    grid_rows: Sequence[CalibrationRow], replicas: Sequence[ReplicaResult], spec: StudySpec, workers: int = 1
):
    gammas = spec.fit_gammas
    kappa = np.array([row.kappa for row in grid_rows])  # (G, K)
    stars = [regress_gamma(kappa[:, k], gammas, 1.0 - spec.alpha) for k in range(spec.K)]
    gamma_star = float(np.mean(stars))
    fits = _refit_all(spec, [gamma_star] * len(replicas), workers)
    return gamma_star, aggregate("R_kappa", fits)


@dataclass
class StudyResult:
    spec: StudySpec
    rows: list
    gamma_star: dict = field(default_factory=dict)

    def row(self, label: str) -> CalibrationRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def run_study(spec: StudySpec, workers: int = 1, progress: Callable[[str], None] | None = None) -> StudyResult:
    say = progress or (lambda msg: None)
    say(f"fitting {spec.replicas} replicas x {len(spec.fit_gammas)} gammas")
    grid_rows, conf_rows, replicas = run_grid(spec, workers)
    result = StudyResult(spec=spec, rows=[*grid_rows, *conf_rows])
    strategies = (
        ("R_ell", lambda: strategy_R_ell(replicas, spec, workers)),
        ("R_kappa", lambda: strategy_R_kappa(grid_rows, replicas, spec, workers)),
        ("R_invsq", lambda: strategy_R_invsq(replicas, spec, workers)),
    )
    for name, run in strategies:
        say(name)
        try:
            gamma_star, row = run()
        except RegressionDegenerate as exc:
            say(f"{name} skipped: {exc}")
            continue
        result.rows.append(row)
        result.gamma_star[name] = gamma_star
    return result


CSV_HEADER = ("label", "component", "kappa", "ell", "bound")


def rows_to_csv(rows: Sequence[CalibrationRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        for k, (kap, ell) in enumerate(zip(row.kappa, row.ell), start=1):
            writer.writerow([row.label, k, f"{kap:.6g}", f"{ell:.6g}", f"{row.bound:.6g}"])
    return buf.getvalue()


def format_table(result: StudyResult) -> str:
    """Plain-text table in the layout of the coverage tables."""
    K = result.spec.K
    head = "label      " + "".join(f"  kappa{k + 1}   ell{k + 1}  " for k in range(K)) + "   bound"
    lines = [head]
    for r in result.rows:
        cells = "".join(f"  {kap:.4f}  {ell:.4f}" for kap, ell in zip(r.kappa, r.ell))
        lines.append(f"{r.label:<10} {cells}  {r.bound:9.1f}")
    lines.append("gamma*: " + ", ".join(f"{k}={v:.3f}" for k, v in result.gamma_star.items()))
    return "\n".join(lines)
