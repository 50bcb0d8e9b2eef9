"""Command-line front end: ``fracvi <command> [flags]``.

CSV goes to ``--out`` (or standard output when omitted); progress goes to
standard error.  Exit status is 0 on success, 2 when a flag fails
validation and 1 when a divergence is infinite.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import bounds, calibration, estimators, gmm, multinomial
from .gaussian import DivergenceInfinite, Gaussian1D

DEFAULT_SEED = 7
COMMANDS = ("calibrate", "gmm-fit", "multinomial-fit", "bounds-demo", "estimate", "is-evidence")
ESTIMATORS = ("lb", "lb-unnormalized", "lbh", "lbbh", "lbbh-alt")
ESTIMATE_HEADER = ("label", "value", "data_term", "complexity_term", "ns", "seed")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    preset: str = "table1"
    replicas: Optional[int] = None
    seed: int = DEFAULT_SEED
    gamma_grid: Optional[tuple] = None
    alpha: Optional[float] = None
    out: Optional[str] = None
    workers: int = 1
    gamma: float = 0.5
    replica: int = 0
    ns: int = 1024
    ns_prime: int = 32
    ui_size: int = 1
    estimator: str = "lb"
    counts: tuple = field(default=(3, 5, 2))

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"command: unknown command {self.command!r}")
        if self.preset not in calibration.PRESETS:
            raise ConfigError(f"preset: choose from {sorted(calibration.PRESETS)}")
        if self.replicas is not None and self.replicas < 1:
            raise ConfigError("replicas: must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed: must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ConfigError("workers: must be at least 1")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha: must lie in (0, 1)")
        if self.gamma_grid is not None and any(not 0.0 < g <= 1.0 for g in self.gamma_grid):
            raise ConfigError("gamma-grid: values must lie in (0, 1]")
        if self.replica < 0:
            raise ConfigError("replica: must be non-negative")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator: choose from {ESTIMATORS}")
        if self.ns < 1:
            raise ConfigError("ns: must be at least 1")
        if self.ns_prime < 1:
            raise ConfigError("ns-prime: must be at least 1")
        if self.ui_size < 1:
            raise ConfigError("ui-size: must be at least 1")
        if self.command in ("estimate",) and not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma: must lie in (0, 1) for Monte Carlo estimates")
        if self.command in ("gmm-fit",) and not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma: must lie in (0, 1]")
        if self.command == "multinomial-fit" and (len(self.counts) < 2 or min(self.counts) < 0 or sum(self.counts) < 1):
            raise ConfigError("counts: need at least two non-negative class counts with a positive total")

    def study_spec(self) -> calibration.StudySpec:
        overrides = {"seed": self.seed}
        if self.replicas is not None:
            overrides["replicas"] = self.replicas
        if self.gamma_grid is not None:
            overrides["gamma_grid"] = self.gamma_grid
        if self.alpha is not None:
            overrides["alpha"] = self.alpha
        try:
            return calibration.preset(self.preset, **overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _floats(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> tuple:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracvi", description="Fractional variational inference experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--out", help="CSV output path (default: standard output)")
    common.add_argument("--dump-config", action="store_true", help="print the resolved configuration as JSON and exit")

    study = argparse.ArgumentParser(add_help=False)
    study.add_argument("--preset", default="table1", help=f"one of {sorted(calibration.PRESETS)}")
    study.add_argument("--replicas", type=int)
    study.add_argument("--gamma-grid", type=_floats)
    study.add_argument("--alpha", type=float)
    study.add_argument("--workers", type=int, default=1)

    sampler = argparse.ArgumentParser(add_help=False)
    sampler.add_argument("--ns", type=int, default=1024)
    sampler.add_argument("--ns-prime", type=int, default=32)
    sampler.add_argument("--ui-size", type=int, default=1)

    sub.add_parser("calibrate", parents=[common, study], help="replica coverage study")
    p = sub.add_parser("gmm-fit", parents=[common, study], help="fit one replica at one gamma")
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--replica", type=int, default=0)
    p = sub.add_parser("multinomial-fit", parents=[common], help="fit the multinomial-logit posterior")
    p.add_argument("--counts", type=_ints, default=(3, 5, 2))
    p = sub.add_parser("bounds-demo", parents=[common], help="closed-form bounds on a conjugate Gaussian model")
    p.add_argument("--gamma-grid", type=_floats)
    p = sub.add_parser("estimate", parents=[common, sampler], help="Monte Carlo bound estimate on a toy model")
    p.add_argument("--estimator", default="lb", choices=ESTIMATORS)
    p.add_argument("--gamma", type=float, default=0.5)
    p = sub.add_parser("is-evidence", parents=[common, study, sampler], help="importance-sampling log-evidence")
    p.add_argument("--replica", type=int, default=0)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    names = {f for f in RunConfig.__dataclass_fields__}
    values = {k: v for k, v in vars(args).items() if k in names and v is not None}
    return RunConfig(**values)


def _write(rows, header, out: Optional[str]) -> int:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _emit(buf.getvalue(), out)
    return len(rows)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _g(x) -> str:
    return "" if x is None else f"{x:.6g}"


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def run_calibrate(cfg: RunConfig) -> int:
    spec = cfg.study_spec()
    result = calibration.run_study(spec, workers=cfg.workers, progress=_progress)
    _emit(calibration.rows_to_csv(result.rows), cfg.out)
    for name, value in result.gamma_star.items():
        _progress(f"gamma* {name} = {value:.4f}")
    return len(result.rows) * spec.K


def run_gmm_fit(cfg: RunConfig) -> int:
    spec = cfg.study_spec()
    model = calibration.study_model(spec, calibration.generate_replica(spec, cfg.replica))
    res = gmm.fit(model, cfg.gamma, gmm.init_state(model))
    perm = calibration.match_components(res.state, spec.true_means)
    rows = []
    for rank, k in enumerate(perm, start=1):
        lo, hi = gmm.credible_interval(Gaussian1D(res.state.means[k], res.state.variances[k]), spec.alpha)
        rows.append([rank, _g(res.state.means[k]), _g(res.state.variances[k]), _g(lo), _g(hi), _g(res.bound), res.iterations])
    return _write(rows, ("component", "mean", "variance", "lower", "upper", "bound", "iterations"), cfg.out)


def run_multinomial_fit(cfg: RunConfig) -> int:
    model = multinomial.LogitModel(np.asarray(cfg.counts))
    res = multinomial.fit(model)
    value = multinomial.lb_value(res.params, model)
    rows = [[c + 1, cfg.counts[c], _g(res.params.mu[c]), _g(res.params.sigma2[c]), _g(value), res.iterations]
            for c in range(model.C)]
    return _write(rows, ("class", "count", "mu", "sigma2", "bound", "iterations"), cfg.out)


def demo_model(seed: int) -> bounds.ConjugateGaussianModel:
    rng = np.random.default_rng(seed)
    return bounds.ConjugateGaussianModel(Gaussian1D(0.0, 4.0), 1.0, tuple(1.0 + rng.standard_normal(20)))


def run_bounds_demo(cfg: RunConfig) -> int:
    model = demo_model(cfg.seed)
    grid = cfg.gamma_grid or (0.1, 0.3, 0.5, 0.7, 0.9)
    q = model.posterior()
    rows = [["log_evidence", _g(bounds.log_evidence(model)), "", "", "", cfg.seed]]
    e = bounds.elbo(model, q)
    rows.append(["ELBO", _g(e.total), _g(e.data_term), _g(e.complexity_term), "", cfg.seed])
    for g in grid:
        if g == 1.0:
            continue
        b = bounds.lb_gamma(model, q, g)
        rows.append([f"LB_{g:g}", _g(b.total), _g(b.data_term), _g(b.complexity_term), "", cfg.seed])
    return _write(rows, ESTIMATE_HEADER, cfg.out)


def run_estimate(cfg: RunConfig) -> int:
    model = demo_model(cfg.seed)
    spec = estimators.SamplerSpec(Ns=cfg.ns, Ns_prime=cfg.ns_prime, Ui_size=cfg.ui_size, seed=cfg.seed)
    q = model.posterior(cfg.gamma)
    # semi-implicit q(z|u) whose marginal is the fractional posterior
    toy_q = estimators.SemiImplicitToy(Gaussian1D(q.mean, q.variance / 2), 1.0, 0.0, q.variance / 2)
    bayes = model.posterior()
    toy_r = estimators.SemiImplicitToy(toy_q.mixing, 1.0, bayes.mean - q.mean, q.variance / 2)
    if cfg.estimator == "lb":
        rep = estimators.estimate_lb(model, q, cfg.gamma, spec)
    elif cfg.estimator == "lb-unnormalized":
        log_Z = 1.0
        rep = estimators.estimate_lb_unnormalized(model, lambda z: q.logpdf(z) + log_Z, log_Z, cfg.gamma, spec, q)
    elif cfg.estimator == "lbh":
        rep = estimators.estimate_lbh(toy_q, model, cfg.gamma, spec)
    elif cfg.estimator == "lbbh":
        rep = estimators.estimate_lbbh(toy_q, toy_r, model, cfg.gamma, spec)
    else:
        rep = estimators.estimate_lbbh_alt(toy_q, toy_r, model, cfg.gamma, spec)
    exact = bounds.lb_gamma(model, q, cfg.gamma)
    rows = [
        [cfg.estimator, _g(rep.value), _g(rep.data_term), _g(rep.complexity_term), cfg.ns, cfg.seed],
        ["closed_form_lb", _g(exact.total), _g(exact.data_term), _g(exact.complexity_term), "", cfg.seed],
    ]
    return _write(rows, ESTIMATE_HEADER, cfg.out)


def run_is_evidence(cfg: RunConfig) -> int:
    spec = cfg.study_spec()
    model = calibration.study_model(spec, calibration.generate_replica(spec, cfg.replica))
    rows = []
    for g in spec.fit_gammas:
        res = gmm.fit(model, g, gmm.init_state(model))
        b = gmm.evaluate_bound(model, res.state, g)
        est = estimators.gmm_is_log_evidence(model, res.state, cfg.ns, seed=cfg.seed)
        tag = f"{g:g}" if g != 1.0 else "1.0"
        rows.append([f"LB_{tag}", _g(b.total), _g(b.data_term), _g(b.complexity_term), "", cfg.seed])
        rows.append([f"IS_{tag}", _g(est.log_evidence), "", "", cfg.ns, cfg.seed])
        rows.append([f"CV_{tag}", _g(est.cv), "", "", cfg.ns, cfg.seed])
    return _write(rows, ESTIMATE_HEADER, cfg.out)


RUNNERS = {
    "calibrate": run_calibrate,
    "gmm-fit": run_gmm_fit,
    "multinomial-fit": run_multinomial_fit,
    "bounds-demo": run_bounds_demo,
    "estimate": run_estimate,
    "is-evidence": run_is_evidence,
}


def run(cfg: RunConfig) -> int:
    """Execute one command; returns the process exit status."""
    start = time.perf_counter()
    try:
        cfg.validate()
        rows = RUNNERS[cfg.command](cfg)
    except (ConfigError, estimators.SubsetInvalid, multinomial.InvalidVariance) as exc:
        print(f"fracvi {cfg.command}: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except DivergenceInfinite as exc:
        print(f"fracvi {cfg.command}: numerical failure: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"fracvi {cfg.command}: invalid configuration: {exc}", file=sys.stderr)
        return 2
    summary = f"{cfg.command}: wrote {rows} rows in {time.perf_counter() - start:.1f}s"
    print(summary, file=sys.stdout if cfg.out else sys.stderr)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = config_from_args(args)
    if args.dump_config:
        try:
            cfg.validate()
        except ConfigError as exc:
            print(f"fracvi {cfg.command}: invalid configuration: {exc}", file=sys.stderr)
            return 2
        print(json.dumps(asdict(cfg), indent=2, sort_keys=True))
        return 0
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
