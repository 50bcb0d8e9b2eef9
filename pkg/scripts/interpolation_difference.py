"""Compare learnt fractional precisions with prior/Bayes interpolation.

For each replica (K=2, n=20, means +-1/2) the first component's precision
from the gamma fit is compared with the precision of
``prior**(1-gamma) * r**gamma``, where ``r`` is the ELBO fit.  Prints
quantiles of log10 mean-squared differences and writes the per-replica
values plus the precision curves of the replica with the largest difference.
"""

import argparse
import csv
import pathlib

import numpy as np

from fracvi import calibration, gmm
from fracvi.bounds import interpolate_posterior


def precision_curves(spec, index):
    model = calibration.study_model(spec, calibration.generate_replica(spec, index))
    bayes = gmm.fit(model, 1.0, gmm.init_state(model)).state
    k = calibration.match_components(bayes, spec.true_means)[0]
    learnt, interp = [], []
    for g in spec.gamma_grid:
        frac = gmm.fit(model, g, gmm.init_state(model)).state
        j = calibration.match_components(frac, spec.true_means)[0]
        learnt.append(1.0 / frac.variances[j])
        interp.append(1.0 / interpolate_posterior(model.prior, bayes.components[k], g).variance)
    return np.array(learnt), np.array(interp)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--replicas", type=int, default=500)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--outdir", type=pathlib.Path, default=pathlib.Path("results"))
    args = parser.parse_args()

    spec = calibration.preset("table2b", n=20, replicas=args.replicas, seed=args.seed)
    log_msd = []
    worst = (-np.inf, None)
    for i in range(spec.replicas):
        learnt, interp = precision_curves(spec, i)
        msd = float(np.mean((learnt - interp) ** 2))
        log_msd.append(np.log10(max(msd, 1e-300)))
        if msd > worst[0]:
            worst = (msd, (i, learnt, interp))

    log_msd = np.array(log_msd)
    print("log10 mean-squared precision difference")
    for q in (0.0, 0.1, 0.5, 0.9, 1.0):
        print(f"  quantile {q:.1f}: {np.quantile(log_msd, q):7.2f}")

    args.outdir.mkdir(parents=True, exist_ok=True)
    np.savetxt(args.outdir / "log_msd.txt", log_msd, fmt="%.6g")
    index, learnt, interp = worst[1]
    with open(args.outdir / "worst_precisions.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["gamma", "learnt", "interpolated"])
        for g, a, b in zip(spec.gamma_grid, learnt, interp):
            writer.writerow([f"{g:g}", f"{a:.6g}", f"{b:.6g}"])
    print(f"largest difference at replica {index}; curves written to {args.outdir / 'worst_precisions.csv'}")


if __name__ == "__main__":
    main()
