"""Run the coverage studies for the preset specs and print their tables.

    python scripts/reproduce_tables.py --replicas 500 --outdir results
"""

import argparse
import pathlib
import time

from fracvi import calibration


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--presets", default="table1,table2a,table2b,table3")
    parser.add_argument("--replicas", type=int, default=500)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--outdir", type=pathlib.Path, default=pathlib.Path("results"))
    args = parser.parse_args()

    args.outdir.mkdir(parents=True, exist_ok=True)
    for name in args.presets.split(","):
        spec = calibration.preset(name, replicas=args.replicas, seed=args.seed)
        start = time.perf_counter()
        result = calibration.run_study(spec, workers=args.workers)
        (args.outdir / f"{name}.csv").write_text(calibration.rows_to_csv(result.rows))
        print(f"== {name} ({args.replicas} replicas, {time.perf_counter() - start:.0f}s)")
        print(calibration.format_table(result))
        print()


if __name__ == "__main__":
    main()
