"""Build the synthetic experiment on the full presets and write the CSV report.

    python3 scripts/run_experiment.py --out results/ --seed 2024
"""

import argparse
import logging
import time

from cloudshield import synth
from cloudshield.evaluation import DEFAULT_WINDOWS, ExperimentConfig, build_experiment, run_evaluation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--n-samples", type=int, default=3000)
    ap.add_argument("--window", type=int, default=5)
    ap.add_argument("--no-concurrent", action="store_true", help="skip attack+benign scenarios")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig(n_samples=args.n_samples, seed=args.seed,
                           concurrent_benign=() if args.no_concurrent else synth.CONCURRENT_BENIGN)
    t0 = time.time()
    exp = build_experiment(cfg)
    t1 = time.time()
    report = run_evaluation(exp, window=args.window, windows=DEFAULT_WINDOWS)
    report.write(args.out)
    print(report.summary_text(), end="")
    print(f"scenarios: {len(exp.scenarios)}  build: {t1 - t0:.1f}s  evaluate: {time.time() - t1:.1f}s")
    for row in report.sweep:
        if row["workload"] == "ALL":
            print(f"w={row['window']:>3}  FPR={row['fpr']:.5f}  FNR={row['fnr']:.5f}")
    for row in report.zero_day:
        print(row)


if __name__ == "__main__":
    main()
