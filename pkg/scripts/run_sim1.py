"""First simulation study: hormetic malformation curve, four nonparametric models."""

import argparse
import csv
from pathlib import Path

from devtox.experiments import coverage, has_interior_minimum, is_monotone, run_sim1
from devtox.mcmc import McmcConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--data-seed", type=int, default=2024)
    p.add_argument("--mcmc-seed", type=int, default=1)
    p.add_argument("--n-iter", type=int, default=10000)
    p.add_argument("--burn-in", type=int, default=5000)
    p.add_argument("--out", type=Path, default=Path("sim1_out"))
    args = p.parse_args()
    mcmc = McmcConfig(n_iter=args.n_iter, burn_in=args.burn_in, thin=1, truncation=50, seed=args.mcmc_seed)
    sim, runs = run_sim1(mcmc=mcmc, data_seed=args.data_seed, log=print)
    t = sim.truth
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "bands.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "endpoint", "dose", "truth", "mean", "lower", "upper"])
        for name, run in runs.items():
            for e in "DMr":
                for g, x in enumerate(t.grid):
                    w.writerow([name, e, x, getattr(t, e)[g], run.mean[e][g], run.lower[e][g], run.upper[e][g]])
    print(f"{'model':<9}{'cov D':>7}{'cov M':>7}{'cov r':>7}{'M dip':>7}{'M mono':>8}{'active':>8}")
    for name, run in runs.items():
        cov = [coverage(run.lower[e], run.upper[e], getattr(t, e)) for e in "DMr"]
        print(f"{name:<9}" + "".join(f"{c:>7.2f}" for c in cov)
              + f"{str(has_interior_minimum(run.mean['M'])):>7}{str(is_monotone(run.mean['M'])):>8}"
              + f"{run.active:>8.2f}")


if __name__ == "__main__":
    main()
