"""Write the shipped synthetic 10-provider dataset and its exact truth.

    python scripts/make_synthetic.py [--n 3000] [--seed 7] [--out data]

Produces ``synthetic_10arm.csv`` (provider, readmit, x1, x2, x3) and
``synthetic_10arm_truth.json`` with the population value of every
parameter for the five default families.
"""

import argparse
import csv
from pathlib import Path

from faircompare import oracle_sim as sim
from faircompare.cli import DEFAULT_FAMILIES
from faircompare.families import SmoothingKernel, parse_family
from faircompare.report import atomic_write, dumps


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="data")
    args = ap.parse_args()

    dgp = sim.provider_dgp()
    data, _, _ = sim.sample(dgp, args.n, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "synthetic_10arm.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["provider", "readmit", "x1", "x2", "x3"])
        for x, a, y in zip(data.covariates, data.treatments, data.outcomes):
            w.writerow([f"P{a + 1:02d}", int(y), *(f"{v:.3f}" for v in x)])

    kernel = SmoothingKernel(100.0)
    truth = {
        "n": args.n,
        "seed": args.seed,
        "labels": [f"P{b + 1:02d}" for b in range(dgp.d)],
        "observed_mean": sim.observed_mean(dgp),
        "positivity_mass": dgp.positivity_mass(),
        "families": {},
    }
    for text in DEFAULT_FAMILIES:
        fam = parse_family(text)
        truth["families"][fam.label] = [sim.true_functional(dgp, fam, kernel, a) for a in range(dgp.d)]
    atomic_write(out / "synthetic_10arm_truth.json", dumps(truth))
    print(out / "synthetic_10arm.csv")


if __name__ == "__main__":
    main()
