"""Run every ground-truth experiment at full size and write the JSON reports.

    python scripts/run_experiments.py [--out results] [--seed 0] [--skip-slow]

Writes ``experiment_<name>.json`` for the five CLI experiments plus a
descriptive ``experiment_d-sweep.json``, and prints one status line per
part. The dr-rate gate (one-step slope <= -0.85) is expected to fail; see
the README.
"""

import argparse
from pathlib import Path

from faircompare import oracle_sim as sim
from faircompare.cli import main as cli_main
from faircompare.report import atomic_write, dumps


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip-slow", action="store_true", help="skip dr-rate and coverage")
    args = ap.parse_args()

    names = ["identity-suite", "fairness", "pathwise"]
    if not args.skip_slow:
        names += ["coverage", "dr-rate"]
    codes = {}
    for name in names:
        print(f"== {name}")
        codes[name] = cli_main(["experiment", "--name", name, "--seed", str(args.seed), "--out", args.out])

    sweep = sim.dimension_sweep(seed=args.seed)
    atomic_write(Path(args.out) / "experiment_d-sweep.json", dumps(sweep.to_dict()))
    print("== d-sweep (descriptive)")
    for d, row in sweep.summary.items():
        print(f"d={d:>2}  median |one-step bias| {row['median_abs_one_step_bias'][0]:.3g} -> {row['median_abs_one_step_bias'][-1]:.3g}, slope {row['slope']:.3f}")

    print()
    for name, code in codes.items():
        print(f"{name:15s} exit {code}")
    return max(codes.values())


if __name__ == "__main__":
    raise SystemExit(main())
