"""Command line front door: ``faircompare analyze`` and ``faircompare experiment``.

Exit codes: 0 success, 1 a gate failed, 2 usage / input / schema error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import oracle_sim as sim
from .core import PRNG_ALGORITHM, EstimationConfig, FairCompareError, validate_dataset
from .estimator import eif_matrix, one_step
from .families import ShiftFamily, SmoothingKernel, parse_family
from .nuisance import crossfit_nuisances
from .report import SCHEMA_VERSION, analysis_report, atomic_write, dumps, family_section, write_analysis

# the five parameter sets of the dialysis-provider analysis
DEFAULT_FAMILIES = ("tsm", "multiplicative:0.9", "multiplicative:0.5", "exp_tilt:0.9", "exp_tilt:0.5")
EXPERIMENTS = ("fairness", "pathwise", "dr-rate", "coverage", "identity-suite")


class ParseError(FairCompareError):
    pass


class SchemaError(FairCompareError):
    pass


class UsageError(FairCompareError):
    pass


def read_csv(path: Path, treatment: str, outcome: str, covariates: list[str]):
    cols = [treatment, outcome, *covariates]
    if len(set(cols)) != len(cols):
        raise SchemaError("treatment, outcome and covariate columns must be distinct")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in cols if c not in header]
            if missing:
                raise SchemaError(f"columns not in {path}: {missing}")
            rows = list(reader)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except (UnicodeDecodeError, csv.Error) as exc:
        raise ParseError(f"{path} is not a UTF-8 CSV file: {exc}") from exc
    if not rows:
        raise ParseError(f"{path} has no data rows")
    raw_a = [r[treatment].strip() for r in rows]
    try:
        labels = [int(v) for v in raw_a]
    except ValueError:
        labels = raw_a
    try:
        x = np.array([[float(r[c]) for c in covariates] for r in rows], dtype=float)
        y = np.array([float(r[outcome]) for r in rows], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"non-numeric covariate or outcome value in {path}: {exc}") from exc
    return x, labels, y


def _match_label(labels: tuple, text):
    if text is None:
        return None
    for lab in labels:
        if str(lab) == str(text):
            return lab
    raise UsageError(f"benchmark label {text!r} is not a treatment label; labels are {list(labels)}")


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            values = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(values, dict):
        raise ParseError("config file must hold a JSON object")
    return values


def run_analysis(args) -> int:
    t0 = time.perf_counter()
    file_cfg = load_config_file(args.config)
    families_text = args.family or file_cfg.pop("families", None) or list(DEFAULT_FAMILIES)
    file_benchmark = file_cfg.pop("benchmark", None)
    benchmark_text = args.benchmark if args.benchmark is not None else file_benchmark
    config = EstimationConfig.from_mapping(file_cfg).updated(
        delta=args.delta, smoothing_k=args.k, folds=args.folds, seed=args.seed, ci_level=args.ci_level, outcome_method=args.outcome_method
    )
    default_delta = args.delta if args.delta is not None else file_cfg.get("delta")
    families = [parse_family(f, default_delta) for f in families_text]
    config = config.updated(family=families[0].tag, delta=families[0].delta)

    covariates = [c.strip() for c in args.covariates.split(",") if c.strip()]
    if not covariates:
        raise UsageError("--covariates needs at least one column")
    x, labels, y = read_csv(Path(args.input), args.treatment, args.outcome, covariates)
    data = validate_dataset(x, labels, y)
    benchmark = _match_label(data.labels, benchmark_text)

    fits = crossfit_nuisances(data, config)
    kernel = SmoothingKernel(config.smoothing_k)
    sections = []
    for fam in families:
        est = one_step(data, fits, config, fam, eif=eif_matrix(data, fits, fam, kernel))
        sections.append(family_section(est, fits.diagnostics, benchmark))
    runtime = None if args.omit_timing else round((time.perf_counter() - t0) * 1000.0, 3)
    report = analysis_report(
        data,
        config,
        sections,
        fits.diagnostics,
        benchmark,
        {"path": Path(args.input).name, "treatment": args.treatment, "outcome": args.outcome, "covariates": covariates},
        runtime,
    )
    for path in write_analysis(report, Path(args.out)):
        print(path)
    return 0


def _grid(text: str | None, default):
    if text is None:
        return tuple(default)
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"--n expects comma-separated integers, got {text!r}") from exc


def experiment_parts(name: str, n_text: str | None, reps: int | None, seed: int) -> list[sim.SimulationReport]:
    kernel = SmoothingKernel(100.0)
    if name == "fairness":
        return [sim.fairness_criterion_check(seed=seed), sim.necessity_check()]
    if name == "pathwise":
        parts = []
        for dgp in sim.example_dgps():
            for fam in sim.builtin_families() + [ShiftFamily("identity")]:
                parts.append(sim.pathwise_suite(dgp, fam, kernel))
        return parts
    if name == "dr-rate":
        grid = _grid(n_text, (500, 1000, 2000, 4000, 8000))
        fams = [ShiftFamily("tsm"), ShiftFamily("multiplicative", 0.5), ShiftFamily("exp_tilt", 0.5)]
        return [sim.dr_rate_experiment(sim.intermediate_dgp(), f, kernel, grid, reps or 500, seed=seed) for f in fams]
    if name == "coverage":
        n = _grid(n_text, (2000,))[0]
        r = reps or 1000
        return [
            sim.coverage_experiment(sim.intermediate_dgp(), ShiftFamily("multiplicative", 0.5), kernel, n, r, seed=seed),
            sim.coverage_experiment(sim.exchangeable_dgp(), ShiftFamily("tsm"), kernel, n, r, contrast_pair=(0, 1), seed=seed),
        ]
    if name == "identity-suite":
        return [sim.telescoping_sweep(seed=seed), sim.construction_sweep(seed=seed), sim.eif_mean_suite(), sim.necessity_check()]
    raise UsageError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")


def run_experiment(args) -> int:
    if args.name not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.name!r}; choose from {', '.join(EXPERIMENTS)}")
    t0 = time.perf_counter()
    parts = experiment_parts(args.name, args.n, args.reps, args.seed)
    descriptive = all(p.descriptive for p in parts)
    passed = all(p.passed or p.descriptive for p in parts)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": args.name,
        "prng": PRNG_ALGORITHM,
        "seed": args.seed,
        "passed": passed,
        "descriptive": descriptive,
        "parts": [p.to_dict() for p in parts],
        "runtime_ms": None if args.omit_timing else round((time.perf_counter() - t0) * 1000.0, 3),
    }
    out = Path(args.out) / f"experiment_{args.name}.json"
    atomic_write(out, dumps(doc))
    for p in parts:
        status = "descriptive (grid too small for gate)" if p.descriptive else ("PASS" if p.passed else "FAIL")
        failed = [g for g, ok in p.gates.items() if not ok]
        print(f"{p.experiment:12s} {status}" + (f"  failed gates: {failed}" if failed and not p.descriptive else ""))
    print(out)
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faircompare", description="Fair comparisons of many treatments under positivity violations.")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="estimate fair parameters from a CSV file")
    a.add_argument("--input", required=True)
    a.add_argument("--treatment", required=True)
    a.add_argument("--outcome", required=True)
    a.add_argument("--covariates", required=True, help="comma-separated column names")
    a.add_argument("--family", action="append", help="tsm, multiplicative:0.9, exp_tilt:0.5, ... (repeatable)")
    a.add_argument("--delta", type=float, help="delta for families given without one")
    a.add_argument("--k", type=float, help="smoothing kernel steepness (default 100)")
    a.add_argument("--folds", type=int)
    a.add_argument("--seed", type=int)
    a.add_argument("--ci-level", type=float)
    a.add_argument("--outcome-method", choices=("linear", "knn"))
    a.add_argument("--benchmark", help="label to contrast every other label against")
    a.add_argument("--config", help="JSON file of defaults; flags take precedence")
    a.add_argument("--omit-timing", action="store_true", help="write runtime_ms as null (byte-stable reports)")
    a.add_argument("--out", required=True)
    a.set_defaults(func=run_analysis)

    e = sub.add_parser("experiment", help="run a named ground-truth experiment")
    e.add_argument("--name", required=True)
    e.add_argument("--n", help="sample size grid, comma separated")
    e.add_argument("--reps", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--omit-timing", action="store_true")
    e.add_argument("--out", required=True)
    e.set_defaults(func=run_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        return args.func(args)
    except (FairCompareError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
