"""The eight acceptance criteria, each at its stated tolerance and runtime bound.

Every test prints one ``ACCEPTANCE <n> PASS|FAIL`` line; the lines are
repeated in the pytest terminal summary.
"""

import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from faircompare import oracle_sim as sim
from faircompare.families import ShiftFamily, SmoothingKernel

ROOT = Path(__file__).resolve().parents[1]
K100 = SmoothingKernel(100.0)
RESULTS: list[str] = []


def _report(number: int, title: str, ok: bool, elapsed: float, bound: float, detail: str) -> None:
    status = "PASS" if ok and elapsed < bound else "FAIL"
    line = f"ACCEPTANCE {number} {status}  {title}: {detail}; {elapsed:.2f}s (limit {bound:g}s)"
    RESULTS.append(line)
    print(line)
    assert ok, line
    assert elapsed < bound, line


def test_criterion_1_construction_invariants():
    t0 = time.perf_counter()
    rep = sim.construction_sweep(n_matrices=100, deltas=(0.0, 0.25, 0.5, 0.9), ks=(10.0, 100.0, 1000.0))
    elapsed = time.perf_counter() - t0
    s = rep.summary
    _report(1, "construction invariants", rep.passed, elapsed, 5, f"{s['combinations']} combinations, worst row-sum error {s['worst_row_sum_error']:.2e}")


def test_criterion_2_telescoping_identity():
    t0 = time.perf_counter()
    rep = sim.telescoping_sweep(count=1000, d_range=(2, 8), tol=1e-10)
    elapsed = time.perf_counter() - t0
    _report(2, "telescoping identity", rep.passed, elapsed, 1, f"worst scaled error {rep.summary['worst_scaled_error']:.2e}")


def test_criterion_3_eif_correctness():
    t0 = time.perf_counter()
    dgps = sim.example_dgps()
    assert len(dgps) >= 5
    assert any(np.any(d.pi == 0) for d in dgps)
    assert any(d.name == "intermediate_positivity" for d in dgps)
    mean_rep = sim.eif_mean_suite(dgps, K100, tol=1e-10)
    families = sim.builtin_families() + [ShiftFamily("identity")]
    path_reps = [sim.pathwise_suite(d, f, K100, rel_tol=1e-3) for d in dgps for f in families]
    elapsed = time.perf_counter() - t0
    ok = mean_rep.passed and all(r.passed for r in path_reps)
    worst = max(r.summary["worst_rel_error"] for r in path_reps)
    checks = sum(r.summary["checks"] for r in path_reps)
    _report(
        3,
        "EIF correctness",
        ok,
        elapsed,
        30,
        f"{len(dgps)} DGPs, EIF-mean worst {mean_rep.summary['worst_abs_error']:.1e}, {checks} pathwise checks worst rel error {worst:.1e}",
    )


@pytest.mark.slow
def test_criterion_4_double_robustness():
    t0 = time.perf_counter()
    fams = [ShiftFamily("tsm"), ShiftFamily("multiplicative", 0.5), ShiftFamily("exp_tilt", 0.5)]
    reps = [sim.dr_rate_experiment(sim.intermediate_dgp(), f, K100, (500, 1000, 2000, 4000, 8000), 500, alpha=0.25) for f in fams]
    elapsed = time.perf_counter() - t0
    one = {r.config["family"]: round(r.summary["one_step_slope"], 3) for r in reps}
    plug = {r.config["family"]: round(r.summary["plugin_slope"], 3) for r in reps}
    oracle = all(r.gates["oracle_bias_within_3se"] for r in reps)
    ok = all(r.passed for r in reps)
    _report(4, "double robustness", ok, elapsed, 600, f"one-step slopes {one} (gate <= -0.85), plug-in slopes {plug} (band [-0.55, -0.15]), oracle band {oracle}")


@pytest.mark.slow
def test_criterion_5_coverage():
    t0 = time.perf_counter()
    fams = [ShiftFamily("tsm"), ShiftFamily("multiplicative", 0.5), ShiftFamily("exp_tilt", 0.5)]
    mains = [sim.coverage_experiment(sim.intermediate_dgp(), f, K100, n=2000, reps=1000) for f in fams]
    pair = sim.coverage_experiment(sim.exchangeable_dgp(), ShiftFamily("tsm"), K100, n=2000, reps=1000, contrast_pair=(0, 1))
    elapsed = time.perf_counter() - t0
    cov = {r.config["family"]: [round(c, 3) for c in r.summary["coverage"]] for r in mains}
    ok = all(r.gates["coverage_in_band"] for r in mains) and pair.gates["contrast_coverage_in_band"]
    _report(5, "inference", ok, elapsed, 300, f"psi coverage {cov}, exchangeable contrast coverage {pair.summary['contrast_coverage']:.3f}, band [0.93, 0.97]")


def test_criterion_6_fairness():
    t0 = time.perf_counter()
    rep = sim.fairness_criterion_check(sweep=(-10.0, 0.0, 10.0))
    elapsed = time.perf_counter() - t0
    gates = ", ".join(f"{k}={v}" for k, v in rep.gates.items())
    _report(6, "fairness criterion", rep.passed, elapsed, 10, gates)


def test_criterion_7_necessity():
    t0 = time.perf_counter()
    rep = sim.necessity_check()
    elapsed = time.perf_counter() - t0
    _report(7, "necessity signature", rep.passed, elapsed, 1, f"{len(rep.records)} (family, target) values all equal E(Y) = {rep.summary['observed_mean']:.6g}")


def _analyze(out: Path, threads: str) -> bytes:
    env = {**os.environ, "OMP_NUM_THREADS": threads, "OPENBLAS_NUM_THREADS": threads, "MKL_NUM_THREADS": threads}
    cmd = [
        sys.executable, "-m", "faircompare", "analyze",
        "--input", str(ROOT / "data" / "synthetic_10arm.csv"),
        "--treatment", "provider", "--outcome", "readmit", "--covariates", "x1,x2,x3",
        "--benchmark", "P05", "--seed", "1", "--omit-timing", "--out", str(out),
    ]  # fmt: skip
    subprocess.run(cmd, check=True, env=env, capture_output=True)
    return (out / "report.json").read_bytes()


def test_criterion_8_determinism(tmp_path):
    t0 = time.perf_counter()
    runs = [_analyze(tmp_path / f"run{i}", threads) for i, threads in enumerate(("1", "1", "4", "16"))]
    elapsed = time.perf_counter() - t0
    report = json.loads(runs[0])
    sections = report["families"]
    shape_ok = len(sections) == 5 and all(len(s["estimates"]) == 10 and len(s["contrasts"]) == 9 for s in sections)
    identical = all(r == runs[0] for r in runs)
    _report(8, "end-to-end determinism", identical and shape_ok, elapsed / len(runs), 60, f"{len(runs)} runs (threads 1,1,4,16) byte-identical={identical}, 5 sections x 10 estimates x 9 contrasts={shape_ok}")
