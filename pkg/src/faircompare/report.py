"""Report assembly and serialisation (JSON, aligned text table, plot-ready CSV)."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np

from .core import PRNG_ALGORITHM, Dataset, EstimationConfig
from .estimator import EstimateSet, contrast

SCHEMA_VERSION = "1.0"


def load_schema(name: str) -> dict:
    """``name`` is ``"analysis"`` or ``"experiment"``."""
    text = resources.files("faircompare").joinpath("schemas", f"{name}_report.schema.json").read_text()
    return json.loads(text)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, allow_nan=True) + "\n"


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def family_section(est: EstimateSet, diagnostics: dict, benchmark=None) -> dict:
    estimates = [
        {
            "label": lab,
            "psi": float(est.psi_hat[j]),
            "se": float(est.se[j]),
            "ci_lo": float(est.ci[j, 0]),
            "ci_hi": float(est.ci[j, 1]),
            "plugin": float(est.plugin[j]),
        }
        for j, lab in enumerate(est.labels)
    ]
    contrasts = []
    if benchmark is not None:
        for lab in est.labels:
            if lab == benchmark:
                continue
            c = contrast(est, benchmark, lab)
            contrasts.append({"label": lab, "benchmark": benchmark, "estimate": c.estimate, "se": c.se, "ci_lo": c.ci[0], "ci_hi": c.ci[1]})
    return {
        "tag": est.family.tag,
        "delta": est.family.delta,
        "name": est.family.label,
        "estimates": estimates,
        "contrasts": contrasts,
        "diagnostics": {
            "zero_propensity_cells": diagnostics["zero_propensity_cells"],
            "sub_floor_cells": diagnostics["sub_floor_cells"],
            "min_pi_hat": diagnostics["min_pi_hat"],
            "inconsistent_rows": est.inconsistent_rows,
            "degenerate_variance_labels": list(est.degenerate),
            "notes": list(est.notes),
        },
    }


def analysis_report(
    data: Dataset,
    config: EstimationConfig,
    sections: list[dict],
    nuisance_diagnostics: dict,
    benchmark=None,
    input_columns: dict | None = None,
    runtime_ms: float | None = None,
) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": {**config.as_dict(), "families": [s["name"] for s in sections], "benchmark": benchmark},
        "prng": PRNG_ALGORITHM,
        "input": input_columns or {},
        "n": data.n,
        "d": data.d,
        "label_map": [{"label": lab, "arm": j + 1} for j, lab in enumerate(data.labels)],
        "observed_mean": float(np.mean(data.outcomes)),
        "nuisance_diagnostics": nuisance_diagnostics,
        "families": sections,
        "runtime_ms": runtime_ms,
    }


def _g(x) -> str:
    return f"{x:.6g}" if isinstance(x, float) else str(x)


def _table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[_g(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def text_report(report: dict) -> str:
    out = [f"n = {report['n']}, d = {report['d']}, observed mean (no intervention) = {report['observed_mean']:.6g}"]
    diag = report["nuisance_diagnostics"]
    out.append(
        f"positivity: {diag['zero_propensity_cells']} zero and {diag['sub_floor_cells']} sub-floor estimated propensities; "
        f"min pi_hat = {diag['min_pi_hat']:.6g}; rows with every arm positive: {diag['all_arms_positive_fraction']:.6g}"
    )
    for sec in report["families"]:
        out.append("")
        out.append(f"== {sec['name']}")
        out.append(_table(["label", "psi", "se", "ci_lo", "ci_hi"], [[e["label"], e["psi"], e["se"], e["ci_lo"], e["ci_hi"]] for e in sec["estimates"]]))
        if sec["contrasts"]:
            bench = sec["contrasts"][0]["benchmark"]
            out.append("")
            out.append(f"difference psi[{bench}] - psi[label]")
            out.append(_table(["label", "difference", "ci_lo", "ci_hi"], [[c["label"], c["estimate"], c["ci_lo"], c["ci_hi"]] for c in sec["contrasts"]]))
        for note in sec["diagnostics"]["notes"]:
            out.append(f"note: {note}")
    return "\n".join(out) + "\n"


def figure_csv(section: dict, observed_mean: float) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "psi", "ci_lo", "ci_hi", "observed_mean"])
    for e in section["estimates"]:
        w.writerow([e["label"], repr(e["psi"]), repr(e["ci_lo"]), repr(e["ci_hi"]), repr(observed_mean)])
    return buf.getvalue()


def write_analysis(report: dict, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    written = [out_dir / "report.json", out_dir / "report.txt"]
    atomic_write(written[0], dumps(report))
    atomic_write(written[1], text_report(report))
    for sec in report["families"]:
        path = out_dir / f"figure_{sec['name'].replace(':', '_')}.csv"
        atomic_write(path, figure_csv(sec, report["observed_mean"]))
        written.append(path)
    return written
