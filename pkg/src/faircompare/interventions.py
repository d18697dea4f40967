"""Interventional propensity scores with V = X, and the fairness property checks.

All functions work row-wise on an (n, d) propensity matrix; ``target`` is
a 0-based arm code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FairCompareError
from .families import ShiftFamily, SmoothingKernel, eval_f, eval_s

EQ_TOL = 1e-12
INEQ_TOL = 1e-10


class NegativeTargetMass(FairCompareError):
    pass


@dataclass(frozen=True, eq=False)
class PropensityMatrix:
    values: np.ndarray
    source: str = "estimated"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("propensity matrix must be 2-d")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValueError("propensity entries must lie in [0, 1]")
        err = np.max(np.abs(v.sum(axis=1) - 1.0)) if v.size else 0.0
        if err > INEQ_TOL:
            raise ValueError(f"propensity rows must sum to 1 (max error {err:.3g})")
        object.__setattr__(self, "values", v)


def _values(pi) -> np.ndarray:
    return pi.values if isinstance(pi, PropensityMatrix) else np.asarray(pi, dtype=float)


@dataclass(frozen=True, eq=False)
class InterventionalPropensities:
    q: np.ndarray  # (n, d)
    target: int
    trim_score: np.ndarray  # (n,)
    rho: np.ndarray  # (n, d)


def rho(pi, family: ShiftFamily, target: int) -> np.ndarray:
    """Shift non-target scores to f(pi_b) and give the freed mass to ``target``."""
    p = _values(pi)
    out = eval_f(family, p)
    rest = np.delete(out, target, axis=1).sum(axis=1)
    out[:, target] = 1.0 - rest
    if np.any(out[:, target] < -INEQ_TOL):
        i = int(np.argmin(out[:, target]))
        raise NegativeTargetMass(f"target mass {out[i, target]:.3g} < 0 at row {i}; shift function is not admissible")
    return out


def smooth_trim_score(pi, kernel: SmoothingKernel) -> np.ndarray:
    """S_i = prod_b s(pi_b(X_i)); exactly 0 on any row holding a zero score."""
    return np.prod(eval_s(kernel, _values(pi)), axis=1)


def interventional_propensity(pi, family: ShiftFamily, kernel: SmoothingKernel, target: int) -> InterventionalPropensities:
    p = _values(pi)
    r = rho(p, family, target)
    s = smooth_trim_score(p, kernel)
    q = s[:, None] * r + (1.0 - s)[:, None] * p
    return InterventionalPropensities(q, target, s, r)


def all_targets(pi, family: ShiftFamily, kernel: SmoothingKernel) -> list[InterventionalPropensities]:
    p = _values(pi)
    return [interventional_propensity(p, family, kernel, a) for a in range(p.shape[1])]


@dataclass
class PropertyReport:
    name: str
    passed: bool
    failures: list[str] = field(default_factory=list)
    worst: float = 0.0

    def __bool__(self):
        return self.passed


def check_property_1(qs: list[InterventionalPropensities], pi, tol: float = INEQ_TOL) -> PropertyReport:
    """Each intervention raises its target's score (strictly somewhere) and lowers the rest."""
    p = _values(pi)
    failures = []
    worst = 0.0
    for ip in qs:
        a = ip.target
        gain = ip.q[:, a] - p[:, a]
        if np.any(gain < -tol):
            worst = max(worst, float(-gain.min()))
            failures.append(f"target {a}: q_a(a) below pi_a by {-gain.min():.3g} at row {int(np.argmin(gain))}")
        if not np.any(gain > tol):
            failures.append(f"target {a}: no row with a strict increase")
        others = np.delete(ip.q - p, a, axis=1)
        if others.size and np.any(others > tol):
            worst = max(worst, float(others.max()))
            failures.append(f"target {a}: non-target score raised by {others.max():.3g}")
    return PropertyReport("property_1", not failures, failures, worst)


def check_property_2(q_a: InterventionalPropensities, q_b: InterventionalPropensities, tol: float = EQ_TOL) -> PropertyReport:
    """Two interventions agree on every treatment other than their two targets."""
    if q_a.target == q_b.target:
        raise ValueError("property 2 compares two different targets")
    keep = [c for c in range(q_a.q.shape[1]) if c not in (q_a.target, q_b.target)]
    if not keep:
        return PropertyReport("property_2", True)
    diff = float(np.max(np.abs(q_a.q[:, keep] - q_b.q[:, keep])))
    if diff > tol:
        return PropertyReport("property_2", False, [f"targets ({q_a.target}, {q_b.target}): max abs diff {diff:.3g}"], diff)
    return PropertyReport("property_2", True, worst=diff)


def check_q_weak_positivity(q, pi) -> PropertyReport:
    """pi_b(X_i) = 0 must imply q(b | X_i) = 0."""
    qv = q.q if isinstance(q, InterventionalPropensities) else np.asarray(q, dtype=float)
    p = _values(pi)
    bad = (p == 0) & (qv != 0)
    if np.any(bad):
        i, b = map(int, np.argwhere(bad)[0])
        worst = float(np.max(np.abs(qv[bad])))
        return PropertyReport("q_weak_positivity", False, [f"{int(bad.sum())} cells with pi = 0 but q > 0, first at row {i}, arm {b}"], worst)
    return PropertyReport("q_weak_positivity", True)
