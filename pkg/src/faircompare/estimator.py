"""Influence-function based one-step estimation of the fair parameters.

Every EIF piece is evaluated for all rows at once and returned as an
``(n, d)`` array whose column ``b`` is the term for treatment ``b``.
Targets and treatments are 0-based arm codes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable

import numpy as np
from scipy.special import ndtri

from .core import Dataset, EstimationConfig, FairCompareError
from .families import ShiftFamily, SmoothingKernel, eval_f, eval_s
from .interventions import rho, smooth_trim_score
from .nuisance import NuisanceFits

PI_FLOOR = 1e-12


class BadLabel(FairCompareError):
    pass


def onehot(arms: np.ndarray, d: int) -> np.ndarray:
    out = np.zeros((len(arms), d))
    out[np.arange(len(arms)), arms] = 1.0
    return out


def _leave_one_out_products(v: np.ndarray) -> np.ndarray:
    """out[i, b] = prod_{c != b} v[i, c], without dividing (v may hold zeros)."""
    n, d = v.shape
    prefix = np.ones((n, d))
    suffix = np.ones((n, d))
    for b in range(1, d):
        prefix[:, b] = prefix[:, b - 1] * v[:, b - 1]
    for b in range(d - 2, -1, -1):
        suffix[:, b] = suffix[:, b + 1] * v[:, b + 1]
    return prefix * suffix


def eif_mu_term(arms, y, pi, mu, q=None):
    """Weighted residual 1(A=b)/pi_b (Y - mu_b), times q_a(b|X) when ``q`` is given.

    Returns ``(terms, flags)``: ``flags[i]`` marks rows where the observed arm
    has pi below 1e-12 (the 1e-12 floor is then used). With ``q``, a cell
    with q = 0 contributes exactly 0 whatever pi is.
    """
    pi = np.asarray(pi, dtype=float)
    n, d = pi.shape
    rows = np.arange(n)
    pi_obs = pi[rows, arms]
    flags = pi_obs < PI_FLOOR
    out = np.zeros((n, d))
    resid = (np.asarray(y, dtype=float) - np.asarray(mu)[rows, arms]) / np.maximum(pi_obs, PI_FLOOR)
    if q is None:
        out[rows, arms] = resid
        return out, flags
    q_obs = np.asarray(q)[rows, arms]
    out[rows, arms] = np.where(q_obs == 0.0, 0.0, resid * q_obs)
    return out, flags & (q_obs != 0.0)


def eif_rho(pi, arms, family: ShiftFamily, target: int) -> np.ndarray:
    """Influence of rho_a(b | X) for each b; the row always sums to zero."""
    pi = np.asarray(pi, dtype=float)
    g = eval_f(family, pi, 1) * (onehot(arms, pi.shape[1]) - pi)
    g[:, target] = 0.0
    g[:, target] = -g.sum(axis=1)
    return g


def eif_S(pi, arms, kernel: SmoothingKernel) -> np.ndarray:
    """Influence of the smooth trim score, length n."""
    pi = np.asarray(pi, dtype=float)
    resid = onehot(arms, pi.shape[1]) - pi
    others = _leave_one_out_products(eval_s(kernel, pi))
    return np.sum(eval_s(kernel, pi, 1) * resid * others, axis=1)


def eif_q(pi, arms, family: ShiftFamily, kernel: SmoothingKernel, target: int) -> np.ndarray:
    """Influence of q_a(b | X) for each b; rows sum to zero."""
    pi = np.asarray(pi, dtype=float)
    s = smooth_trim_score(pi, kernel)
    r = rho(pi, family, target)
    resid = onehot(arms, pi.shape[1]) - pi
    return (
        eif_S(pi, arms, kernel)[:, None] * (r - pi)
        + s[:, None] * eif_rho(pi, arms, family, target)
        + (1.0 - s)[:, None] * resid
    )


@dataclass(frozen=True, eq=False)
class EifMatrix:
    phi: np.ndarray  # (n, d); column a is the un-centred EIF for target a
    plugin_terms: np.ndarray  # (n, d); sum_b mu_b q_a(b|X) per row
    inconsistent: np.ndarray  # (n,) bool; observed arm had pi_hat < 1e-12 and q > 0
    components: dict | None = field(default=None, repr=False)


def eif_psi(arms, y, pi, mu, family: ShiftFamily, kernel: SmoothingKernel, target: int, keep_components: bool = False):
    """Un-centred EIF for one target; returns ``(phi, plugin_terms, flags[, components])``."""
    pi = np.asarray(pi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    s = smooth_trim_score(pi, kernel)
    r = rho(pi, family, target)
    q = s[:, None] * r + (1.0 - s)[:, None] * pi
    plug = np.sum(mu * q, axis=1)
    weighted, flags = eif_mu_term(arms, y, pi, mu, q)
    phi_q = eif_q(pi, arms, family, kernel, target)
    phi = plug + weighted.sum(axis=1) + np.sum(mu * phi_q, axis=1)
    if keep_components:
        comps = {"q": q, "trim_score": s, "rho": r, "weighted_residual": weighted, "phi_q": phi_q}
        return phi, plug, flags, comps
    return phi, plug, flags


def eif_matrix(data: Dataset, nuisances: NuisanceFits, family: ShiftFamily, kernel: SmoothingKernel, keep_components: bool = False) -> EifMatrix:
    cols, plugs, flags, comps = [], [], np.zeros(data.n, dtype=bool), {}
    for a in range(data.d):
        res = eif_psi(data.treatments, data.outcomes, nuisances.pi_hat, nuisances.mu_hat, family, kernel, a, keep_components)
        cols.append(res[0])
        plugs.append(res[1])
        flags |= res[2]
        if keep_components:
            comps[a] = res[3]
    return EifMatrix(np.column_stack(cols), np.column_stack(plugs), flags, comps if keep_components else None)


def column_means(x: np.ndarray) -> np.ndarray:
    # contiguous rows -> numpy's pairwise summation, fixed order
    return np.ascontiguousarray(x.T).mean(axis=1)


def empirical_covariance(phi: np.ndarray) -> np.ndarray:
    """P_n-normalised covariance of the columns; einsum avoids thread-dependent BLAS sums."""
    centred = phi - column_means(phi)[None, :]
    sigma = np.einsum("ia,ib->ab", centred, centred, optimize=False) / phi.shape[0]
    return 0.5 * (sigma + sigma.T)


def normal_quantile(level: float) -> float:
    """Two-sided critical value, e.g. 1.959964 for level 0.95."""
    return float(ndtri(0.5 + level / 2.0))


@dataclass(frozen=True, eq=False)
class EstimateSet:
    psi_hat: np.ndarray
    sigma_hat: np.ndarray
    se: np.ndarray
    ci: np.ndarray  # (d, 2)
    n: int
    labels: tuple
    family: ShiftFamily
    kernel: SmoothingKernel
    ci_level: float
    plugin: np.ndarray | None = None
    degenerate: tuple = ()  # labels whose variance estimate is exactly 0
    inconsistent_rows: int = 0
    notes: tuple = ()

    def index(self, label: Hashable) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise BadLabel(f"unknown treatment label {label!r}") from None


def _family_of(config: EstimationConfig, family: ShiftFamily | None) -> ShiftFamily:
    return family if family is not None else ShiftFamily(config.family, config.delta)


def one_step(
    data: Dataset,
    nuisances: NuisanceFits,
    config: EstimationConfig,
    family: ShiftFamily | None = None,
    eif: EifMatrix | None = None,
) -> EstimateSet:
    """Sample mean of the estimated EIF, with Wald intervals from its covariance."""
    family = _family_of(config, family)
    kernel = SmoothingKernel(config.smoothing_k)
    if eif is None:
        eif = eif_matrix(data, nuisances, family, kernel)
    psi = column_means(eif.phi)
    sigma = empirical_covariance(eif.phi)
    var = np.clip(np.diag(sigma), 0.0, None)
    se = np.sqrt(var / data.n)
    z = normal_quantile(config.ci_level)
    ci = np.column_stack([psi - z * se, psi + z * se])
    degenerate = tuple(data.labels[a] for a in np.flatnonzero(var == 0.0))
    notes = []
    if family.has_zero_curvature and family.tag != "identity":
        notes.append(f"{family.label}: f'' is identically zero; the second-order bias bound assumes non-zero curvature")
    return EstimateSet(
        psi,
        sigma,
        se,
        ci,
        data.n,
        data.labels,
        family,
        kernel,
        config.ci_level,
        plugin=column_means(eif.plugin_terms),
        degenerate=degenerate,
        inconsistent_rows=int(eif.inconsistent.sum()),
        notes=tuple(notes),
    )


def plugin(data: Dataset, nuisances: NuisanceFits, config: EstimationConfig, family: ShiftFamily | None = None) -> np.ndarray:
    """P_n of sum_b mu_hat_b q_hat_a(b|X), one value per target."""
    family = _family_of(config, family)
    kernel = SmoothingKernel(config.smoothing_k)
    out = np.empty(data.d)
    for a in range(data.d):
        s = smooth_trim_score(nuisances.pi_hat, kernel)
        q = s[:, None] * rho(nuisances.pi_hat, family, a) + (1.0 - s)[:, None] * nuisances.pi_hat
        out[a] = np.sum(nuisances.mu_hat * q, axis=1).mean()
    return out


@dataclass(frozen=True)
class Contrast:
    pair: tuple
    estimate: float
    se: float
    ci: tuple[float, float]


def contrast(est: EstimateSet, a: Hashable, b: Hashable) -> Contrast:
    """psi_a - psi_b with a delta-method standard error from the joint covariance."""
    if a == b:
        raise BadLabel("a contrast needs two different labels")
    i, j = est.index(a), est.index(b)
    w = np.zeros(len(est.labels))
    w[i], w[j] = 1.0, -1.0
    diff = float(est.psi_hat[i] - est.psi_hat[j])
    se = float(np.sqrt(max(w @ est.sigma_hat @ w, 0.0) / est.n))
    z = normal_quantile(est.ci_level)
    return Contrast((a, b), diff, se, (diff - z * se, diff + z * se))


def known_trim_one_step(arms, y, pi, mu, in_trim: np.ndarray, target: int) -> np.ndarray:
    """Per-row terms of the doubly robust estimator when the trimmed set is known.

    Inside the set: AIPW pseudo-outcome for ``target``; outside: the outcome.
    """
    pi = np.asarray(pi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    hit = np.asarray(arms) == target
    safe = np.where(in_trim, pi[:, target], 1.0)
    aipw = np.where(hit, (np.asarray(y) - mu[:, target]) / safe, 0.0) + mu[:, target]
    return np.where(in_trim, aipw, y)
