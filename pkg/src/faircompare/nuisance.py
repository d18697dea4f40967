"""Cross-fitted propensity scores and outcome regressions.

The propensity model is a ridge-penalised multinomial logit fitted by
damped Newton ascent; the outcome model is per-arm least squares or
k-nearest neighbours. Fitted propensities are never clipped: exact zeros
must survive because the trimming kernel relies on ``s(0) = 0``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import Dataset, EmptyArm, EstimationConfig, FairCompareError, FoldAssignment, make_rng, split_folds


class FoldArmEmpty(FairCompareError):
    pass


class SeparationWarning(UserWarning):
    pass


def _standardizer(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    return center, scale


def softmax_rows(eta: np.ndarray) -> np.ndarray:
    z = eta - eta.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class PropensityModel:
    # row j: (intercept, slopes...) for arm j on the original covariate scale; row 0 is the reference
    coefficients: np.ndarray
    converged: bool
    iterations: int
    final_gradient_norm: float
    objective_trace: np.ndarray = field(repr=False)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        eta = self.coefficients[:, 0][None, :] + np.einsum("ip,jp->ij", x, self.coefficients[:, 1:])
        return softmax_rows(eta)


def _penalized_loglik(theta, z, onehot, lam):
    # theta: (d-1, q) free rows, z: (n, q) design with intercept first
    eta = np.zeros(onehot.shape)
    eta[:, 1:] = np.einsum("iq,jq->ij", z, theta)
    m = eta.max(axis=1, keepdims=True)
    logp = eta - m - np.log(np.exp(eta - m).sum(axis=1, keepdims=True))
    ll = np.einsum("ij,ij->", onehot, logp) / z.shape[0]
    return ll - 0.5 * lam * np.sum(theta[:, 1:] ** 2), np.exp(logp)


def fit_propensity(
    x: np.ndarray,
    arms: np.ndarray,
    d: int,
    penalty: float = 1e-4,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> PropensityModel:
    """Maximise the ridge-penalised multinomial log-likelihood.

    Newton directions with backtracking keep the objective monotone; the
    fit stops once the gradient norm drops below ``tol``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    arms = np.asarray(arms)
    n, p = x.shape
    counts = np.bincount(arms, minlength=d)
    if np.any(counts == 0):
        raise EmptyArm(f"arms absent from training data: {np.flatnonzero(counts == 0).tolist()}")

    center, scale = _standardizer(x)
    z = np.hstack([np.ones((n, 1)), (x - center) / scale])
    q = p + 1
    onehot = np.zeros((n, d))
    onehot[np.arange(n), arms] = 1.0
    pen = np.full(q, penalty)
    pen[0] = 0.0

    theta = np.zeros((d - 1, q))
    # intercept-only MLE is the natural start
    theta[:, 0] = np.log(counts[1:] / counts[0])
    obj, prob = _penalized_loglik(theta, z, onehot, penalty)
    trace = [obj]
    converged = False
    it = 0
    gnorm = np.inf
    eye_k = np.eye(d - 1)
    while it < max_iter:
        resid = onehot[:, 1:] - prob[:, 1:]
        grad = np.einsum("ij,iq->jq", resid, z) / n - pen * theta
        gnorm = float(np.sqrt(np.sum(grad**2)))
        if gnorm < tol:
            converged = True
            break
        pk = prob[:, 1:]
        w = pk[:, :, None] * (eye_k[None] - pk[:, None, :])  # (n, K, K)
        hess = np.einsum("ijk,il,im->jlkm", w, z, z).reshape((d - 1) * q, (d - 1) * q) / n
        hess += np.diag(np.tile(pen, d - 1))
        try:
            step = np.linalg.solve(hess, grad.reshape(-1)).reshape(d - 1, q)
        except np.linalg.LinAlgError:
            step = grad
        t = 1.0
        while True:
            cand = theta + t * step
            cand_obj, cand_prob = _penalized_loglik(cand, z, onehot, penalty)
            if cand_obj >= obj or t < 1e-12:
                break
            t *= 0.5
        it += 1
        if cand_obj < obj:
            # no ascent possible along the Newton direction; numerically at the optimum
            break
        stalled = cand_obj == obj
        theta, obj, prob = cand, cand_obj, cand_prob
        trace.append(obj)
        if stalled:
            break

    if prob.min() < 1e-12:
        warnings.warn(f"fitted propensity {prob.min():.3g} < 1e-12 on training data (quasi-separation)", SeparationWarning, stacklevel=2)

    # back to the original covariate scale
    coef = np.zeros((d, q))
    slopes = theta[:, 1:] / scale
    coef[1:, 1:] = slopes
    coef[1:, 0] = theta[:, 0] - slopes @ center
    return PropensityModel(coef, converged, it, gnorm, np.asarray(trace))


@dataclass(frozen=True, eq=False)
class ArmModel:
    method: str
    coefficients: np.ndarray | None = None  # (intercept, slopes...) when linear
    tree: cKDTree | None = field(default=None, repr=False)
    train_y: np.ndarray | None = field(default=None, repr=False)
    neighbors: int = 0
    center: np.ndarray | None = field(default=None, repr=False)
    scale: np.ndarray | None = field(default=None, repr=False)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.method == "linear":
            return self.coefficients[0] + np.einsum("ip,p->i", x, self.coefficients[1:])
        _, idx = self.tree.query((x - self.center) / self.scale, k=self.neighbors)
        idx = np.asarray(idx).reshape(x.shape[0], self.neighbors)
        return self.train_y[idx].mean(axis=1)


def fit_outcome(x: np.ndarray, y: np.ndarray, method: str = "linear", ridge: float = 1e-8) -> ArmModel:
    """Regress ``y`` on ``x`` within one treatment arm."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    n_b, p = x.shape
    if n_b == 0:
        raise EmptyArm("no training rows in this arm")
    center, scale = _standardizer(x)
    xs = (x - center) / scale
    if method == "linear":
        z = np.hstack([np.ones((n_b, 1)), xs])
        gram = np.einsum("iq,ir->qr", z, z) + ridge * np.eye(p + 1)
        beta = np.linalg.solve(gram, np.einsum("iq,i->q", z, y))
        slopes = beta[1:] / scale
        coef = np.concatenate([[beta[0] - slopes @ center], slopes])
        return ArmModel("linear", coefficients=coef)
    if method == "knn":
        k = min(n_b, math.ceil(n_b**0.8))
        return ArmModel("knn", tree=cKDTree(xs), train_y=y.copy(), neighbors=k, center=center, scale=scale)
    raise ValueError(f"unknown outcome method {method!r}")


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    arms: tuple[ArmModel, ...]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.column_stack([m.predict(x) for m in self.arms])


def fit_outcome_model(x, arms, y, d: int, method: str = "linear") -> OutcomeModel:
    arms = np.asarray(arms)
    models = []
    for b in range(d):
        rows = arms == b
        if not rows.any():
            raise EmptyArm(f"arm {b} has no training rows")
        models.append(fit_outcome(np.atleast_2d(x)[rows], np.asarray(y)[rows], method))
    return OutcomeModel(tuple(models))


@dataclass(frozen=True, eq=False)
class NuisanceFits:
    pi_hat: np.ndarray  # (n, d), out of fold
    mu_hat: np.ndarray  # (n, d), out of fold
    folds: FoldAssignment | None
    diagnostics: dict = field(default_factory=dict)
    source: str = "estimated"


def positivity_summary(pi_hat: np.ndarray, floor: float) -> dict:
    return {
        "zero_propensity_cells": int(np.sum(pi_hat == 0.0)),
        "sub_floor_cells": int(np.sum(pi_hat < floor)),
        "min_pi_hat": float(pi_hat.min()),
        # sample analogue of E[prod_b 1(pi_b(X) > 0)]
        "all_arms_positive_fraction": float(np.mean(np.all(pi_hat > 0, axis=1))),
        "all_arms_above_floor_fraction": float(np.mean(np.all(pi_hat >= floor, axis=1))),
    }


def crossfit_nuisances(data: Dataset, config: EstimationConfig, folds: FoldAssignment | None = None) -> NuisanceFits:
    """Out-of-fold predictions: each fold is predicted by models fitted on the others."""
    if folds is None:
        folds = split_folds(data.n, config.folds, config.seed)
    d = data.d
    pi_hat = np.empty((data.n, d))
    mu_hat = np.empty((data.n, d))
    per_fold = []
    for j in range(folds.folds):
        test = folds.fold_of == j
        train = ~test
        counts = np.bincount(data.treatments[train], minlength=d)
        if np.any(counts == 0):
            missing = [data.labels[b] for b in np.flatnonzero(counts == 0)]
            raise FoldArmEmpty(f"training complement of fold {j} has no rows for arms {missing}")
        xt, at, yt = data.covariates[train], data.treatments[train], data.outcomes[train]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SeparationWarning)
            pm = fit_propensity(xt, at, d, penalty=config.propensity_penalty, max_iter=config.max_iter)
        om = fit_outcome_model(xt, at, yt, d, config.outcome_method)
        pi_hat[test] = pm.predict(data.covariates[test])
        mu_hat[test] = om.predict(data.covariates[test])
        per_fold.append(
            {
                "fold": j,
                "converged": pm.converged,
                "iterations": pm.iterations,
                "final_gradient_norm": pm.final_gradient_norm,
                "separation_warning": any(issubclass(w.category, SeparationWarning) for w in caught),
            }
        )
    diagnostics = {"folds": per_fold, **positivity_summary(pi_hat, config.propensity_floor)}
    for arr in (pi_hat, mu_hat):
        arr.setflags(write=False)
    return NuisanceFits(pi_hat, mu_hat, folds, diagnostics)


def oracle_nuisances(pi: np.ndarray, mu: np.ndarray, floor: float = 1e-8) -> NuisanceFits:
    """Pass-through of known nuisance values, for simulations."""
    pi = np.asarray(pi, dtype=float)
    return NuisanceFits(pi, np.asarray(mu, dtype=float), None, positivity_summary(pi, floor), source="oracle")


def corrupt_nuisances(
    pi: np.ndarray,
    mu: np.ndarray,
    eps: float,
    eta_pi: np.ndarray,
    eta_mu: np.ndarray,
    corrupt_pi: bool = True,
    corrupt_mu: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Perturb oracle nuisances by an error of size ``eps``.

    Propensities are tilted multiplicatively, ``pi * exp(eps * eta)``, then
    renormalised, so exact zeros stay zero and rows stay stochastic.
    """
    pi_t = np.asarray(pi, dtype=float)
    mu_t = np.asarray(mu, dtype=float)
    if corrupt_pi:
        w = pi_t * np.exp(eps * eta_pi)
        pi_t = w / w.sum(axis=1, keepdims=True)
    if corrupt_mu:
        mu_t = mu_t + eps * eta_mu
    return pi_t, mu_t


def error_directions(shape: tuple[int, int], seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed standard-normal error directions for ``corrupt_nuisances``."""
    rng = make_rng(seed, 0xE77)
    return rng.standard_normal(shape), rng.standard_normal(shape)
