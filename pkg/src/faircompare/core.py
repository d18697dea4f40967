"""Observed data, run configuration and fold splitting.

Treatment labels are re-indexed internally to contiguous arm codes
``0..d-1`` (numpy indexing); the external labels are kept on the
:class:`Dataset` so that reports always speak in the caller's labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Hashable, Sequence

import numpy as np

# Every report echoes this so runs can be replayed bit-for-bit.
PRNG_ALGORITHM = "numpy.random.PCG64 (SeedSequence-seeded)"


class FairCompareError(Exception):
    """Base class for all library errors."""


class EmptyArm(FairCompareError):
    pass


class NonFinite(FairCompareError):
    pass


class ArityTooLarge(FairCompareError):
    pass


class TooFewRows(FairCompareError):
    pass


class ConfigError(FairCompareError):
    pass


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator for ``seed``, optionally on a child stream.

    ``make_rng(seed, rep)`` gives replication ``rep`` its own stream that
    does not depend on how many other replications exist or run order.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True, eq=False)
class Dataset:
    covariates: np.ndarray  # (n, p)
    treatments: np.ndarray  # (n,) arm codes in 0..d-1
    outcomes: np.ndarray  # (n,)
    labels: tuple  # labels[j] is the external label of arm code j

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def d(self) -> int:
        return len(self.labels)

    @property
    def label_map(self) -> dict:
        """External label -> 1-based arm number."""
        return {lab: j + 1 for j, lab in enumerate(self.labels)}

    def arm_counts(self) -> np.ndarray:
        return np.bincount(self.treatments, minlength=self.d)

    def subset(self, idx: np.ndarray) -> "Dataset":
        # keeps the full label set even if some arm is absent from the subset
        return Dataset(self.covariates[idx], self.treatments[idx], self.outcomes[idx], self.labels)


def _sort_key(label: Any):
    # numeric labels sort numerically, everything else as text
    if isinstance(label, (int, float, np.integer, np.floating)) and not isinstance(label, bool):
        return (0, float(label), "")
    return (1, 0.0, str(label))


def validate_dataset(
    covariates,
    treatments: Sequence[Hashable],
    outcomes,
    labels: Sequence[Hashable] | None = None,
) -> Dataset:
    """Check raw columns and build an immutable :class:`Dataset`.

    ``labels`` optionally declares the full treatment label set; a declared
    label with no rows raises :class:`EmptyArm`. Without it the observed
    labels are used, sorted.
    """
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(outcomes, dtype=float).reshape(-1)
    a_raw = list(np.asarray(treatments).reshape(-1).tolist())
    n = len(a_raw)
    if n == 0:
        raise TooFewRows("dataset has no rows")
    if x.shape[0] != n or y.shape[0] != n:
        raise ValueError(f"column lengths differ: covariates {x.shape[0]}, treatments {n}, outcomes {y.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NonFinite("covariates contain NaN or infinite values")
    if not np.all(np.isfinite(y)):
        raise NonFinite("outcomes contain NaN or infinite values")

    observed = set(a_raw)
    if labels is None:
        ordered = sorted(observed, key=_sort_key)
    else:
        ordered = list(labels)
        if len(set(ordered)) != len(ordered):
            raise ValueError("declared labels contain duplicates")
        missing = [lab for lab in ordered if lab not in observed]
        if missing:
            raise EmptyArm(f"declared treatment labels with no rows: {missing}")
        extra = observed.difference(ordered)
        if extra:
            raise ValueError(f"treatment labels not among declared labels: {sorted(extra, key=_sort_key)}")
    d = len(ordered)
    if d > math.ceil(n / 2):
        raise ArityTooLarge(f"d={d} treatment arms is too many for n={n} rows")

    code = {lab: j for j, lab in enumerate(ordered)}
    a = np.fromiter((code[v] for v in a_raw), dtype=np.int64, count=n)
    for arr in (x, a, y):
        arr.setflags(write=False)
    return Dataset(x, a, y, tuple(ordered))


@dataclass(frozen=True)
class EstimationConfig:
    family: str = "tsm"
    delta: float = 0.0
    smoothing_k: float = 100.0
    folds: int = 2
    seed: int = 0
    ci_level: float = 0.95
    propensity_floor: float = 1e-8
    propensity_penalty: float = 1e-4
    outcome_method: str = "linear"
    max_iter: int = 10_000

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigError(f"delta must lie in [0, 1], got {self.delta}")
        if not self.smoothing_k > 0:
            raise ConfigError(f"smoothing_k must be positive, got {self.smoothing_k}")
        if int(self.folds) != self.folds or self.folds < 2:
            raise ConfigError(f"folds must be an integer >= 2, got {self.folds}")
        if not 0.0 < self.ci_level < 1.0:
            raise ConfigError(f"ci_level must lie in (0, 1), got {self.ci_level}")
        if not self.propensity_floor > 0:
            raise ConfigError("propensity_floor must be positive")
        if self.outcome_method not in ("linear", "knn"):
            raise ConfigError(f"outcome_method must be 'linear' or 'knn', got {self.outcome_method!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")

    @classmethod
    def from_mapping(cls, values: dict) -> "EstimationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def updated(self, **changes) -> "EstimationConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of: np.ndarray
    folds: int
    seed: int = field(default=0)

    def indices(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == j)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.folds)


def split_folds(n: int, folds: int, seed: int) -> FoldAssignment:
    """Seeded permutation of ``range(n)`` cut into ``folds`` contiguous blocks."""
    if folds < 2:
        raise ConfigError(f"folds must be >= 2, got {folds}")
    if n < folds:
        raise TooFewRows(f"cannot split {n} rows into {folds} folds")
    perm = make_rng(seed, 0xF01D).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    for j, block in enumerate(np.array_split(perm, folds)):
        fold_of[block] = j
    fold_of.setflags(write=False)
    return FoldAssignment(fold_of, folds, seed)
