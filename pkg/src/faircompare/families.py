"""Shift functions f and the smoothing kernel s, with analytic derivatives.

A shift function shrinks each non-target propensity score, ``0 <= f(x) < x``.
The kernel ``s(x) = 1 - exp(-k x)`` is a smooth stand-in for ``1(x > 0)``
that keeps ``s(0) = 0`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import FairCompareError

BUILTIN_FAMILIES = ("tsm", "multiplicative", "exp_tilt")
ALL_TAGS = BUILTIN_FAMILIES + ("identity", "custom")


class BadOrder(FairCompareError):
    pass


class InadmissibleFamily(FairCompareError):
    pass


@dataclass(frozen=True)
class ShiftFamily:
    tag: str
    delta: float = 0.0
    # (f, f', f'') for tag == "custom"; each maps an array to an array
    funcs: tuple[Callable, Callable, Callable] | None = field(default=None, compare=False, repr=False)
    expression: str | None = None

    def __post_init__(self):
        if self.tag not in ALL_TAGS:
            raise ValueError(f"unknown shift family {self.tag!r}; expected one of {ALL_TAGS}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if self.tag == "custom":
            if self.funcs is None:
                raise ValueError("custom family needs funcs=(f, f', f'')")
            check_admissible(self)

    @classmethod
    def from_expression(cls, expr: str, delta: float = 0.0) -> "ShiftFamily":
        """Custom family from a sympy expression in ``x`` and ``delta``.

        Derivatives are taken symbolically, e.g. ``"delta * x**2"``.
        """
        import sympy

        x, dl = sympy.symbols("x delta")
        f0 = sympy.sympify(expr, locals={"x": x, "delta": dl}).subs(dl, delta)
        f1 = sympy.diff(f0, x)
        f2 = sympy.diff(f1, x)
        funcs = tuple(_vectorize(sympy.lambdify(x, g, "numpy")) for g in (f0, f1, f2))
        return cls("custom", delta, funcs, expression=expr)

    @property
    def label(self) -> str:
        if self.tag in ("tsm", "identity"):
            return self.tag
        return f"{self.tag}:{self.delta:g}"

    @property
    def has_zero_curvature(self) -> bool:
        """True for families whose f'' vanishes identically."""
        return self.tag in ("tsm", "multiplicative", "identity")


def _vectorize(g):
    def h(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(g(x), dtype=float), x.shape).copy()

    return h


def parse_family(text: str, default_delta: float | None = None) -> ShiftFamily:
    """``"tsm"``, ``"multiplicative:0.9"``, ``"exp_tilt"`` (uses ``default_delta``)."""
    tag, _, rest = text.partition(":")
    tag = tag.strip()
    if rest:
        delta = float(rest)
    elif tag in ("tsm", "identity"):
        delta = 0.0
    elif default_delta is not None:
        delta = default_delta
    else:
        raise ValueError(f"family {tag!r} needs a delta, e.g. '{tag}:0.5'")
    return ShiftFamily(tag, delta)


def eval_f(family: ShiftFamily, x, order: int = 0):
    """f(x), f'(x) or f''(x), elementwise on ``x`` in [0, 1]."""
    if order not in (0, 1, 2):
        raise BadOrder(f"order must be 0, 1 or 2, got {order}")
    x = np.asarray(x, dtype=float)
    tag, dl = family.tag, family.delta
    if tag == "tsm":
        return np.zeros_like(x)
    if tag == "identity":
        return x.copy() if order == 0 else np.full_like(x, 1.0 if order == 1 else 0.0)
    if tag == "multiplicative":
        return dl * x if order == 0 else np.full_like(x, dl if order == 1 else 0.0)
    if tag == "exp_tilt":
        if dl == 0.0:
            return np.zeros_like(x)
        den = dl * x + (1.0 - x)  # 1 - x first: exact near x = 1
        if order == 0:
            return dl * x / den
        if order == 1:
            return dl / den**2
        return 2.0 * dl * (1.0 - dl) / den**3
    return family.funcs[order](x)


def check_admissible(family: ShiftFamily, grid_size: int = 1000, tol: float = 1e-12) -> None:
    """Raise :class:`InadmissibleFamily` unless 0 <= f(x) < x on a grid and f(0) = 0."""
    grid = np.linspace(0.0, 1.0, grid_size + 2)[1:-1]
    fx = eval_f(family, grid)
    if not np.all(np.isfinite(fx)):
        raise InadmissibleFamily(f"{family.label}: f is not finite on (0, 1)")
    if np.any(fx < -tol) or np.any(fx >= grid):
        worst = grid[np.argmax(fx - grid)]
        raise InadmissibleFamily(f"{family.label}: need 0 <= f(x) < x, fails near x={worst:.4g}")
    f0 = float(eval_f(family, np.array([0.0]))[0])
    if abs(f0) > tol:
        raise InadmissibleFamily(f"{family.label}: f(0) = {f0:g}, expected 0")


@dataclass(frozen=True)
class SmoothingKernel:
    k: float = 100.0

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"kernel steepness must be positive, got {self.k}")


def eval_s(kernel: SmoothingKernel, x, order: int = 0):
    """s(x) = 1 - exp(-k x) and its first two derivatives."""
    if order not in (0, 1, 2):
        raise BadOrder(f"order must be 0, 1 or 2, got {order}")
    x = np.asarray(x, dtype=float)
    k = kernel.k
    if order == 0:
        # -expm1 keeps s(0) == 0 exactly and stays accurate for tiny k*x
        return -np.expm1(-k * x)
    e = np.exp(-k * x)
    return k * e if order == 1 else -(k**2) * e
