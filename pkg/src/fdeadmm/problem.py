"""Discretized FDE-constrained control problem: grid, coefficients, weights, misfit.

All space-time vectors share one layout: an array of shape ``(n_t, n_x1, n_x2)``
raveled in C order, so time is the outermost index and ``x2`` the innermost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "ParameterError",
    "ProblemSpec",
    "Grid",
    "ScalingConstants",
    "ObjectiveWeights",
    "frac_coeffs",
    "scaling",
    "desired_state",
    "desired_state_fn",
    "objective_weights",
    "l2_misfit",
]


class ParameterError(ValueError):
    """Raised for out-of-range problem or solver parameters."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ProblemSpec:
    """Continuous problem parameters on the unit space-time cube.

    Bounds may be ``-inf``/``inf``; infinite bounds are treated as absent by
    the projections, never as large finite numbers.
    """

    alpha: float = 0.7
    beta1: float = 1.3
    beta2: float = 1.3
    gamma: float = 1e-4
    n: int = 8
    y_lo: float = -math.inf
    y_hi: float = math.inf
    u_lo: float = -math.inf
    u_hi: float = math.inf

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 1.0 < b < 2.0:
                raise ParameterError(f"{name} must lie in (1, 2), got {b}")
        if not self.gamma > 0.0:
            raise ParameterError(f"gamma must be positive, got {self.gamma}")
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError(f"n must be a positive integer, got {self.n}")
        if not self.y_lo < self.y_hi:
            raise ParameterError(f"need y_lo < y_hi, got [{self.y_lo}, {self.y_hi}]")
        if not self.u_lo < self.u_hi:
            raise ParameterError(f"need u_lo < u_hi, got [{self.u_lo}, {self.u_hi}]")

    @property
    def grid(self) -> "Grid":
        return Grid(self.n)


@dataclass(frozen=True)
class Grid:
    """Uniform interior grid with ``n`` points per dimension, ``h_t = h_x``."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError(f"n must be a positive integer, got {self.n}")

    @property
    def h_x(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def h_t(self) -> float:
        return self.h_x

    @property
    def N(self) -> int:
        return self.n ** 3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    def nodes(self) -> np.ndarray:
        """Interior node coordinates ``i*h`` for ``i = 1..n``."""
        return np.arange(1, self.n + 1) * self.h_x

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Coordinate arrays ``(x1, x2, t)``, each of shape ``(n, n, n)`` in layout order."""
        s = self.nodes()
        t, x1, x2 = np.meshgrid(s, s, s, indexing="ij")
        return x1, x2, t


@dataclass(frozen=True)
class ScalingConstants:
    psi: float
    nu1: float
    nu2: float
    nu3: float


@dataclass(frozen=True)
class ObjectiveWeights:
    """Trapezoidal objective weights; ``J1 = J`` and ``J2 = gamma * J``."""

    diag_J: np.ndarray
    j1_scale: float
    j2_scale: float

    @property
    def J1(self) -> np.ndarray:
        return self.j1_scale * self.diag_J

    @property
    def J2(self) -> np.ndarray:
        return self.j2_scale * self.diag_J


def _check_order(order: float) -> None:
    if not (0.0 < order < 1.0 or 1.0 < order < 2.0):
        raise ParameterError(f"fractional order must lie in (0,1) or (1,2), got {order}")


def frac_coeffs(order: float, count: int) -> np.ndarray:
    """Grünwald–Letnikov weights ``g_0 .. g_{count-1}`` of the given order.

    Computed with the two-term recursion ``g_k = (1 - (order+1)/k) g_{k-1}``,
    ``g_0 = 1``.

    >>> frac_coeffs(0.5, 3)
    array([ 1.   , -0.5  , -0.125])
    """
    _check_order(order)
    if int(count) != count or count < 1:
        raise ParameterError(f"count must be a positive integer, got {count}")
    count = int(count)
    k = np.arange(1, count, dtype=float)
    factors = np.empty(count)
    factors[0] = 1.0
    factors[1:] = 1.0 - (order + 1.0) / k
    return np.cumprod(factors)


def scaling(spec: ProblemSpec, grid: Grid | None = None) -> ScalingConstants:
    grid = grid or spec.grid
    ht_a = grid.h_t ** spec.alpha
    hx_b1 = grid.h_x ** spec.beta1
    hx_b2 = grid.h_x ** spec.beta2
    psi = min(ht_a, hx_b1, hx_b2)
    return ScalingConstants(psi=psi, nu1=psi / hx_b1, nu2=psi / hx_b2, nu3=psi / ht_a)


def desired_state_fn(x1, x2, t):
    """Target state ``10 cos(10 x1) sin(x1 x2) (1 - exp(-5 t))``."""
    return 10.0 * np.cos(10.0 * x1) * np.sin(x1 * x2) * (1.0 - np.exp(-5.0 * t))


def desired_state(grid: Grid, fn: Callable = desired_state_fn) -> np.ndarray:
    x1, x2, t = grid.mesh()
    return _readonly(np.asarray(fn(x1, x2, t), dtype=float).ravel())


def objective_weights(grid: Grid, gamma: float) -> ObjectiveWeights:
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    d = np.ones(grid.shape)
    d[-1] = 0.5
    return ObjectiveWeights(diag_J=_readonly(d.ravel()), j1_scale=1.0, j2_scale=float(gamma))


def l2_misfit(y: np.ndarray, ybar_fn: Callable | None, grid: Grid) -> float:
    """Trapezoidal approximation of ``||y - ybar||`` over the unit space-time cube.

    The difference is taken at interior nodes only: boundary, initial and
    final planes carry zero weight in the composite trapezoidal rule once the
    homogeneous data are imposed on both fields, so every interior node gets
    weight ``h_x**2 * h_t``.  ``ybar_fn=None`` means a zero target.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size != grid.N:
        raise ParameterError(f"expected {grid.N} entries, got {y.size}")
    diff = y - desired_state(grid, ybar_fn) if ybar_fn is not None else y
    w = grid.h_x ** 2 * grid.h_t
    return float(math.sqrt(w * float(diff @ diff)))
