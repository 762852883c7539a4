"""Matrix-free Toeplitz and 3-level Toeplitz operators via FFT circulant embedding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problem import Grid, ParameterError, ProblemSpec, frac_coeffs, scaling

__all__ = [
    "RIESZ_COS_FLOOR",
    "SLAB_ELEMS",
    "ToeplitzSpec1D",
    "ConstraintOperator",
    "build_caputo",
    "build_riesz",
    "toeplitz_dense",
    "toeplitz_matvec",
    "build_constraint",
    "apply_B",
    "apply_B_embedded3d",
]

# |cos(beta*pi/2)| below this makes the Riesz scale factor blow up.
RIESZ_COS_FLOOR = 1e-6


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ToeplitzSpec1D:
    """Unilevel Toeplitz matrix ``T[i, j] = t_{i-j}``.

    ``col`` holds ``t_0, t_1, ..., t_{n-1}`` and ``row`` holds
    ``t_0, t_{-1}, ..., t_{-(n-1)}``.
    """

    col: np.ndarray
    row: np.ndarray

    def __post_init__(self):
        col = _readonly(self.col)
        row = _readonly(self.row)
        if col.ndim != 1 or col.shape != row.shape or col.size == 0:
            raise ParameterError("col and row must be nonempty vectors of equal length")
        if col[0] != row[0]:
            raise ParameterError(f"col[0]={col[0]} differs from row[0]={row[0]}")
        object.__setattr__(self, "col", col)
        object.__setattr__(self, "row", row)

    @property
    def n(self) -> int:
        return self.col.size

    def transposed(self) -> "ToeplitzSpec1D":
        return ToeplitzSpec1D(self.row, self.col)

    def embedding(self) -> np.ndarray:
        """First column of the size-``2n`` circulant whose leading block is ``T``."""
        return np.concatenate([self.col, [0.0], self.row[:0:-1]])


def toeplitz_dense(spec: ToeplitzSpec1D) -> np.ndarray:
    n = spec.n
    i, j = np.indices((n, n))
    d = i - j
    return np.where(d >= 0, spec.col[np.abs(d)], spec.row[np.abs(d)])


def build_caputo(alpha: float, n: int, h_t: float) -> ToeplitzSpec1D:
    """Lower-triangular Grünwald–Letnikov matrix for the Caputo derivative in time."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if not h_t > 0:
        raise ParameterError(f"h_t must be positive, got {h_t}")
    g = frac_coeffs(alpha, n) / h_t ** alpha
    row = np.zeros(n)
    row[0] = g[0]
    return ToeplitzSpec1D(g, row)


def build_riesz(beta: float, n: int, h_x: float) -> ToeplitzSpec1D:
    """Symmetric Riesz-derivative matrix from the 1-shifted Grünwald–Letnikov formula.

    Returns ``-(L + L^T) / (2 cos(beta pi / 2))`` where ``L`` has first column
    ``(g_1, ..., g_n) / h_x**beta`` and first row ``(g_1, g_0, 0, ...) / h_x**beta``.
    """
    if not 1.0 < beta < 2.0:
        raise ParameterError(f"beta must lie in (1, 2), got {beta}")
    c = math.cos(beta * math.pi / 2.0)
    if abs(c) < RIESZ_COS_FLOOR:
        raise ParameterError(
            f"beta={beta} too close to 1: |cos(beta*pi/2)|={abs(c):.3g} < {RIESZ_COS_FLOOR}"
        )
    if not h_x > 0:
        raise ParameterError(f"h_x must be positive, got {h_x}")
    g = frac_coeffs(beta, n + 1) / h_x ** beta
    left_col = g[1:]
    left_row = np.zeros(n)
    left_row[0] = g[1]
    if n > 1:
        left_row[1] = g[0]
    sym = (-1.0 / (2.0 * c)) * (left_col + left_row)
    return ToeplitzSpec1D(sym, sym)


def toeplitz_matvec(spec: ToeplitzSpec1D, x: np.ndarray, transpose: bool = False) -> np.ndarray:
    """``T @ x`` (or ``T.T @ x``) in O(n log n) through a ``2n`` circulant embedding."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n,):
        raise ParameterError(f"expected a vector of length {spec.n}, got shape {x.shape}")
    s = spec.transposed() if transpose else spec
    m = 2 * spec.n
    fc = np.fft.rfft(s.embedding())
    return np.fft.irfft(np.fft.rfft(x, m) * fc, m)[: spec.n]


def _axis_matvec(fc: np.ndarray, x: np.ndarray, axis: int) -> np.ndarray:
    n = x.shape[axis]
    m = 2 * n
    shape = [1] * x.ndim
    shape[axis] = -1
    X = np.fft.rfft(x, m, axis=axis)
    X *= fc.reshape(shape)
    out = np.fft.irfft(X, m, axis=axis)
    return out[(slice(None),) * axis + (slice(0, n),)]


@dataclass(frozen=True)
class ConstraintOperator:
    """Scaled FDE operator ``B = psi * (C_alpha (x) I (x) I - I (x) L_b1 (x) I - I (x) I (x) L_b2)``.

    Only the three 1D Toeplitz specs and their rfft'd embeddings are stored.
    """

    caputo: ToeplitzSpec1D
    riesz1: ToeplitzSpec1D
    riesz2: ToeplitzSpec1D
    psi: float
    n: int
    _fc: tuple = field(repr=False, compare=False, default=())

    def __post_init__(self):
        for s in (self.caputo, self.riesz1, self.riesz2):
            if s.n != self.n:
                raise ParameterError("all 1D specs must have size n")
        fc_cap = np.fft.rfft(self.caputo.embedding())
        fcs = (
            fc_cap,
            np.conj(fc_cap),  # transpose of a real circulant
            np.fft.rfft(self.riesz1.embedding()),
            np.fft.rfft(self.riesz2.embedding()),
        )
        for a in fcs:
            a.setflags(write=False)
        object.__setattr__(self, "_fc", fcs)

    @property
    def N(self) -> int:
        return self.n ** 3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)


def build_constraint(spec: ProblemSpec, grid: Grid | None = None) -> ConstraintOperator:
    grid = grid or spec.grid
    sc = scaling(spec, grid)
    return ConstraintOperator(
        caputo=build_caputo(spec.alpha, grid.n, grid.h_t),
        riesz1=build_riesz(spec.beta1, grid.n, grid.h_x),
        riesz2=build_riesz(spec.beta2, grid.n, grid.h_x),
        psi=sc.psi,
        n=grid.n,
    )


# elements per slab in apply_B; keeps the padded FFT work arrays cache-resident
SLAB_ELEMS = 1 << 14


def apply_B(op: ConstraintOperator, x: np.ndarray, adjoint: bool = False) -> np.ndarray:
    """Apply ``B`` (or ``B^T``) mode-wise: one batched 1D Toeplitz product per axis.

    The batches are processed in slabs of about ``SLAB_ELEMS`` entries so
    large grids do not pay for cache misses on every transform.
    """
    x = np.asarray(x, dtype=float)
    if x.size != op.N:
        raise ParameterError(f"expected {op.N} entries, got {x.size}")
    n = op.n
    X = x.reshape(op.shape)
    fc_cap, fc_cap_t, fc_r1, fc_r2 = op._fc
    fc_t = fc_cap_t if adjoint else fc_cap
    b = max(1, SLAB_ELEMS // (n * n))
    out = np.empty(op.shape)
    for s in range(0, n, b):
        slab = X[s:s + b]
        part = _axis_matvec(fc_r1, slab, 1)
        part += _axis_matvec(fc_r2, slab, 2)
        np.negative(part, out=out[s:s + b])
    for s in range(0, n, b):
        out[:, s:s + b] += _axis_matvec(fc_t, X[:, s:s + b], 0)
    out *= op.psi
    return out.ravel()


def apply_B_embedded3d(op: ConstraintOperator, x: np.ndarray, adjoint: bool = False) -> np.ndarray:
    """Apply ``B`` through a single ``(2n)^3`` three-level circulant embedding.

    Slower than :func:`apply_B`; kept as an independent cross-check.
    """
    x = np.asarray(x, dtype=float)
    if x.size != op.N:
        raise ParameterError(f"expected {op.N} entries, got {x.size}")
    n, m = op.n, 2 * op.n
    cap = op.caputo.transposed() if adjoint else op.caputo
    coef = np.zeros((m, m, m))
    coef[:, 0, 0] += cap.embedding()
    coef[0, :, 0] -= op.riesz1.embedding()
    coef[0, 0, :] -= op.riesz2.embedding()
    coef *= op.psi
    xp = np.zeros((m, m, m))
    xp[:n, :n, :n] = x.reshape(op.shape)
    y = np.fft.ifftn(np.fft.fftn(coef) * np.fft.fftn(xp))
    return y.real[:n, :n, :n].ravel()
