"""T. Chan circulant approximations and the 3-level circulant Schur preconditioner."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problem import ParameterError, ScalingConstants, frac_coeffs
from .structured import ConstraintOperator, ToeplitzSpec1D

__all__ = [
    "CirculantSpec1D",
    "CirculantPreconditioner",
    "tchan",
    "circulant_eigs",
    "circulant_dense",
    "assemble_precond",
    "precond_solve",
    "schur_scalar_m2",
    "symbol_eval",
    "symbol_coefficients",
    "wiener_bound",
    "coefficient_abs_sum",
    "clustering_report",
]


def _readonly(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CirculantSpec1D:
    first_col: np.ndarray
    eigs: np.ndarray

    @property
    def n(self) -> int:
        return self.first_col.size


def circulant_eigs(first_col) -> np.ndarray:
    """Eigenvalues ``lambda_j = sum_k c_k exp(-2 pi i j k / n)``.

    With this convention ``C x_j = lambda_j x_j`` for the Fourier vector
    ``x_j[k] = exp(2 pi i j k / n)``.
    """
    c = np.asarray(first_col)
    if c.ndim != 1 or c.size == 0:
        raise ParameterError("first_col must be a nonempty vector")
    return np.fft.fft(c)


def circulant_dense(first_col) -> np.ndarray:
    c = np.asarray(first_col)
    n = c.size
    i, j = np.indices((n, n))
    return c[(i - j) % n]


def tchan(spec: ToeplitzSpec1D) -> CirculantSpec1D:
    """Frobenius-optimal circulant approximation of a Toeplitz matrix.

    ``c_i = ((n - i) t_i + i t_{-(n-i)}) / n``, i.e. the average of the
    (wrapped) diagonal ``i`` of ``T``.
    """
    n = spec.n
    i = np.arange(n)
    wrapped = np.zeros(n)
    wrapped[1:] = spec.row[:0:-1]  # t_{-(n-i)} for i = 1..n-1
    c = ((n - i) * spec.col + i * wrapped) / n
    return CirculantSpec1D(_readonly(c), _readonly(circulant_eigs(c)))


def schur_scalar_m2(rho: float, delta: float, gamma: float, psi: float) -> float:
    """Middle factor ``(rho (gamma/psi^2 + 1/delta))^{-1} + delta/rho`` with ``J ~ I``."""
    return 1.0 / (rho * (gamma / psi ** 2 + 1.0 / delta)) + delta / rho


@dataclass(frozen=True)
class CirculantPreconditioner:
    """Diagonalized Schur complement approximation ``S~ = F* diag(lam_S) F``.

    ``lam_B`` and ``lam_S`` are stored with shape ``(n, n, n)`` (layout order);
    ``lam_S_half`` is the slice matching ``numpy.fft.rfftn``.
    """

    lam_B: np.ndarray
    lam_S: np.ndarray
    lam_S_half: np.ndarray
    rho: float
    delta: float
    gamma: float
    psi: float

    @property
    def n(self) -> int:
        return self.lam_S.shape[0]

    @property
    def N(self) -> int:
        return self.lam_S.size


def assemble_precond(op: ConstraintOperator, rho: float, delta: float, gamma: float) -> CirculantPreconditioner:
    if not (rho > 0 and delta > 0 and gamma > 0):
        raise ParameterError("rho, delta and gamma must be positive")
    lam_a = tchan(op.caputo).eigs
    lam_1 = tchan(op.riesz1).eigs
    lam_2 = tchan(op.riesz2).eigs
    psi = op.psi
    lam_B = psi * (lam_a[:, None, None] - lam_1[None, :, None] - lam_2[None, None, :])
    m2 = schur_scalar_m2(rho, delta, gamma, psi)
    lam_S = rho * (1.0 + 1.0 / delta) + (lam_B.real ** 2 + lam_B.imag ** 2) / m2
    half = np.ascontiguousarray(lam_S[:, :, : op.n // 2 + 1])
    return CirculantPreconditioner(
        lam_B=_readonly(lam_B),
        lam_S=_readonly(lam_S),
        lam_S_half=_readonly(half),
        rho=rho,
        delta=delta,
        gamma=gamma,
        psi=psi,
    )


def precond_solve(pc: CirculantPreconditioner, r: np.ndarray) -> np.ndarray:
    """``S~^{-1} r`` with one forward and one inverse 3D real FFT."""
    r = np.asarray(r, dtype=float)
    if r.size != pc.N:
        raise ParameterError(f"expected {pc.N} entries, got {r.size}")
    shape = pc.lam_S.shape
    R = np.fft.rfftn(r.reshape(shape))
    R /= pc.lam_S_half
    return np.fft.irfftn(R, shape, axes=(0, 1, 2)).ravel()


# --- generating symbol -----------------------------------------------------


def _riesz_scale(beta: float) -> float:
    return -1.0 / (2.0 * math.cos(beta * math.pi / 2.0))


def symbol_eval(theta, scals: ScalingConstants, alpha: float, beta1: float, beta2: float, K: int):
    """Truncated generating symbol of ``B``, both series cut after ``K`` terms.

    ``theta`` may be a single 3-vector or an array of shape ``(..., 3)``.
    """
    if K < 2:
        raise ParameterError("K must be at least 2")
    theta = np.asarray(theta, dtype=float)
    t1, t2, t3 = theta[..., 0], theta[..., 1], theta[..., 2]
    ga = frac_coeffs(alpha, K)
    k = np.arange(K)
    time_part = scals.nu3 * np.exp(1j * np.multiply.outer(t3, k)) @ ga
    # spatial series runs over k = -1 .. K-2, weight g_{k+1}
    ks = np.arange(-1, K - 1)
    space = 0.0
    for beta, nu, th in ((beta1, scals.nu1, t1), (beta2, scals.nu2, t2)):
        gb = frac_coeffs(beta, K)
        space = space + nu * _riesz_scale(beta) * (2.0 * np.cos(np.multiply.outer(th, ks)) @ gb)
    return time_part - space


def symbol_coefficients(scals: ScalingConstants, alpha: float, beta1: float, beta2: float, K: int):
    """Fourier coefficients of the truncated symbol, matched per frequency.

    Returns ``(time, space1, space2, origin)``: ``time[k]`` is the coefficient
    of ``e^{i k theta3}`` for ``k >= 1``, ``space*[m]`` that of ``e^{+-i m theta}``
    for ``m >= 1`` and ``origin`` the merged constant term.
    """
    if K < 3:
        raise ParameterError("K must be at least 3")
    ga = frac_coeffs(alpha, K)
    time = scals.nu3 * ga[1:]
    origin = scals.nu3 * ga[0]
    spaces = []
    for beta, nu in ((beta1, scals.nu1), (beta2, scals.nu2)):
        gb = frac_coeffs(beta, K)
        w = -nu * _riesz_scale(beta)
        # frequency 0 gets 2 g_1, frequency 1 gets g_0 + g_2, frequency m>=2 gets g_{m+1}
        origin += w * 2.0 * gb[1]
        sp = np.empty(K - 2)
        sp[0] = w * (gb[0] + gb[2])
        sp[1:] = w * gb[3:K]
        spaces.append(sp)
    return time, spaces[0], spaces[1], origin


def wiener_bound(scals: ScalingConstants, alpha: float, beta1: float, beta2: float) -> float:
    """Closed-form bound on the absolute coefficient sum of the symbol."""
    return (
        2.0 * scals.nu3 * 1.0
        + 2.0 * scals.nu1 * beta1 / abs(math.cos(beta1 * math.pi / 2.0))
        + 2.0 * scals.nu2 * beta2 / abs(math.cos(beta2 * math.pi / 2.0))
    )


def coefficient_abs_sum(scals: ScalingConstants, alpha: float, beta1: float, beta2: float, K: int) -> float:
    time, s1, s2, origin = symbol_coefficients(scals, alpha, beta1, beta2, K)
    return float(abs(origin) + np.abs(time).sum() + 2.0 * np.abs(s1).sum() + 2.0 * np.abs(s2).sum())


# --- clustering diagnostic -------------------------------------------------


def clustering_report(op: ConstraintOperator, pc: CirculantPreconditioner, n_max: int = 6) -> dict:
    """Dense eigenvalues of ``S~^{-1} S`` with cluster statistics around 1.

    Observational only.  Raises :class:`ParameterError` when ``n > n_max``.
    """
    import scipy.linalg

    from . import oracle
    from .problem import Grid, objective_weights

    if op.n > n_max:
        raise ParameterError(f"clustering report needs n <= {n_max}, got n={op.n}")
    grid = Grid(op.n)
    weights = objective_weights(grid, pc.gamma)
    B = oracle.dense_B_from_operator(op)
    S = oracle.dense_S(B, weights.J1, weights.J2 / pc.psi ** 2, pc.rho, pc.delta)
    St = oracle.dense_S_tilde(op, pc.rho, pc.delta, pc.gamma)
    eigs = scipy.linalg.eigh(S, St, eigvals_only=True)
    rows = {
        "eigs": eigs,
        "min": float(eigs.min()),
        "max": float(eigs.max()),
    }
    for eps in (0.1, 0.3):
        rows[f"frac_within_{eps}"] = float(np.mean(np.abs(eigs - 1.0) <= eps))
    return rows
