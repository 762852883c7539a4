"""Dense reference implementations for tiny grids.

Everything here materializes ``N x N`` matrices, so sizes are capped at
``DENSE_CAP`` points per dimension.  Used by tests and the ``validate``
command only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circulant import circulant_dense, schur_scalar_m2, tchan
from .problem import Grid, ParameterError, ProblemSpec, desired_state, frac_coeffs, objective_weights, scaling
from .structured import ConstraintOperator, toeplitz_dense

__all__ = [
    "DENSE_CAP",
    "DenseProblem",
    "KktResidual",
    "dense_caputo",
    "dense_riesz",
    "dense_constraint",
    "dense_B_from_operator",
    "dense_S",
    "dense_S_tilde",
    "dense_block_system",
    "dense_admm_step",
    "kkt_residual",
    "solve_unconstrained_kkt",
    "nearest_circulant_lstsq",
]

DENSE_CAP = 6


def _check_cap(n: int, cap: int = DENSE_CAP) -> None:
    if n > cap:
        raise ParameterError(f"dense oracle limited to n <= {cap}, got n={n}")


def dense_caputo(alpha: float, n: int, h_t: float) -> np.ndarray:
    """Entry-by-entry Grünwald–Letnikov Caputo matrix."""
    g = frac_coeffs(alpha, n)
    C = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            C[i, j] = g[i - j]
    return C / h_t ** alpha


def dense_riesz(beta: float, n: int, h_x: float) -> np.ndarray:
    """Entry-by-entry shifted Grünwald–Letnikov Riesz matrix."""
    g = frac_coeffs(beta, n + 1)
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            k = i - j + 1
            if k >= 0:
                L[i, j] = g[k]
    L /= h_x ** beta
    return -(L + L.T) / (2.0 * math.cos(beta * math.pi / 2.0))


def dense_constraint(spec: ProblemSpec, grid: Grid | None = None) -> np.ndarray:
    """Explicit Kronecker assembly of the scaled constraint matrix."""
    grid = grid or spec.grid
    n = grid.n
    _check_cap(n)
    psi = scaling(spec, grid).psi
    I = np.eye(n)
    C = dense_caputo(spec.alpha, n, grid.h_t)
    L1 = dense_riesz(spec.beta1, n, grid.h_x)
    L2 = dense_riesz(spec.beta2, n, grid.h_x)
    D = np.kron(np.kron(C, I), I) - np.kron(np.kron(I, L1), I) - np.kron(I, np.kron(I, L2))
    return psi * D


def dense_B_from_operator(op: ConstraintOperator) -> np.ndarray:
    """Dense ``B`` assembled from the operator's own 1D Toeplitz factors."""
    _check_cap(op.n)
    I = np.eye(op.n)
    C = toeplitz_dense(op.caputo)
    L1 = toeplitz_dense(op.riesz1)
    L2 = toeplitz_dense(op.riesz2)
    return op.psi * (np.kron(np.kron(C, I), I) - np.kron(np.kron(I, L1), I) - np.kron(I, np.kron(I, L2)))


def _m2_inv(J2, rho, delta):
    return 1.0 / (1.0 / (rho * (J2 + 1.0 / delta)) + delta / rho)


def dense_S(B: np.ndarray, J1: np.ndarray, J2: np.ndarray, rho: float, delta: float) -> np.ndarray:
    """Dense normal-equations matrix; ``J2`` is the scaled-control weight."""
    return np.diag(rho * (J1 + 1.0 / delta)) + B.T @ (_m2_inv(J2, rho, delta)[:, None] * B)


def dense_S_tilde(op: ConstraintOperator, rho: float, delta: float, gamma: float) -> np.ndarray:
    """Dense circulant Schur approximation ``rho (1 + 1/delta) I + C3^T C3 / m2``."""
    n = op.n
    _check_cap(n)
    I = np.eye(n)
    Ca = circulant_dense(tchan(op.caputo).first_col)
    C1 = circulant_dense(tchan(op.riesz1).first_col)
    C2 = circulant_dense(tchan(op.riesz2).first_col)
    C3 = op.psi * (np.kron(np.kron(Ca, I), I) - np.kron(np.kron(I, C1), I) - np.kron(I, np.kron(I, C2)))
    m2 = schur_scalar_m2(rho, delta, gamma, op.psi)
    return rho * (1.0 + 1.0 / delta) * np.eye(n ** 3) + C3.T @ C3 / m2


def nearest_circulant_lstsq(T: np.ndarray) -> np.ndarray:
    """Frobenius-nearest circulant by least squares over the circulant basis."""
    n = T.shape[0]
    basis = np.stack([circulant_dense(np.eye(n)[k]).ravel() for k in range(n)], axis=1)
    c, *_ = np.linalg.lstsq(basis, T.ravel(), rcond=None)
    return c


@dataclass(frozen=True)
class DenseProblem:
    """Dense mirror of the scaled-control problem."""

    B: np.ndarray
    J1: np.ndarray
    J2: np.ndarray  # scaled-control weight (gamma/psi^2) J
    ybar: np.ndarray
    g: np.ndarray
    y_lo: float
    y_hi: float
    v_lo: float
    v_hi: float
    psi: float
    gamma: float
    delta: float
    rho: float

    @property
    def N(self) -> int:
        return self.B.shape[0]

    @classmethod
    def from_spec(cls, spec: ProblemSpec, delta: float, rho: float, ybar=None, source=None) -> "DenseProblem":
        grid = spec.grid
        _check_cap(grid.n)
        psi = scaling(spec, grid).psi
        w = objective_weights(grid, spec.gamma)
        ybar = desired_state(grid) if ybar is None else np.asarray(ybar, dtype=float).ravel()
        g = np.zeros(grid.N) if source is None else np.asarray(source, dtype=float).ravel()
        return cls(
            B=dense_constraint(spec, grid), J1=w.J1, J2=w.J2 / psi ** 2, ybar=ybar, g=g,
            y_lo=spec.y_lo, y_hi=spec.y_hi, v_lo=psi * spec.u_lo, v_hi=psi * spec.u_hi,
            psi=psi, gamma=spec.gamma, delta=delta, rho=rho,
        )


def dense_block_system(dense: DenseProblem, state: dict) -> tuple[np.ndarray, np.ndarray]:
    """Saddle system for the joint ``(y, v, p)`` subproblem of one ADMM step.

    Rows: ``rho (J1 + I/delta) y + B^T p = eta_y + (1-rho) B^T p_old``,
    ``rho (J2 + I/delta) v + p = eta_v + (1-rho) p_old`` and
    ``B y + v - (delta/rho) p = psi g - (delta/rho) p_old``.
    """
    N, rho, delta = dense.N, dense.rho, dense.delta
    B, I = dense.B, np.eye(N)
    K = np.block([
        [np.diag(rho * (dense.J1 + 1.0 / delta)), np.zeros((N, N)), B.T],
        [np.zeros((N, N)), np.diag(rho * (dense.J2 + 1.0 / delta)), I],
        [B, I, -(delta / rho) * I],
    ])
    p0 = state["p"]
    f = np.concatenate([
        rho * (dense.J1 * dense.ybar - state["w_y"] + state["z_y"] / delta) + (1.0 - rho) * (B.T @ p0),
        rho * (-state["w_v"] + state["z_v"] / delta) + (1.0 - rho) * p0,
        dense.psi * dense.g - (delta / rho) * p0,
    ])
    return K, f


def _clip(x, lo, hi):
    return np.clip(x, lo if math.isfinite(lo) else None, hi if math.isfinite(hi) else None) \
        if (math.isfinite(lo) or math.isfinite(hi)) else x.copy()


def dense_admm_step(dense: DenseProblem, state: dict) -> dict:
    """One ADMM iteration with the joint subproblem solved by dense LU.

    ``state`` maps ``y, v, z_y, z_v, p, w_y, w_v`` to vectors; a new dict is returned.
    """
    K, f = dense_block_system(dense, state)
    sol = np.linalg.solve(K, f)
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("dense block system produced non-finite values")
    N = dense.N
    y, v = sol[:N], sol[N:2 * N]
    delta, s = dense.delta, dense.rho / dense.delta
    z_y = _clip(y + delta * state["w_y"], dense.y_lo, dense.y_hi)
    z_v = _clip(v + delta * state["w_v"], dense.v_lo, dense.v_hi)
    return {
        "y": y,
        "v": v,
        "z_y": z_y,
        "z_v": z_v,
        "p": state["p"] + s * (dense.B @ y + v - dense.psi * dense.g),
        "w_y": state["w_y"] + s * (y - z_y),
        "w_v": state["w_v"] + s * (v - z_v),
    }


@dataclass(frozen=True)
class KktResidual:
    stationarity_y: float
    stationarity_v: float
    primal: float
    bounds: float
    complementarity: float

    @property
    def stationarity(self) -> float:
        return max(self.stationarity_y, self.stationarity_v)


def _comp(w, z, lo, hi):
    # w > 0 pushes the copy to its upper bound, w < 0 to its lower bound
    wp, wm = np.maximum(w, 0.0), np.maximum(-w, 0.0)
    gap_hi = np.where(wp > 0, hi - z, 0.0) if math.isfinite(hi) else np.where(wp > 0, math.inf, 0.0)
    gap_lo = np.where(wm > 0, z - lo, 0.0) if math.isfinite(lo) else np.where(wm > 0, math.inf, 0.0)
    return float(max(np.max(np.abs(wp * gap_hi), initial=0.0), np.max(np.abs(wm * gap_lo), initial=0.0)))


def kkt_residual(sol: dict, dense: DenseProblem) -> KktResidual:
    """Infinity-norm KKT residuals of the box-constrained QP at ``sol``.

    Missing copies default to the primal vectors and missing bound
    multipliers to zero, so an equality-constrained point can be checked too.
    """
    y, v, p = sol["y"], sol["v"], sol["p"]
    zero = np.zeros_like(y)
    w_y, w_v = sol.get("w_y", zero), sol.get("w_v", zero)
    z_y, z_v = sol.get("z_y", y), sol.get("z_v", v)
    viol = max(
        float(np.max(np.maximum(dense.y_lo - z_y, 0.0))), float(np.max(np.maximum(z_y - dense.y_hi, 0.0))),
        float(np.max(np.maximum(dense.v_lo - z_v, 0.0))), float(np.max(np.maximum(z_v - dense.v_hi, 0.0))),
    )
    return KktResidual(
        stationarity_y=float(np.max(np.abs(dense.J1 * (y - dense.ybar) + dense.B.T @ p + w_y))),
        stationarity_v=float(np.max(np.abs(dense.J2 * v + p + w_v))),
        primal=float(np.max(np.abs(dense.B @ y + v - dense.psi * dense.g))),
        bounds=viol,
        complementarity=max(_comp(w_y, z_y, dense.y_lo, dense.y_hi), _comp(w_v, z_v, dense.v_lo, dense.v_hi)),
    )


def solve_unconstrained_kkt(dense: DenseProblem) -> dict:
    """Exact box-free optimum from the dense KKT system."""
    N, B = dense.N, dense.B
    I = np.eye(N)
    K = np.block([
        [np.diag(dense.J1), np.zeros((N, N)), B.T],
        [np.zeros((N, N)), np.diag(dense.J2), I],
        [B, I, np.zeros((N, N))],
    ])
    f = np.concatenate([dense.J1 * dense.ybar, np.zeros(N), dense.psi * dense.g])
    sol = np.linalg.solve(K, f)
    return {"y": sol[:N], "v": sol[N:2 * N], "p": sol[2 * N:]}
