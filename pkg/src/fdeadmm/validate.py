"""Structured-versus-dense equivalence checks run by the ``validate`` command."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import oracle
from .admm import AdmmConfig, AdmmState, admm_step, apply_S, setup, solve_equality_constrained
from .circulant import circulant_dense, precond_solve, tchan
from .problem import ParameterError, ProblemSpec
from .structured import ConstraintOperator, ToeplitzSpec1D, apply_B, apply_B_embedded3d, build_constraint, toeplitz_dense

__all__ = ["CheckResult", "run_checks"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.threshold)


def _perturbed(op: ConstraintOperator, eps: float) -> ConstraintOperator:
    # fault injection: shift the leading Caputo coefficient
    col = op.caputo.col.copy()
    row = op.caputo.row.copy()
    col[0] += eps
    row[0] += eps
    return dataclasses.replace(op, caputo=ToeplitzSpec1D(col, row))


def _columns(f, N):
    E = np.eye(N)
    return np.stack([f(E[:, k]) for k in range(N)], axis=1)


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def _checks_at(n: int, rng, perturb: float) -> list[CheckResult]:
    spec = ProblemSpec(n=n, y_lo=-4.0, y_hi=4.0, u_lo=-350.0, u_hi=350.0)
    cfg = AdmmConfig(delta=2.0)
    op = build_constraint(spec)
    if perturb:
        op = _perturbed(op, perturb)
    N = op.N
    B = oracle.dense_constraint(spec)
    prob = setup(spec, cfg, op=op)
    out = [
        CheckResult(f"apply_B n={n}", _rel(_columns(lambda x: apply_B(op, x), N), B), 1e-12),
        CheckResult(f"apply_B adjoint n={n}", _rel(_columns(lambda x: apply_B(op, x, adjoint=True), N), B.T), 1e-12),
        CheckResult(f"apply_B embedded n={n}", _rel(_columns(lambda x: apply_B_embedded3d(op, x), N), B), 1e-12),
    ]
    S = oracle.dense_S(B, prob.J1, prob.J2, cfg.rho, cfg.delta)
    x = rng.standard_normal(N)
    out.append(CheckResult(f"apply_S n={n}", _rel(apply_S(prob, x), S @ x), 1e-12))

    St = oracle.dense_S_tilde(op, cfg.rho, cfg.delta, spec.gamma)
    z = precond_solve(prob.pc, x)
    out.append(CheckResult(f"precond_solve n={n}", float(np.linalg.norm(St @ z - x) / np.linalg.norm(x)), 1e-12))
    out.append(CheckResult(
        f"lam_S spectrum n={n}",
        _rel(np.sort(prob.pc.lam_S.ravel()), np.linalg.eigvalsh(St)), 1e-10,
    ))

    dense = oracle.DenseProblem.from_spec(spec, cfg.delta, cfg.rho)
    state = AdmmState(*(rng.standard_normal(N) for _ in range(7)))
    ref = state.vectors()
    err = 0.0
    for _ in range(5):
        state, _ = admm_step(prob, state, 1e-14)
        ref = oracle.dense_admm_step(dense, ref)
        err = max(err, max(float(np.max(np.abs(state.vectors()[k] - ref[k]))) for k in ref))
    out.append(CheckResult(f"5 ADMM steps n={n}", err, 1e-10))

    free = dataclasses.replace(spec, y_lo=-np.inf, y_hi=np.inf, u_lo=-np.inf, u_hi=np.inf)
    dfree = oracle.DenseProblem.from_spec(free, cfg.delta, cfg.rho)
    exact = oracle.solve_unconstrained_kkt(dfree)
    y, v, p = solve_equality_constrained(setup(free, cfg, op=op), tol=1e-14)
    out.append(CheckResult(f"equality-constrained solve n={n}", _rel(y, exact["y"]), 1e-8))
    return out


def _tchan_check(rng, trials: int = 50, rivals: int = 200) -> CheckResult:
    worst = -np.inf
    err = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 9))
        col = rng.standard_normal(n)
        row = rng.standard_normal(n)
        row[0] = col[0]
        spec = ToeplitzSpec1D(col, row)
        T = toeplitz_dense(spec)
        c = tchan(spec).first_col
        best = np.linalg.norm(circulant_dense(c) - T)
        err = max(err, float(np.max(np.abs(c - oracle.nearest_circulant_lstsq(T)))))
        for _ in range(rivals):
            other = c + rng.standard_normal(n) * rng.uniform(1e-3, 1.0)
            worst = max(worst, best - np.linalg.norm(circulant_dense(other) - T))
    # worst > 0 would mean a random circulant beat the closed form
    return CheckResult("tchan optimality", max(err, max(worst, 0.0)), 1e-12)


def run_checks(cap: int = 4, seed: int = 0, perturb: float = 0.0) -> list[CheckResult]:
    """Run every oracle comparison for ``n = 1..cap``.

    ``perturb`` shifts one Caputo coefficient of the structured operator and
    exists to confirm that the checks can fail.
    """
    if not 1 <= cap <= oracle.DENSE_CAP:
        raise ParameterError(f"cap must lie in [1, {oracle.DENSE_CAP}], got {cap}")
    rng = np.random.default_rng(seed)
    results = []
    for n in range(1, cap + 1):
        results.extend(_checks_at(n, rng, perturb))
    results.append(_tchan_check(rng))
    return results
