"""Two-block ADMM for the box-constrained FDE control problem.

The solver works with the scaled control ``v = psi * u``.  With ``B = psi D``
the constraint reads ``B y + v = psi g``, the control weight becomes
``J2 = (gamma / psi**2) J`` and the control copy lives in ``psi * [u_lo, u_hi]``.
Reported controls are unscaled.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .circulant import CirculantPreconditioner, assemble_precond, precond_solve
from .problem import (
    Grid,
    ParameterError,
    ProblemSpec,
    desired_state,
    l2_misfit,
    objective_weights,
    desired_state_fn,
)
from .structured import ConstraintOperator, apply_B, build_constraint

__all__ = [
    "GOLDEN",
    "SolverFailure",
    "NumericalFailure",
    "AdmmConfig",
    "AdmmProblem",
    "AdmmState",
    "PcgResult",
    "Termination",
    "SolveResult",
    "setup",
    "apply_S",
    "build_rhs",
    "pcg",
    "recover_vp",
    "clamp",
    "z_update",
    "dual_update",
    "primal_residuals",
    "dual_infeasibility",
    "check_termination",
    "admm_step",
    "solve",
    "solve_equality_constrained",
]

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) + 1.0) / 2.0


class SolverFailure(RuntimeError):
    """ADMM could not make progress; ``diagnostics`` carries the recent history."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NumericalFailure(SolverFailure):
    """A non-finite value appeared in an iterate or Krylov quantity."""


@dataclass(frozen=True)
class AdmmConfig:
    delta: float = 0.4
    rho: float = 1.618
    tol_primal: float = 1e-4
    max_outer: int = 3000
    inner_tol_floor: float = 1e-4
    inner_tol_factor: float = 0.05
    max_inner: int = 300
    warm_start: bool = False

    def __post_init__(self):
        if not 0.0 < self.rho < GOLDEN:
            raise ParameterError(f"rho must lie in (0, {GOLDEN:.7f}), got {self.rho}")
        if not self.delta > 0:
            raise ParameterError(f"delta must be positive, got {self.delta}")
        for name in ("tol_primal", "inner_tol_floor", "inner_tol_factor"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ParameterError("iteration caps must be at least 1")


@dataclass(frozen=True)
class AdmmProblem:
    """Everything that stays fixed during one solve (shared read-only)."""

    spec: ProblemSpec
    cfg: AdmmConfig
    op: ConstraintOperator
    pc: CirculantPreconditioner
    J1: np.ndarray
    J2: np.ndarray  # scaled-control weight (gamma/psi^2) J
    ybar: np.ndarray
    g: np.ndarray  # raw source term
    y_lo: float
    y_hi: float
    v_lo: float
    v_hi: float
    # diagonal factors reused by every iteration
    a1: np.ndarray = field(repr=False)  # rho (J1 + 1/delta)
    a2_inv: np.ndarray = field(repr=False)  # (rho (J2 + 1/delta))^{-1}
    m2_inv: np.ndarray = field(repr=False)  # (a2_inv + delta/rho)^{-1}

    @property
    def psi(self) -> float:
        return self.op.psi

    @property
    def N(self) -> int:
        return self.op.N

    @property
    def grid(self) -> Grid:
        return Grid(self.op.n)


def setup(spec: ProblemSpec, cfg: AdmmConfig, ybar: np.ndarray | None = None,
          source: np.ndarray | None = None, op: ConstraintOperator | None = None) -> AdmmProblem:
    grid = spec.grid
    op = op or build_constraint(spec, grid)
    pc = assemble_precond(op, cfg.rho, cfg.delta, spec.gamma)
    w = objective_weights(grid, spec.gamma)
    psi = op.psi
    J1 = w.J1
    J2 = w.J2 / psi ** 2
    ybar = desired_state(grid) if ybar is None else np.asarray(ybar, dtype=float).ravel()
    g = np.zeros(grid.N) if source is None else np.asarray(source, dtype=float).ravel()
    if ybar.size != grid.N or g.size != grid.N:
        raise ParameterError(f"ybar and source must have {grid.N} entries")
    rho, delta = cfg.rho, cfg.delta
    a1 = rho * (J1 + 1.0 / delta)
    a2_inv = 1.0 / (rho * (J2 + 1.0 / delta))
    m2_inv = 1.0 / (a2_inv + delta / rho)
    return AdmmProblem(
        spec=spec, cfg=cfg, op=op, pc=pc, J1=J1, J2=J2, ybar=ybar, g=g,
        y_lo=spec.y_lo, y_hi=spec.y_hi, v_lo=psi * spec.u_lo, v_hi=psi * spec.u_hi,
        a1=a1, a2_inv=a2_inv, m2_inv=m2_inv,
    )


@dataclass
class AdmmState:
    y: np.ndarray
    v: np.ndarray
    z_y: np.ndarray
    z_v: np.ndarray
    p: np.ndarray
    w_y: np.ndarray
    w_v: np.ndarray
    iteration: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def zeros(cls, N: int) -> "AdmmState":
        z = lambda: np.zeros(N)  # noqa: E731
        return cls(z(), z(), z(), z(), z(), z(), z())

    def vectors(self) -> dict:
        return {k: getattr(self, k) for k in ("y", "v", "z_y", "z_v", "p", "w_y", "w_v")}


# --- linear algebra ----------------------------------------------------------


def apply_S(prob: AdmmProblem, x: np.ndarray) -> np.ndarray:
    """Normal-equations operator ``rho (J1 + I/delta) + B^T M2^{-1} B``."""
    x = np.asarray(x, dtype=float)
    if x.size != prob.N:
        raise ParameterError(f"expected {prob.N} entries, got {x.size}")
    return prob.a1 * x + apply_B(prob.op, prob.m2_inv * apply_B(prob.op, x), adjoint=True)


def build_rhs(prob: AdmmProblem, state: AdmmState) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand side of the normal equations and the recovery vector ``r``.

    ``r`` is defined so that ``p = M2^{-1} (B y + r)`` solves the third block
    row of the merged saddle system.
    """
    cfg, psi = prob.cfg, prob.psi
    rho, delta = cfg.rho, cfg.delta
    eta_v = rho * (-state.w_v + state.z_v / delta) + (1.0 - rho) * state.p
    r = -psi * prob.g + (delta / rho) * state.p + prob.a2_inv * eta_v
    eta_y = rho * (prob.J1 * prob.ybar - state.w_y + state.z_y / delta)
    rhs = eta_y + apply_B(prob.op, (1.0 - rho) * state.p - prob.m2_inv * r, adjoint=True)
    return rhs, r


@dataclass(frozen=True)
class PcgResult:
    x: np.ndarray
    iterations: int
    converged: bool
    relres: float


def pcg(apply: Callable, precond: Callable | None, rhs: np.ndarray, tol: float,
        max_inner: int, x0: np.ndarray | None = None) -> PcgResult:
    """Preconditioned conjugate gradients with relative-residual stopping.

    Stops once ``||rhs - A x|| <= tol * ||rhs||``.  Hitting ``max_inner`` is
    reported through ``converged=False`` rather than raised.
    """
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise NumericalFailure("non-finite right-hand side")
    nb = float(np.linalg.norm(rhs))
    if nb == 0.0:
        return PcgResult(np.zeros_like(rhs), 0, True, 0.0)
    precond = precond or (lambda r: r.copy())
    if x0 is None:
        x = np.zeros_like(rhs)
        r = rhs.copy()
    else:
        x = np.array(x0, dtype=float)
        r = rhs - apply(x)
    res = float(np.linalg.norm(r))
    if res <= tol * nb:
        return PcgResult(x, 0, True, res / nb)
    z = precond(r)
    d = z.copy()
    rz = float(r @ z)
    it = 0
    while it < max_inner:
        it += 1
        q = apply(d)
        dq = float(d @ q)
        if not math.isfinite(dq) or dq <= 0.0:
            raise NumericalFailure(f"PCG breakdown (d^T A d = {dq}) at iteration {it}")
        a = rz / dq
        x += a * d
        r -= a * q
        res = float(np.linalg.norm(r))
        if not math.isfinite(res):
            raise NumericalFailure(f"non-finite PCG residual at iteration {it}")
        if res <= tol * nb:
            return PcgResult(x, it, True, res / nb)
        z = precond(r)
        rz_new = float(r @ z)
        d *= rz_new / rz
        d += z
        rz = rz_new
    return PcgResult(x, it, False, res / nb)


def recover_vp(prob: AdmmProblem, state: AdmmState, y: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scaled control and merged multiplier from the state solution ``y``."""
    rho, delta = prob.cfg.rho, prob.cfg.delta
    p = prob.m2_inv * (apply_B(prob.op, y) + r)
    v = prob.a2_inv * (-p - rho * state.w_v + (rho / delta) * state.z_v + (1.0 - rho) * state.p)
    return v, p


def clamp(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Project onto ``[lo, hi]``; infinite bounds are ignored."""
    out = np.array(x, dtype=float)
    if math.isfinite(lo):
        np.maximum(out, lo, out=out)
    if math.isfinite(hi):
        np.minimum(out, hi, out=out)
    return out


def z_update(prob: AdmmProblem, y, v, w_y, w_v) -> tuple[np.ndarray, np.ndarray]:
    delta = prob.cfg.delta
    return clamp(y + delta * w_y, prob.y_lo, prob.y_hi), clamp(v + delta * w_v, prob.v_lo, prob.v_hi)


def dual_update(prob: AdmmProblem, By, y, v, z_y, z_v, p, w_y, w_v):
    """Multiplier steps of length ``rho/delta``; ``By`` is ``B @ y``."""
    s = prob.cfg.rho / prob.cfg.delta
    return (
        p + s * (By + v - prob.psi * prob.g),
        w_y + s * (y - z_y),
        w_v + s * (v - z_v),
    )


def primal_residuals(prob: AdmmProblem, By, y, v, z_y, z_v) -> tuple[float, float, float]:
    """``(||B y + psi (u - g)||, ||y - z_y||, ||u - z_u||)`` in the max norm, ``u`` unscaled."""
    psi = prob.psi
    return (
        float(np.max(np.abs(By + v - psi * prob.g))),
        float(np.max(np.abs(y - z_y))),
        float(np.max(np.abs(v - z_v))) / psi,
    )


def dual_infeasibility(prob: AdmmProblem, state: AdmmState) -> float:
    r1 = prob.J1 * (state.y - prob.ybar) + apply_B(prob.op, state.p, adjoint=True) + state.w_y
    r2 = prob.J2 * state.v + state.p + state.w_v
    return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


@dataclass(frozen=True)
class Termination:
    converged: bool
    inner_tol: float
    residuals: tuple


def check_termination(residuals, cfg: AdmmConfig) -> Termination:
    residuals = tuple(float(r) for r in residuals)
    converged = max(residuals) <= cfg.tol_primal
    inner_tol = cfg.inner_tol_factor * max(min(residuals), cfg.inner_tol_floor)
    return Termination(converged, inner_tol, residuals)


def admm_step(prob: AdmmProblem, state: AdmmState, inner_tol: float) -> tuple[AdmmState, dict]:
    """One iteration of the standard two-block ADMM; returns a new state and a record."""
    rhs, r = build_rhs(prob, state)
    x0 = state.y if prob.cfg.warm_start else None
    sol = pcg(lambda x: apply_S(prob, x), lambda q: precond_solve(prob.pc, q), rhs,
              inner_tol, prob.cfg.max_inner, x0=x0)
    y = sol.x
    v, _ = recover_vp(prob, state, y, r)
    z_y, z_v = z_update(prob, y, v, state.w_y, state.w_v)
    By = apply_B(prob.op, y)
    p, w_y, w_v = dual_update(prob, By, y, v, z_y, z_v, state.p, state.w_y, state.w_v)
    new = AdmmState(y, v, z_y, z_v, p, w_y, w_v, state.iteration + 1, state.history)
    res = primal_residuals(prob, By, y, v, z_y, z_v)
    record = {
        "outer": new.iteration,
        "r_eq": res[0],
        "r_y": res[1],
        "r_u": res[2],
        "inner_iters": sol.iterations,
        "inner_tol": inner_tol,
        "inner_converged": sol.converged,
        "z_feasible": _within(z_y, prob.y_lo, prob.y_hi) and _within(z_v, prob.v_lo, prob.v_hi),
    }
    return new, record


def _within(x, lo, hi) -> bool:
    return bool(np.all(x >= lo) and np.all(x <= hi))


# --- driver ----------------------------------------------------------------


@dataclass
class SolveResult:
    y: np.ndarray
    u: np.ndarray
    z_y: np.ndarray
    z_u: np.ndarray
    p: np.ndarray
    w_y: np.ndarray
    w_u: np.ndarray
    admm_iters: int
    pcg_total: int
    misfit: float
    dual_inf: float
    residuals: tuple
    wall_seconds: float
    status: str  # "converged" | "max_outer"
    history: list

    @property
    def pcg_avg(self) -> float:
        return self.pcg_total / self.admm_iters if self.admm_iters else 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def solve(spec: ProblemSpec, cfg: AdmmConfig | None = None, *, ybar_fn: Callable = desired_state_fn,
          source: np.ndarray | None = None, on_iteration: Callable | None = None,
          prob: AdmmProblem | None = None) -> SolveResult:
    """Run ADMM from the zero point until the primal residuals drop below ``cfg.tol_primal``."""
    cfg = cfg or AdmmConfig()
    t0 = time.perf_counter()
    if prob is None:
        prob = setup(spec, cfg, ybar=desired_state(spec.grid, ybar_fn), source=source)
    state = AdmmState.zeros(prob.N)
    term = check_termination((0.0, 0.0, 0.0), cfg)
    inner_tol = term.inner_tol
    stalled = 0
    status = "max_outer"
    pcg_total = 0
    for _ in range(cfg.max_outer):
        state, rec = admm_step(prob, state, inner_tol)
        pcg_total += rec["inner_iters"]
        stalled = 0 if rec["inner_converged"] else stalled + 1
        for name, vec in state.vectors().items():
            if not np.all(np.isfinite(vec)):
                raise NumericalFailure(f"non-finite {name} at iteration {state.iteration}",
                                       {"history": state.history[-5:]})
        term = check_termination((rec["r_eq"], rec["r_y"], rec["r_u"]), cfg)
        rec["dual_inf"] = dual_infeasibility(prob, state)
        state.history.append(rec)
        log.debug("admm %(outer)d r_eq=%(r_eq).3e r_y=%(r_y).3e r_u=%(r_u).3e "
                  "dual=%(dual_inf).3e pcg=%(inner_iters)d tol=%(inner_tol).1e", rec)
        if on_iteration is not None:
            on_iteration(rec)
        if stalled >= 3:
            raise SolverFailure(
                f"PCG hit max_inner={cfg.max_inner} in {stalled} consecutive outer iterations",
                {"history": state.history[-5:]},
            )
        if term.converged:
            status = "converged"
            break
        inner_tol = term.inner_tol
    psi = prob.psi
    return SolveResult(
        y=state.y, u=state.v / psi, z_y=state.z_y, z_u=state.z_v / psi,
        p=state.p, w_y=state.w_y, w_u=state.w_v,
        admm_iters=state.iteration, pcg_total=pcg_total,
        misfit=l2_misfit(state.y, ybar_fn, prob.grid),
        dual_inf=state.history[-1]["dual_inf"] if state.history else 0.0,
        residuals=term.residuals,
        wall_seconds=time.perf_counter() - t0,
        status=status, history=state.history,
    )


def solve_equality_constrained(prob: AdmmProblem, tol: float = 1e-12, max_iter: int = 2000):
    """Box-free optimum ``(y, v, p)`` of the scaled problem, matrix-free.

    Eliminating ``v = psi g - B y`` leaves ``(J1 + B^T J2 B) y = J1 ybar + psi B^T J2 g``,
    solved by PCG with a circulant preconditioner.
    """
    op = prob.op
    lam = 1.0 + np.abs(prob.pc.lam_B) ** 2 * (prob.spec.gamma / prob.psi ** 2)
    pc = dataclasses.replace(prob.pc, lam_S=lam, lam_S_half=np.ascontiguousarray(lam[:, :, : op.n // 2 + 1]))
    psi_g = prob.psi * prob.g

    def A(x):
        return prob.J1 * x + apply_B(op, prob.J2 * apply_B(op, x), adjoint=True)

    rhs = prob.J1 * prob.ybar + apply_B(op, prob.J2 * psi_g, adjoint=True)
    sol = pcg(A, lambda q: precond_solve(pc, q), rhs, tol, max_iter)
    y = sol.x
    v = psi_g - apply_B(op, y)
    p = -prob.J2 * v
    return y, v, p
