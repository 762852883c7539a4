import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdeadmm import oracle
from fdeadmm.admm import (
    GOLDEN,
    AdmmConfig,
    AdmmState,
    NumericalFailure,
    SolverFailure,
    admm_step,
    apply_S,
    build_rhs,
    check_termination,
    clamp,
    dual_update,
    pcg,
    recover_vp,
    setup,
    solve,
    solve_equality_constrained,
    z_update,
)
from fdeadmm.problem import ParameterError, ProblemSpec

BOXED = dict(y_lo=-4.0, y_hi=4.0, u_lo=-350.0, u_hi=350.0)


def _random_state(N, rng):
    return AdmmState(*(rng.standard_normal(N) for _ in range(7)))


def _tiny_psi(prob):
    op = dataclasses.replace(prob.op, psi=1e-300)
    return dataclasses.replace(prob, op=op)


@pytest.mark.parametrize("kw", [dict(rho=GOLDEN), dict(rho=0.0), dict(rho=2.0), dict(delta=0.0),
                                dict(tol_primal=-1.0), dict(max_inner=0)])
def test_config_validation(kw):
    with pytest.raises(ParameterError):
        AdmmConfig(**kw)


def test_config_accepts_just_below_golden():
    assert AdmmConfig(rho=1.618).rho < GOLDEN


@pytest.mark.parametrize("n", [2, 4])
def test_apply_S_symmetric_positive(n):
    prob = setup(ProblemSpec(n=n), AdmmConfig(delta=2.0))
    rng = np.random.default_rng(n)
    for _ in range(100):
        x, y = rng.standard_normal(n ** 3), rng.standard_normal(n ** 3)
        Sx, Sy = apply_S(prob, x), apply_S(prob, y)
        assert Sx @ y == pytest.approx(x @ Sy, rel=1e-12)
        assert x @ Sx > 0


def test_apply_S_matches_dense():
    spec = ProblemSpec(n=2)
    cfg = AdmmConfig(delta=2.0)
    prob = setup(spec, cfg)
    S = oracle.dense_S(oracle.dense_constraint(spec), prob.J1, prob.J2, cfg.rho, cfg.delta)
    x = np.random.default_rng(0).standard_normal(8)
    assert np.allclose(apply_S(prob, x), S @ x, rtol=1e-12, atol=0)
    with pytest.raises(ParameterError):
        apply_S(prob, x[:-1])


def test_apply_S_without_constraint_is_diagonal():
    prob = _tiny_psi(setup(ProblemSpec(n=3), AdmmConfig(delta=0.5, rho=1.2)))
    x = np.random.default_rng(1).standard_normal(27)
    assert np.allclose(apply_S(prob, x), 1.2 * (prob.J1 + 2.0) * x, rtol=1e-14)


def test_build_rhs_zero_state_unit_step():
    prob = setup(ProblemSpec(n=3), AdmmConfig(rho=1.0))
    rhs, r = build_rhs(prob, AdmmState.zeros(27))
    assert np.allclose(rhs, prob.J1 * prob.ybar, rtol=1e-15)
    assert not np.any(r)


@pytest.mark.parametrize("n", [2, 3])
def test_rhs_and_recovery_solve_the_block_system(n):
    spec = ProblemSpec(n=n, **BOXED)
    cfg = AdmmConfig(delta=0.7, rho=1.3)
    prob = setup(spec, cfg)
    dense = oracle.DenseProblem.from_spec(spec, cfg.delta, cfg.rho)
    state = _random_state(n ** 3, np.random.default_rng(n))
    rhs, r = build_rhs(prob, state)
    S = oracle.dense_S(dense.B, dense.J1, dense.J2, cfg.rho, cfg.delta)
    y = np.linalg.solve(S, rhs)
    v, p = recover_vp(prob, state, y, r)
    K, f = oracle.dense_block_system(dense, state.vectors())
    res = K @ np.concatenate([y, v, p]) - f
    assert np.max(np.abs(res)) <= 1e-10 * max(1.0, np.max(np.abs(f)))


def test_recovery_with_zero_target_and_pcg():
    n = 2
    spec = ProblemSpec(n=n)
    cfg = AdmmConfig(delta=2.0)
    prob = setup(spec, cfg, ybar=np.zeros(8))
    dense = oracle.DenseProblem.from_spec(spec, cfg.delta, cfg.rho, ybar=np.zeros(8))
    state = AdmmState.zeros(8)
    state.z_y = np.random.default_rng(3).standard_normal(8)
    rhs, r = build_rhs(prob, state)
    tol = 1e-12
    sol = pcg(lambda x: apply_S(prob, x), None, rhs, tol, 100)
    v, p = recover_vp(prob, state, sol.x, r)
    K, f = oracle.dense_block_system(dense, state.vectors())
    res = K @ np.concatenate([sol.x, v, p]) - f
    assert np.max(np.abs(res)) <= 10 * tol * np.max(np.abs(f))


def test_recovery_without_constraint_is_zero():
    prob = _tiny_psi(setup(ProblemSpec(n=2), AdmmConfig()))
    state = AdmmState.zeros(8)
    state.w_y = np.ones(8)
    rhs, r = build_rhs(prob, state)
    v, p = recover_vp(prob, state, np.ones(8), r)
    assert np.max(np.abs(p)) < 1e-200 and np.max(np.abs(v)) < 1e-200


def test_recovery_unit_step_drops_previous_multiplier():
    prob = setup(ProblemSpec(n=2), AdmmConfig(rho=1.0, delta=0.3))
    rng = np.random.default_rng(4)
    state = _random_state(8, rng)
    y = rng.standard_normal(8)
    rhs, r = build_rhs(prob, state)
    v, p = recover_vp(prob, state, y, r)
    v_ref = prob.a2_inv * (-p - state.w_v + state.z_v / 0.3)
    assert np.allclose(v, v_ref, rtol=1e-14)


# --- pcg -------------------------------------------------------------------------


def test_pcg_identity():
    b = np.array([1.0, -2.0, 3.0])
    sol = pcg(lambda x: x, None, b, 1e-12, 10)
    assert sol.iterations == 1 and sol.converged and np.allclose(sol.x, b)


def test_pcg_exact_preconditioner():
    d = np.array([1.0, 2.0, 4.0])
    sol = pcg(lambda x: d * x, lambda r: r / d, np.ones(3), 1e-12, 10)
    assert sol.iterations == 1 and np.allclose(sol.x, [1.0, 0.5, 0.25])


def test_pcg_dense_spd():
    rng = np.random.default_rng(5)
    M = rng.standard_normal((5, 5))
    A = M @ M.T + 5 * np.eye(5)
    b = rng.standard_normal(5)
    tol = 1e-10
    sol = pcg(lambda x: A @ x, None, b, tol, 50)
    ref = np.linalg.solve(A, b)
    assert sol.converged
    assert np.linalg.norm(sol.x - ref) <= tol * np.linalg.cond(A) * np.linalg.norm(ref) * 10


def test_pcg_zero_rhs_and_failures():
    sol = pcg(lambda x: x, None, np.zeros(4), 1e-8, 10)
    assert sol.iterations == 0 and not np.any(sol.x)
    with pytest.raises(NumericalFailure):
        pcg(lambda x: x, None, np.array([1.0, np.nan]), 1e-8, 10)
    with pytest.raises(NumericalFailure):
        pcg(lambda x: x * np.inf, None, np.ones(2), 1e-8, 10)
    A = np.diag(np.arange(1.0, 51.0))
    sol = pcg(lambda x: A @ x, None, np.ones(50), 1e-14, 3)
    assert sol.iterations == 3 and not sol.converged


def test_pcg_deterministic():
    prob = setup(ProblemSpec(n=6), AdmmConfig())
    b = np.random.default_rng(6).standard_normal(216)
    a = pcg(lambda x: apply_S(prob, x), None, b, 1e-8, 100)
    c = pcg(lambda x: apply_S(prob, x), None, b, 1e-8, 100)
    assert np.array_equal(a.x, c.x) and a.iterations == c.iterations


# --- projections, duals, termination ---------------------------------------------


def test_clamp_examples():
    assert np.array_equal(clamp(np.array([-5.0, 0.0, 5.0]), -1.0, 1.0), [-1.0, 0.0, 1.0])
    x = np.array([-1e300, 3.0, 1e300])
    assert np.array_equal(clamp(x, -math.inf, math.inf), x)
    assert np.array_equal(clamp(np.array([1.0]), 1.0, 2.0), [1.0])


def test_z_update_unbounded_is_exact():
    prob = setup(ProblemSpec(n=2), AdmmConfig(delta=0.3))
    rng = np.random.default_rng(7)
    y, v, wy, wv = (rng.standard_normal(8) for _ in range(4))
    zy, zv = z_update(prob, y, v, wy, wv)
    assert np.array_equal(zy, y + 0.3 * wy) and np.array_equal(zv, v + 0.3 * wv)


def test_z_update_matches_scalar_grid_search():
    rng = np.random.default_rng(8)
    for _ in range(100):
        y, w = rng.normal(0, 3, 2)
        delta = rng.uniform(0.1, 5)
        lo, hi = np.sort(rng.normal(0, 2, 2))
        z = clamp(np.array([y + delta * w]), lo, hi)[0]
        grid = np.linspace(lo, hi, 20001)
        obj = w * (y - grid) + (y - grid) ** 2 / (2 * delta)
        assert w * (y - z) + (y - z) ** 2 / (2 * delta) <= obj.min() + 1e-9


def test_dual_update_examples():
    prob = setup(ProblemSpec(n=2), AdmmConfig(rho=1.0, delta=1.0))
    rng = np.random.default_rng(9)
    y, v, p, wy, wv = (rng.standard_normal(8) for _ in range(5))
    from fdeadmm.structured import apply_B

    By = apply_B(prob.op, y)
    # feasible: v = -By, copies equal primal vectors
    p1, wy1, wv1 = dual_update(prob, By, y, -By, y, -By, p, wy, wv)
    assert np.allclose(p1, p, atol=1e-15) and np.array_equal(wy1, wy) and np.array_equal(wv1, wv)
    p2, _, _ = dual_update(prob, By, y, v, y, v, np.zeros(8), wy, wv)
    assert np.allclose(p2, By + v)


def test_check_termination_examples():
    cfg = AdmmConfig()
    t = check_termination((2e-3, 5e-4, 1e-4), cfg)
    assert not t.converged and t.inner_tol == pytest.approx(5e-6)
    t = check_termination((0.0, 0.0, 0.0), cfg)
    assert t.converged and t.inner_tol == pytest.approx(5e-6)
    t = check_termination((2e-1, 3e-1, 4e-1), cfg)
    assert t.inner_tol == pytest.approx(1e-2)


@settings(max_examples=200)
@given(st.tuples(*(st.floats(0, 1e3) for _ in range(3))))
def test_inner_tol_bounds(res):
    cfg = AdmmConfig()
    t = check_termination(res, cfg)
    assert t.inner_tol >= 5e-6 * (1 - 1e-15)
    if max(res) >= cfg.inner_tol_floor:
        assert t.inner_tol <= cfg.inner_tol_factor * max(res) * (1 + 1e-15)


# --- full iterations --------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_five_steps_match_dense(n):
    spec = ProblemSpec(n=n, **BOXED)
    cfg = AdmmConfig(delta=2.0)
    prob = setup(spec, cfg)
    dense = oracle.DenseProblem.from_spec(spec, cfg.delta, cfg.rho)
    state = _random_state(n ** 3, np.random.default_rng(10 + n))
    ref = state.vectors()
    for _ in range(5):
        state, rec = admm_step(prob, state, 1e-14)
        ref = oracle.dense_admm_step(dense, ref)
        for k, v in ref.items():
            assert np.max(np.abs(state.vectors()[k] - v)) <= 1e-10, k
        assert rec["z_feasible"]


def test_dense_step_is_deterministic():
    spec = ProblemSpec(n=2, **BOXED)
    dense = oracle.DenseProblem.from_spec(spec, 2.0, 1.618)
    s0 = AdmmState.zeros(8).vectors()
    a = oracle.dense_admm_step(dense, oracle.dense_admm_step(dense, s0))
    b = oracle.dense_admm_step(dense, oracle.dense_admm_step(dense, s0))
    for k in a:
        assert np.array_equal(a[k], b[k])


def test_dense_step_decouples_without_constraint():
    spec = ProblemSpec(n=2)
    dense = oracle.DenseProblem.from_spec(spec, 0.5, 1.0)
    dense = dataclasses.replace(dense, B=np.zeros((8, 8)))
    rng = np.random.default_rng(11)
    s = {k: rng.standard_normal(8) for k in ("y", "v", "z_y", "z_v", "p", "w_y", "w_v")}
    out = oracle.dense_admm_step(dense, s)
    y = (dense.J1 * dense.ybar - s["w_y"] + s["z_y"] / 0.5) / (dense.J1 + 1 / 0.5)
    assert np.allclose(out["y"], y, rtol=1e-12)


def test_unbounded_residual_declines():
    hist = []
    solve(ProblemSpec(n=8), AdmmConfig(delta=2.0, tol_primal=1e-300, max_outer=200),
          on_iteration=hist.append)
    r = [max(h["r_eq"], h["r_y"], h["r_u"]) for h in hist]
    assert len(r) == 200 and r[199] <= r[4] / 10


def test_solve_result_contract():
    res = solve(ProblemSpec(n=4, **BOXED), AdmmConfig(delta=2.0))
    assert res.converged and max(res.residuals) <= 1e-4
    assert all(h["z_feasible"] for h in res.history)
    assert np.all(res.z_y >= -4) and np.all(res.z_y <= 4)
    assert np.all(np.abs(res.z_u) <= 350)
    assert res.pcg_avg == pytest.approx(res.pcg_total / res.admm_iters)
    for vec in (res.y, res.u, res.p, res.w_y, res.w_u):
        assert np.all(np.isfinite(vec))


def test_solve_hits_iteration_cap():
    res = solve(ProblemSpec(n=4), AdmmConfig(max_outer=3))
    assert res.status == "max_outer" and res.admm_iters == 3


def test_pcg_stagnation_raises():
    with pytest.raises(SolverFailure) as exc:
        solve(ProblemSpec(n=6), AdmmConfig(max_inner=1))
    assert len(exc.value.diagnostics["history"]) == 3


def test_nonfinite_target_raises():
    spec = ProblemSpec(n=2)
    with pytest.raises(NumericalFailure):
        solve(spec, AdmmConfig(), ybar_fn=lambda x1, x2, t: np.full_like(x1, np.nan))


@pytest.mark.parametrize("n", [2, 4])
def test_equality_constrained_solution(n):
    spec = ProblemSpec(n=n)
    cfg = AdmmConfig()
    y, v, p = solve_equality_constrained(setup(spec, cfg), tol=1e-13)
    exact = oracle.solve_unconstrained_kkt(oracle.DenseProblem.from_spec(spec, cfg.delta, cfg.rho))
    assert np.allclose(y, exact["y"], rtol=1e-8, atol=1e-9)
    assert np.allclose(p, exact["p"], rtol=1e-6, atol=1e-9)
