import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from spfp.core import (DtPolicy, Integrator, ProblemSpec, SchemeConfig, constant_diffusion,
                       make_uniform_grid, total_mass)
from spfp.errors import ConvergenceError, InvalidArgumentError, StabilityError
from spfp.flux import SpatialOperator
from spfp.models import LinearDrift, make_preset, prototype_drift, prototype_steady
from spfp.stepper import (STEPPERS, assemble_tridiagonal, cfl_dt_explicit, cfl_dt_semi_implicit,
                          choose_dt, integrate, operator_bands, solve, solve_tridiagonal,
                          step_explicit_euler, step_fully_implicit, step_imex2, step_rk4,
                          step_semi_implicit, step_ssp2, thomas_solve)


def _diffusion_op(n=16, d=0.5, a=0.0, b=1.0):
    g = make_uniform_grid(a, b, n)
    prob = ProblemSpec(LinearDrift(0.0, extra=lambda w: -w), constant_diffusion(d))
    return SpatialOperator(prob, g, "SP_CC", "GAUSS6"), g


def _constant_drift_op(c, n=10, d=0.01):
    g = make_uniform_grid(0.0, 1.0, n)
    prob = ProblemSpec(LinearDrift(0.0, extra=lambda w: c - w), constant_diffusion(d))
    return SpatialOperator(prob, g, "SP_CC", "GAUSS6"), g


def _dense_matrix(op, f):
    n = op.grid.n_points
    return np.column_stack([op.rhs(e, op.weights(f)) for e in np.eye(n)])


# ---------------------------------------------------------------------------
# step-size bounds

def test_explicit_bound_pure_diffusion():
    op, g = _diffusion_op(d=0.3)
    assert cfl_dt_explicit(op, np.ones(g.n_points)) == pytest.approx(g.dw ** 2 / 0.6, rel=1e-15)


def test_example_one_parabolic_step():
    # the tabulated runs use dt = dw^2/(2 sigma^2), sigma^2 = 0.2; at the degenerate
    # edges next to w = +-1 the positivity bound is tighter than that
    p = make_preset("OPINION", n_cells=40)
    op = SpatialOperator(p.problem, p.grid, "SP_CC", "GAUSS6")
    cfg = SchemeConfig(dt_policy=DtPolicy("power", scale=1 / 0.4, power=2))
    assert choose_dt(op, p.initial, cfg) == pytest.approx(0.00625, rel=1e-15)
    assert cfl_dt_explicit(op, p.initial) < 0.00625


def test_explicit_bound_scaling():
    # drift dominated: bound ~ dw/(2M) doubles; diffusion dominated: ~ dw^2/(2D) quadruples
    op1, _ = _constant_drift_op(1.0, n=20, d=1e-9)
    op2, _ = _constant_drift_op(1.0, n=10, d=1e-9)
    f = np.ones(21)
    r = cfl_dt_explicit(op2, np.ones(11)) / cfl_dt_explicit(op1, f)
    assert r == pytest.approx(2.0, rel=1e-6)
    op1, _ = _diffusion_op(n=20)
    op2, _ = _diffusion_op(n=10)
    assert cfl_dt_explicit(op2, np.ones(11)) / cfl_dt_explicit(op1, f) == pytest.approx(4.0)


def test_semi_implicit_bound():
    op, g = _constant_drift_op(1.0, n=10)
    assert cfl_dt_semi_implicit(op, np.ones(g.n_points)) == pytest.approx(0.05 * 0.99, rel=1e-12)
    op, g = _diffusion_op()
    assert cfl_dt_semi_implicit(op, np.ones(g.n_points)) == np.inf
    assert cfl_dt_semi_implicit(op, np.ones(g.n_points), dt_max=0.3) == 0.3


def test_semi_implicit_example_step():
    p = make_preset("OPINION", n_cells=40)
    op = SpatialOperator(p.problem, p.grid, "SP_CC", "GAUSS6")
    cfg = SchemeConfig(dt_policy=DtPolicy("power", scale=1 / 0.4, power=1))
    assert choose_dt(op, p.initial, cfg) == pytest.approx(0.125, rel=1e-15)
    # the M-matrix property survives this step even though it exceeds dw/(2M)
    f, rep = step_semi_implicit(op, p.initial, 0.125)
    assert rep.min_value >= 0


def test_choose_dt_policies():
    op, g = _constant_drift_op(1.0)
    f = np.ones(g.n_points)
    assert choose_dt(op, f, SchemeConfig(dt_policy=DtPolicy.fixed(0.01))) == 0.01
    assert choose_dt(op, f, SchemeConfig(dt_policy=DtPolicy("power", scale=2.0, power=2))) == \
        pytest.approx(2.0 * g.dw ** 2)
    cfg = SchemeConfig(dt_policy=DtPolicy("cfl_semi_implicit"), t_final=0.1)
    assert choose_dt(op, f, cfg) == pytest.approx(min(0.01, 0.99 * g.dw / 2))


# ---------------------------------------------------------------------------
# linear algebra

def test_solve_tridiagonal_against_dense(rng):
    n = 30
    lo, up = rng.random(n), rng.random(n)
    d = 3 + rng.random(n)
    rhs = rng.random(n)
    A = np.diag(d) + np.diag(lo[1:], -1) + np.diag(up[:-1], 1)
    ref = np.linalg.solve(A, rhs)
    assert np.allclose(solve_tridiagonal(lo, d, up, rhs), ref, rtol=1e-13)
    assert np.allclose(thomas_solve(lo, d, up, rhs), ref, rtol=1e-13)


def test_thomas_batched(rng):
    n, m = 12, 4
    lo, up = rng.random((n, m)), rng.random((n, m))
    d = 3 + rng.random((n, m))
    rhs = rng.random((n, m))
    x = thomas_solve(lo, d, up, rhs)
    for j in range(m):
        assert np.allclose(x[:, j], thomas_solve(lo[:, j], d[:, j], up[:, j], rhs[:, j]))


def test_operator_bands_match_dense_matrix(rng):
    p = make_preset("OPINION", n_cells=12)
    op = SpatialOperator(p.problem, p.grid, "SP_CC", "GAUSS6")
    w = op.weights(p.initial)
    lo, d, up = operator_bands(w, p.grid.n_points, p.grid.dw)
    M = np.diag(d) + np.diag(lo[1:], -1) + np.diag(up[:-1], 1)
    assert np.allclose(M, _dense_matrix(op, p.initial), rtol=1e-13, atol=1e-12)


def test_assembly_is_m_matrix_and_raises_when_strict():
    op, g = _constant_drift_op(5.0, n=10, d=1e-4)
    f = np.ones(g.n_points)
    w = op.weights(f)
    sys = assemble_tridiagonal(w, f, cfl_dt_semi_implicit(op, f), strict=True)
    assert np.all(sys.row_dominant)
    with pytest.raises(StabilityError):
        assemble_tridiagonal(w, f, 100.0, strict=True)


# ---------------------------------------------------------------------------
# steps

def test_semi_implicit_pure_diffusion_against_dense_solve(rng):
    op, g = _diffusion_op(n=32)
    f = rng.random(g.n_points)
    dt = 0.01
    A = np.eye(g.n_points) - dt * _dense_matrix(op, f)
    out, rep = step_semi_implicit(op, f, dt)
    assert np.allclose(out, np.linalg.solve(A, f), rtol=1e-12, atol=1e-14)
    assert rep.positivity_ok


def test_rk4_matches_matrix_exponential(rng):
    op, g = _diffusion_op(n=24)
    f = rng.random(g.n_points)
    L = _dense_matrix(op, f)
    errs = []
    for dt in (2e-3, 1e-3):
        out, _ = step_rk4(op, f, dt)
        errs.append(np.max(np.abs(out - expm(dt * L) @ f)))
    assert errs[0] / errs[1] == pytest.approx(32.0, rel=0.15)


def _exact_weight_prototype(n=30):
    g = make_uniform_grid(-1.0, 1.0, n)
    prob = ProblemSpec(prototype_drift(0.2), constant_diffusion(0.1))
    fi = prototype_steady(g, 0.2, 0.1)
    return SpatialOperator(prob, g, "SP_CC_EXACT", steady_state=fi), g, fi


@pytest.mark.parametrize("integrator", list(Integrator))
def test_steady_state_is_fixed_point(integrator):
    op, g, fi = _exact_weight_prototype()
    dt = 0.5 * cfl_dt_explicit(op, fi)
    out, _ = STEPPERS[integrator](op, fi, dt)
    assert np.max(np.abs(out - fi)) < 1e-12


def test_euler_fixed_point_bitwise():
    op, g, fi = _exact_weight_prototype()
    out, _ = step_explicit_euler(op, fi, 1e-3)
    # the residual flux is below roundoff of f itself
    assert np.max(np.abs(out - fi)) <= 4 * np.finfo(float).eps * np.max(fi)


@pytest.mark.parametrize("integrator", list(Integrator))
@pytest.mark.parametrize("name", ["OPINION", "WEALTH", "SWARM1D"])
def test_mass_per_step(integrator, name, rng):
    p = make_preset(name, n_cells=30)
    op = SpatialOperator(p.problem, p.grid, "SP_CC", "GAUSS6")
    f = p.initial
    out, rep = STEPPERS[integrator](op, f, cfl_dt_semi_implicit(op, f, dt_max=0.05) * 0.5)
    assert rep.mass_drift < 1e-13


def test_imex2_is_second_order():
    # linear constant-coefficient drift-diffusion, reference from the matrix exponential
    g = make_uniform_grid(-1.0, 1.0, 20)
    prob = ProblemSpec(LinearDrift(0.0, extra=lambda w: 0.5 - w), constant_diffusion(0.2))
    op = SpatialOperator(prob, g, "SP_CC", "GAUSS6")
    f0 = np.exp(-10 * (g.nodes + 0.3) ** 2)
    T = 0.2
    ref = expm(T * _dense_matrix(op, f0)) @ f0
    errs = []
    for n in (10, 20, 40):
        r = integrate(op, f0, T, "IMEX2", dt=T / n)
        errs.append(np.max(np.abs(r.f - ref)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders > 1.9) & (orders < 2.1))


def test_ssp2_positive_at_euler_bound(rng):
    p = make_preset("SWARM1D", n_cells=20, D=0.01)
    op = SpatialOperator(p.problem, p.grid, "SP_CC", "GAUSS6")
    f = rng.random(p.grid.n_points) * (rng.random(p.grid.n_points) > 0.5)
    for _ in range(30):
        f, rep = step_ssp2(op, f, cfl_dt_explicit(op, f))
        assert rep.min_value >= 0


def test_fully_implicit_linear_equals_semi_implicit(rng):
    g = make_uniform_grid(-1.0, 1.0, 20)
    prob = ProblemSpec(prototype_drift(0.1), constant_diffusion(0.05))
    op = SpatialOperator(prob, g, "SP_CC", "GAUSS6")
    f = rng.random(g.n_points)
    hist = []
    a, rep = step_fully_implicit(op, f, 0.05, history=hist)
    b, _ = step_semi_implicit(op, f, 0.05)
    assert rep.solver_iterations == 1 and len(hist) == 1
    assert np.allclose(a, b, rtol=1e-14, atol=1e-15)


def test_fully_implicit_opinion_contracts_and_keeps_mass():
    p = make_preset("OPINION", n_cells=40)
    op = SpatialOperator(p.problem, p.grid, "SP_CC", "GAUSS6")
    f = p.initial
    dt = cfl_dt_semi_implicit(op, f)
    hist = []
    out, rep = step_fully_implicit(op, f, dt, history=hist)
    assert len(hist) >= 3
    assert hist[2] < hist[1] < hist[0]
    assert abs(total_mass(out, p.grid) - total_mass(f, p.grid)) < 1e-13


def test_fully_implicit_reports_stall():
    p = make_preset("OPINION", n_cells=40)
    op = SpatialOperator(p.problem, p.grid, "SP_CC", "GAUSS6")
    with pytest.raises(ConvergenceError) as exc:
        step_fully_implicit(op, p.initial, 0.05, max_iter=2)
    assert exc.value.iterations == 2 and exc.value.last_distance > 0


def test_dt_must_be_positive():
    op, g = _diffusion_op()
    for step in (step_explicit_euler, step_ssp2, step_rk4, step_semi_implicit, step_imex2,
                 step_fully_implicit):
        with pytest.raises(InvalidArgumentError):
            step(op, np.ones(g.n_points), 0.0)


# ---------------------------------------------------------------------------
# driver

def test_integrate_lands_on_output_times():
    p = make_preset("PROTOTYPE", n_cells=20)
    op = SpatialOperator(p.problem, p.grid, "SP_CC", "GAUSS6")
    seen = []
    r = integrate(op, p.initial, 0.35, "SSP2", dt=0.01, output_times=[0.1, 0.123],
                  callback=lambda n, t, f, rep: seen.append(t))
    assert r.t == 0.35 and sorted(r.snapshots) == [0.1, 0.123, 0.35]
    assert 0.123 in seen and seen[-1] == 0.35


def test_bulk_euler_path_matches_stepping():
    p = make_preset("OPINION", n_cells=40)
    op = SpatialOperator(p.problem, p.grid, "SP_CC", "GAUSS6")
    dt = 0.9 * cfl_dt_explicit(op, p.initial)
    fast = integrate(op, p.initial, 0.05, "EULER", dt=dt)
    slow = integrate(op, p.initial, 0.05, "EULER", dt=dt, callback=lambda *a: None)
    assert fast.steps == slow.steps
    assert np.allclose(fast.f, slow.f, rtol=1e-12, atol=1e-14)


def test_solve_with_config():
    p = make_preset("PROTOTYPE", n_cells=20)
    cfg = SchemeConfig("SP_CC", "GAUSS6", "SEMI_IMPLICIT_1", DtPolicy("cfl_semi_implicit"), 0.5)
    r = solve(p.problem, p.grid, p.initial, cfg)
    assert r.t == 0.5 and r.min_value >= 0 and r.max_mass_drift < 1e-13


@given(st.integers(3, 40), st.floats(0.001, 1.0), st.floats(-0.9, 0.9), st.integers(0, 2**31))
def test_semi_implicit_positivity_property(n, d, u, seed):
    g = make_uniform_grid(-1.0, 1.0, n)
    op = SpatialOperator(ProblemSpec(prototype_drift(u), constant_diffusion(d)), g)
    f = np.random.default_rng(seed).random(g.n_points)
    out, rep = step_semi_implicit(op, f, cfl_dt_semi_implicit(op, f))
    assert rep.min_value >= 0


@given(st.integers(3, 40), st.floats(0.001, 1.0), st.floats(-0.9, 0.9), st.integers(0, 2**31))
def test_explicit_positivity_property(n, d, u, seed):
    g = make_uniform_grid(-1.0, 1.0, n)
    op = SpatialOperator(ProblemSpec(prototype_drift(u), constant_diffusion(d)), g)
    f = np.random.default_rng(seed).random(g.n_points)
    out, rep = step_explicit_euler(op, f, cfl_dt_explicit(op, f))
    assert rep.min_value >= 0
