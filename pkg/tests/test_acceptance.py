"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict that is printed in the
terminal summary (and to stdout when run with ``-s``).
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from spfp.core import DtPolicy, ProblemSpec, constant_diffusion, total_mass
from spfp.diagnostics import (cc_dissipation, count_local_extrema, entropy_rate,
                              free_energy_rate, gradient_flow_dissipation, relative_entropy)
from spfp.experiments import convergence_study, positivity_suite, steady_state_errors
from spfp.flux import SpatialOperator
from spfp.models import GradientFlowDrift, make_preset
from spfp.quadrature import EXACTNESS, RuleKind, get_rule, integrate_on_cell
from spfp.solver2d import STEPPERS_2D, make_square_grid, mass_2d, run_phase_transition
from spfp.stepper import cfl_dt_explicit, cfl_dt_semi_implicit, get_stepper, integrate

ALL_RULES = [r.value for r in RuleKind]
#: Delta w^2 / (2 sigma^2) on the 640-cell reference grid has scale 1/(2 sigma^2) = 2.5
PARABOLIC = DtPolicy("power", scale=2.5, power=2.0)
HYPERBOLIC = DtPolicy("power", scale=2.5, power=1.0)


def record(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def test_c01_steady_state_preserved():
    t0 = time.perf_counter()
    p = make_preset("OPINION", n_cells=80, u=0.0)
    op = SpatialOperator(p.problem, p.grid, "SP_CC_EXACT", "GAUSS6", p.steady_state,
                         p.log_steady_state)
    step = get_stepper("SEMI_IMPLICIT_1")
    f = p.steady_state.copy()
    dt = cfl_dt_semi_implicit(op, f)
    for _ in range(10_000):
        f, _rep = step(op, f, dt)
    err = float(np.max(np.abs(f - p.steady_state)))
    elapsed = time.perf_counter() - t0
    ok = err < 1e-12 and elapsed < 5.0
    record(1, ok, f"Linf drift {err:.2e} after 1e4 semi-implicit steps, {elapsed:.1f} s")
    assert ok


def _rates_ok(rates_t1, rates_t15):
    ranges15 = {"MIDPOINT": (1.8, 2.2), "OPEN_NC4": (3.5, 4.3)}
    ok = all(1.7 <= r <= 2.2 for r in rates_t1.values())
    for rule, (lo, hi) in ranges15.items():
        ok &= lo <= rates_t15[rule] <= hi
    ok &= rates_t15["GAUSS6"] >= 6.0
    return ok


def _fmt_rates(rates):
    return " ".join(f"{k}={v:.2f}" for k, v in rates.items())


def test_c02_explicit_convergence_table():
    t0 = time.perf_counter()
    table = convergence_study("OPINION", [40, 80], 640, [1.0, 15.0], ALL_RULES,
                              integrator="EULER", dt_policy=PARABOLIC, dt_grid="reference")
    elapsed = time.perf_counter() - t0
    r1 = {q: table.rates[(q, 1.0)][0] for q in ALL_RULES}
    r15 = {q: table.rates[(q, 15.0)][0] for q in ALL_RULES}
    ok = _rates_ok(r1, r15) and elapsed < 120.0
    record(2, ok, f"t=1 [{_fmt_rates(r1)}] t=15 [{_fmt_rates(r15)}] {elapsed:.0f} s")
    assert ok


def test_c03_semi_implicit_convergence_table():
    t0 = time.perf_counter()
    out = {}
    for integ in ("SEMI_IMPLICIT_1", "IMEX2"):
        out[integ] = convergence_study("OPINION", [40, 80], 640, [1.0, 15.0], ALL_RULES,
                                       integrator=integ, dt_policy=HYPERBOLIC)
    elapsed = time.perf_counter() - t0
    si1 = out["SEMI_IMPLICIT_1"].rates
    imex = out["IMEX2"].rates
    ok = all(0.8 <= si1[(q, 1.0)][0] <= 1.3 for q in ALL_RULES)
    ok &= all(1.8 <= imex[(q, 1.0)][0] <= 2.3 for q in ALL_RULES)
    late = {}
    for name, rates in (("SI1", si1), ("IMEX2", imex)):
        r15 = {q: rates[(q, 15.0)][0] for q in ALL_RULES}
        late[name] = r15
        ok &= 1.8 <= r15["MIDPOINT"] <= 2.2 and 3.5 <= r15["OPEN_NC4"] <= 4.3
        ok &= r15["GAUSS6"] >= 6.0
    ok &= elapsed < 120.0
    record(3, ok, f"t=1 SI1 {si1[('GAUSS6', 1.0)][0]:.2f} IMEX2 {imex[('GAUSS6', 1.0)][0]:.2f};"
                  f" t=15 SI1 [{_fmt_rates(late['SI1'])}] IMEX2 [{_fmt_rates(late['IMEX2'])}]"
                  f" {elapsed:.0f} s")
    assert ok


def test_c04_wealth_convergence_table():
    t0 = time.perf_counter()
    table = convergence_study("WEALTH", [50, 100], 1600, [20.0], ["MIDPOINT", "GAUSS6"],
                              integrator="SEMI_IMPLICIT_1", dt_policy=HYPERBOLIC,
                              params={"sigma2": 0.2, "L": 10.0, "mean_closure": "conserved"})
    elapsed = time.perf_counter() - t0
    mid = table.rates[("MIDPOINT", 20.0)][0]
    gauss = table.rates[("GAUSS6", 20.0)][0]
    ok = 1.8 <= mid <= 2.2 and gauss >= 6.0 and elapsed < 180.0
    record(4, ok, f"t=20 MIDPOINT={mid:.2f} GAUSS6={gauss:.2f} {elapsed:.0f} s")
    assert ok


def test_c05_positivity_suite():
    explicit = positivity_suite(seed=2024, trials=1000, scheme="explicit")
    implicit = positivity_suite(seed=2025, trials=1000, scheme="semi_implicit")
    bad_e = sum(not t.ok for t in explicit)
    bad_i = sum(not t.ok for t in implicit)
    # negative control: central differences on a drift-dominated coarse mesh
    p = make_preset("PROTOTYPE", u=0.5, D=0.001, n_cells=10)
    ref = SpatialOperator(p.problem, p.grid, "SP_CC", "GAUSS6")
    central = SpatialOperator(p.problem, p.grid, "CENTRAL", "GAUSS6")
    dt = 0.2 * cfl_dt_explicit(ref, p.initial)
    c = integrate(central, p.initial, 1.0, "EULER", dt=dt)
    s = integrate(ref, p.initial, 1.0, "EULER", dt=dt)
    ok = bad_e == 0 and bad_i == 0 and c.min_value < 0 and s.min_value >= 0
    record(5, ok, f"explicit {bad_e}/1000 and semi-implicit {bad_i}/1000 negative;"
                  f" CENTRAL control min {c.min_value:.2e}, SP_CC min {s.min_value:.2e}")
    assert ok


INTEGRATORS_1D = ["EULER", "RK4", "SSP2", "SEMI_IMPLICIT_1", "IMEX2", "FULLY_IMPLICIT"]
EXPLICIT = {"EULER", "RK4", "SSP2"}


def test_c06_mass_conservation():
    worst = 0.0
    where = ""
    for name in ("OPINION", "PROTOTYPE", "SWARM1D", "WEALTH"):
        p = make_preset(name, n_cells=40)
        op = SpatialOperator(p.problem, p.grid, "SP_CC", "GAUSS6")
        for integ in INTEGRATORS_1D:
            step = get_stepper(integ)
            f = p.initial.copy()
            m0 = total_mass(f, p.grid)
            pick = cfl_dt_explicit if integ in EXPLICIT else cfl_dt_semi_implicit
            for _ in range(1000):
                f, _rep = step(op, f, pick(op, f, 0.99))
            d = abs(total_mass(f, p.grid) - m0) / m0
            if d > worst:
                worst, where = d, f"{name}/{integ}"
    p2 = make_preset("SWARM2D", n_cells=20)
    g2 = p2.grid
    for integ, step in sorted(STEPPERS_2D.items()):
        f = p2.initial.copy()
        m0 = mass_2d(f, g2)
        dt = 1e-3 if integ != "SEMI_IMPLICIT_1" else g2.dw / 3.0
        for _ in range(1000):
            f = step(p2.operator, f, dt)
        d = abs(mass_2d(f, g2) - m0) / m0
        if d > worst:
            worst, where = d, f"SWARM2D/{integ}"
    ok = worst < 1e-12
    record(6, ok, f"worst relative mass drift over 1e3 steps {worst:.2e} ({where})")
    assert ok


def test_c07_entropy_identities():
    rng = np.random.default_rng(7)
    # relative entropy identity, prototype with exact weights
    p = make_preset("PROTOTYPE", n_cells=40, u=0.3, D=0.2)
    op = SpatialOperator(p.problem, p.grid, "SP_CC_EXACT", "GAUSS6", p.steady_state,
                         p.log_steady_state)
    res_h = 0.0
    for _ in range(10):
        f = 0.1 + rng.random(p.grid.n_points)
        f /= total_mass(f, p.grid)
        dis = cc_dissipation(f, p.steady_state, p.grid, op.weights(f))
        rate = entropy_rate(f, p.steady_state, op.rhs(f), p.grid)
        res_h = max(res_h, abs(rate + dis) / dis)
    # free-energy identity, entropic fluxes with constant diffusion
    d = 0.3
    U = lambda r: 0.5 * np.asarray(r) ** 2
    Phi = lambda w: np.asarray(w) ** 4 / 4 - np.asarray(w) ** 2 / 2
    problem = ProblemSpec(GradientFlowDrift(lambda r: np.asarray(r),
                                            lambda w: np.asarray(w) ** 3 - np.asarray(w)),
                          constant_diffusion(d))
    g = make_preset("SWARM1D", n_cells=40, L=2.0).grid
    ea = SpatialOperator(problem, g, "SP_EA", "GAUSS6")
    res_e = 0.0
    for _ in range(10):
        f = 0.1 + rng.random(g.n_points)
        f /= total_mass(f, g)
        dis = gradient_flow_dissipation(f, g, U, d, Phi)
        res_e = max(res_e, abs(free_energy_rate(f, ea.rhs(f), g, U, d, Phi) + dis) / dis)
    # monotone decay along full runs on coarse grids
    worst_up = 0.0
    for n in (10, 20):
        q = make_preset("OPINION", n_cells=n, u=0.0)
        o = SpatialOperator(q.problem, q.grid, "SP_CC", "GAUSS6")
        hs = [relative_entropy(q.initial, q.steady_state, q.grid)]
        integrate(o, q.initial, 10.0, "EULER", dt_fn=lambda f, o=o: cfl_dt_explicit(o, f, 0.99),
                  callback=lambda k, t, f, rep, q=q: hs.append(
                      relative_entropy(np.maximum(f, 0.0), q.steady_state, q.grid)))
        worst_up = max(worst_up, float(np.max(np.diff(hs))))
    ok = res_h < 1e-10 and res_e < 1e-10 and worst_up <= 1e-12
    record(7, ok, f"dH/dt+I residual {res_h:.1e}, dE/dt+I residual {res_e:.1e},"
                  f" largest entropy increase {worst_up:.1e}")
    assert ok


def test_c08_swarming_spectral_case():
    t0 = time.perf_counter()
    errs = steady_state_errors("SWARM1D", [40, 80], 10.0, ALL_RULES,
                               dt_policy=DtPolicy("power", scale=1.0 / 25.0, power=2.0),
                               params={"alpha": 0.0, "D": 0.4, "L": 5.0, "init_mean": 0.0})
    elapsed = time.perf_counter() - t0
    spread = max(abs(a - b) for q in ALL_RULES for a, b in zip(errs[q], errs["MIDPOINT"]))
    rate = float(np.log2(errs["MIDPOINT"][0] / errs["MIDPOINT"][1]))
    ok = spread < 1e-12 and rate > 6.0 and elapsed < 60.0
    record(8, ok, f"quadrature spread {spread:.1e}, N=40->80 rate {rate:.2f}"
                  f" (errors {errs['MIDPOINT'][0]:.2e}, {errs['MIDPOINT'][1]:.2e}), {elapsed:.0f} s")
    assert ok


def test_c09_entropic_average_instability():
    p = make_preset("SWARM1D", alpha=1.0, D=0.001, n_cells=40)
    cc = SpatialOperator(p.problem, p.grid, "SP_CC", "GAUSS6")
    dt_fn = lambda f: cfl_dt_explicit(cc, np.maximum(f, 0.0), 0.99)
    runs = {}
    for fam in ("SP_CC", "SP_EA"):
        op = cc if fam == "SP_CC" else SpatialOperator(p.problem, p.grid, fam, "GAUSS6")
        r = integrate(op, p.initial, 5.0, "EULER", dt_fn=dt_fn)
        runs[fam] = (r.min_value, count_local_extrema(r.f))
    ea_bad = runs["SP_EA"][0] < 0 or runs["SP_EA"][1] > count_local_extrema(p.initial)
    cc_good = runs["SP_CC"][0] >= 0 and runs["SP_CC"][1] <= count_local_extrema(p.initial)
    ok = ea_bad and cc_good
    record(9, ok, f"SP_EA min {runs['SP_EA'][0]:.1e} extrema {runs['SP_EA'][1]};"
                  f" SP_CC min {runs['SP_CC'][0]:.1e} extrema {runs['SP_CC'][1]}")
    assert ok


def _phase(n_cells):
    t0 = time.perf_counter()
    rows = run_phase_transition(2.0, [0.1, 0.3, 0.5], make_square_grid(3.0, n_cells))
    speeds = [r.speed for r in rows]
    return speeds, time.perf_counter() - t0


def test_c10_phase_transition():
    smoke, t_smoke = _phase(60)
    full, t_full = _phase(120)
    mono = lambda s: all(b <= a for a, b in zip(s, s[1:]))
    ok = mono(full) and full[-1] < 0.05 and t_full < 600.0
    ok &= mono(smoke) and smoke[-1] < 0.05 and t_smoke < 60.0
    record(10, ok, "dw=0.05 |u| " + " ".join(f"{s:.3g}" for s in full) +
           f" ({t_full:.0f} s); dw=0.1 |u| " + " ".join(f"{s:.3g}" for s in smoke) +
           f" ({t_smoke:.0f} s)")
    assert ok


def test_c11_quadrature_exactness():
    rng = np.random.default_rng(11)
    g = make_preset("PROTOTYPE", n_cells=10).grid
    worst = 0.0
    for kind in RuleKind:
        rule = get_rule(kind)
        for p in range(EXACTNESS[kind] + 1):
            for _ in range(5):
                a = float(rng.uniform(-1.0, 0.5))
                b = a + float(rng.uniform(0.05, 0.5))
                exact = (b ** (p + 1) - a ** (p + 1)) / (p + 1)
                got = integrate_on_cell(lambda w: w ** p, a, b, rule)
                worst = max(worst, abs(got - exact) / max(1.0, abs(exact)))
        assert float(np.sum(rule.weights)) == pytest.approx(1.0, abs=1e-15)
    ok = worst < 1e-14
    record(11, ok, f"largest monomial residual {worst:.1e} over all rules and degrees")
    assert ok
