"""Grid-refinement studies and steady-state error sweeps built on the presets."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import DtPolicy, Integrator, SchemeConfig, total_mass
from .diagnostics import convergence_rate, l1_error, restrict
from .errors import InvalidArgumentError
from .flux import SpatialOperator
from .models import make_preset
from .stepper import choose_dt, integrate


@dataclass
class ConvergenceTable:
    """Relative L1 errors against a fine reference and the observed orders.

    ``errors[(rule, t)]`` lists one error per coarse resolution and
    ``rates[(rule, t)]`` the orders between consecutive resolutions.
    """

    n_list: list
    reference_n: int
    times: list
    errors: dict = field(default_factory=dict)
    rates: dict = field(default_factory=dict)
    min_value: dict = field(default_factory=dict)

    def rows(self):
        for (rule, t), errs in sorted(self.errors.items()):
            rates = self.rates[(rule, t)]
            for k, n in enumerate(self.n_list):
                yield rule, t, n, errs[k], (rates[k - 1] if k else float("nan"))


def _run_one(args):
    preset, params, n, family, rule, integrator, dt, times, t_final = args
    p = make_preset(preset, **dict(params, n_cells=n))
    op = SpatialOperator(p.problem, p.grid, family, rule, p.steady_state, p.log_steady_state)
    if dt is None:
        raise InvalidArgumentError("convergence runs need a step size")
    step = dt(op, p.initial) if callable(dt) else dt
    r = integrate(op, p.initial, t_final, integrator, dt=step, output_times=times)
    return p.grid, r


def _dt_for(policy: DtPolicy, dt_grid: str, preset, params, n, reference_n):
    if policy.kind == "fixed":
        return float(policy.dt)
    if policy.kind == "power":
        n_dt = reference_n if dt_grid == "reference" else n
        g = make_preset(preset, **dict(params, n_cells=n_dt)).grid
        return float(policy.scale * g.dw ** policy.power)
    cfg = SchemeConfig(dt_policy=policy, t_final=1.0)
    return lambda op, f: choose_dt(op, f, cfg)


def convergence_study(preset: str, n_list: Sequence[int], reference_n: int,
                      times: Sequence[float], quadratures: Sequence[str] = ("GAUSS6",),
                      family: str = "SP_CC", integrator=Integrator.EULER,
                      dt_policy: Optional[DtPolicy] = None, dt_grid: str = "own",
                      params: Optional[dict] = None, workers: int = 1) -> ConvergenceTable:
    """Run every resolution for every rule and compare against the reference run.

    Grids must be nested: ``reference_n`` a multiple of every entry of
    ``n_list``.  ``dt_grid="reference"`` evaluates a ``"power"`` policy on the
    reference mesh so all resolutions share one step.
    """
    params = dict(params or {})
    n_list = [int(n) for n in n_list]
    if any(reference_n % n for n in n_list):
        raise InvalidArgumentError("reference resolution must be a multiple of each N")
    if dt_grid not in ("own", "reference"):
        raise InvalidArgumentError("dt_grid must be own or reference")
    dt_policy = dt_policy or DtPolicy("cfl_explicit", safety=0.99)
    times = sorted(float(t) for t in times)
    t_final = times[-1]
    jobs = []
    for rule in quadratures:
        for n in n_list + [reference_n]:
            dt = _dt_for(dt_policy, dt_grid, preset, params, n, reference_n)
            jobs.append((preset, params, n, family, rule, integrator, dt, times, t_final))
    if workers > 1 and all(not callable(j[6]) for j in jobs):
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_run_one, jobs))
    else:
        out = [_run_one(j) for j in jobs]
    table = ConvergenceTable(n_list, reference_n, times)
    per_rule = len(n_list) + 1
    for k, rule in enumerate(quadratures):
        runs = out[k * per_rule:(k + 1) * per_rule]
        ref = runs[-1][1]
        for t in times:
            errs = []
            for (g, r), n in zip(runs[:-1], n_list):
                errs.append(l1_error(r.snapshots[t], restrict(ref.snapshots[t], reference_n // n),
                                     g, relative=True))
            table.errors[(rule, t)] = errs
            table.rates[(rule, t)] = [convergence_rate(a, b, n2 / n1) for a, b, n1, n2 in
                                      zip(errs, errs[1:], n_list, n_list[1:])]
        table.min_value[rule] = min(r.min_value for _, r in runs)
    return table


def steady_state_errors(preset: str, n_list: Sequence[int], t_final: float,
                        quadratures: Sequence[str] = ("GAUSS6",), family: str = "SP_CC",
                        integrator=Integrator.EULER, dt_policy: Optional[DtPolicy] = None,
                        params: Optional[dict] = None) -> dict:
    """Relative L1 distance to the preset's analytical steady state after ``t_final``.

    Returns ``{rule: [error per N]}``.
    """
    params = dict(params or {})
    dt_policy = dt_policy or DtPolicy("cfl_explicit", safety=0.99)
    cfg = SchemeConfig(dt_policy=dt_policy, t_final=t_final)
    out = {}
    for rule in quadratures:
        errs = []
        for n in n_list:
            p = make_preset(preset, **dict(params, n_cells=int(n)))
            if p.steady_state is None:
                raise InvalidArgumentError(f"{preset} has no analytical steady state here")
            op = SpatialOperator(p.problem, p.grid, family, rule)
            if dt_policy.kind in ("fixed", "power"):
                r = integrate(op, p.initial, t_final, integrator, dt=choose_dt(op, p.initial, cfg))
            else:
                r = integrate(op, p.initial, t_final, integrator,
                              dt_fn=lambda f, op=op: choose_dt(op, f, cfg))
            errs.append(l1_error(r.f, p.steady_state, p.grid, relative=True))
        out[rule] = errs
    return out


# ---------------------------------------------------------------------------
# randomized positivity trials

_TRIAL_PRESETS = ("OPINION", "PROTOTYPE", "SWARM1D", "WEALTH")


def _random_params(rng, name):
    if name == "OPINION":
        kernel = "BOUNDED_CONFIDENCE" if rng.random() < 0.5 else "CONSTANT"
        return {"sigma2": float(rng.uniform(0.01, 1.0)), "kernel": kernel,
                "confidence": float(rng.uniform(0.1, 1.0)), "u": 0.0}
    if name == "PROTOTYPE":
        return {"u": float(rng.uniform(-0.9, 0.9)), "D": float(10 ** rng.uniform(-3, 0))}
    if name == "SWARM1D":
        return {"alpha": float(rng.uniform(0.0, 3.0)), "D": float(10 ** rng.uniform(-3, 0)),
                "L": float(rng.uniform(2.0, 6.0))}
    return {"sigma2": float(rng.uniform(0.01, 1.0)), "L": float(rng.uniform(2.0, 10.0))}


@dataclass
class PositivityTrial:
    preset: str
    params: dict
    scheme: str
    steps: int
    min_value: float

    @property
    def ok(self) -> bool:
        return self.min_value >= 0.0


def positivity_trial(rng: np.random.Generator, scheme: str = "explicit", steps: int = 20,
                     family: str = "SP_CC", quadrature: Optional[str] = None) -> PositivityTrial:
    """One randomized run at the positivity step bound.

    A preset, its parameters, the resolution, the quadrature and a
    nonnegative initial datum with random zero patches are drawn from
    ``rng``.  ``scheme`` is ``"explicit"`` (Euler at the explicit bound) or
    ``"semi_implicit"`` (first-order semi-implicit at 0.99 of its bound).
    """
    from .quadrature import RuleKind
    from .stepper import cfl_dt_explicit, cfl_dt_semi_implicit, step_explicit_euler, \
        step_semi_implicit

    name = _TRIAL_PRESETS[int(rng.integers(len(_TRIAL_PRESETS)))]
    params = _random_params(rng, name)
    params["n_cells"] = int(rng.integers(4, 61))
    rule = quadrature or list(RuleKind)[int(rng.integers(len(RuleKind)))].value
    p = make_preset(name, **params)
    f = rng.random(p.grid.n_points) * (rng.random(p.grid.n_points) > 0.3)
    if not f.any():
        f[int(rng.integers(f.size))] = 1.0
    f /= total_mass(f, p.grid)
    op = SpatialOperator(p.problem, p.grid, family, rule, p.steady_state, p.log_steady_state)
    lo = float(np.min(f))
    for _ in range(steps):
        if scheme == "explicit":
            f, _rep = step_explicit_euler(op, f, cfl_dt_explicit(op, f, safety=1.0))
        elif scheme == "semi_implicit":
            f, _rep = step_semi_implicit(op, f, cfl_dt_semi_implicit(op, f))
        else:
            raise InvalidArgumentError(f"unknown scheme {scheme!r}")
        lo = min(lo, float(np.min(f)))
    return PositivityTrial(name, dict(params, quadrature=rule), scheme, steps, lo)


def positivity_suite(seed: int, trials: int = 1000, scheme: str = "explicit",
                     steps: int = 20) -> list:
    rng = np.random.default_rng(seed)
    return [positivity_trial(rng, scheme, steps) for _ in range(trials)]
