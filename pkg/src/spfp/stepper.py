"""Time integrators and step-size policies.

Every step function has the signature ``step(op, f, dt) -> (f_new, StepReport)``
where ``op`` is a :class:`spfp.flux.SpatialOperator`.  Implicit steps freeze
every ingredient that is nonlinear in the density (``lambda``, ``delta``,
``C~``) and solve one tridiagonal system per stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .core import FluxFamily, Integrator, SchemeConfig, total_mass
from .errors import ConvergenceError, InvalidArgumentError, StabilityError
from .flux import FluxWeights, SpatialOperator

SAFETY = 0.99


@dataclass
class StepReport:
    dt_used: float
    positivity_ok: bool
    min_value: float
    mass_drift: float
    solver_iterations: int = 0


def _report(f_old, f_new, dt, dw, iterations=0) -> StepReport:
    m0 = dw * float(np.sum(f_old))
    m1 = dw * float(np.sum(f_new))
    drift = abs(m1 - m0) / abs(m0) if m0 != 0.0 else abs(m1)
    lo = float(np.min(f_new))
    return StepReport(dt, lo >= 0.0, lo, drift, iterations)


# ---------------------------------------------------------------------------
# tridiagonal systems

@dataclass
class TridiagonalSystem:
    """``lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]``.

    ``lower[0]`` and ``upper[-1]`` are unused and kept at zero.
    """

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    rhs: np.ndarray

    def matrix(self) -> np.ndarray:
        return (np.diag(self.diag) + np.diag(self.lower[1:], -1)
                + np.diag(self.upper[:-1], 1))

    def row_dominant(self) -> np.ndarray:
        return self.diag > np.abs(self.lower) + np.abs(self.upper)

    def column_dominant(self) -> np.ndarray:
        """Columns of ``A`` are diagonally dominant (they sum to one for
        conservative fluxes, so this holds for any step when all
        off-diagonals are nonpositive)."""
        off = np.zeros_like(self.diag)
        off[:-1] += np.abs(self.lower[1:])
        off[1:] += np.abs(self.upper[:-1])
        return self.diag > off

    def solve(self) -> np.ndarray:
        return solve_tridiagonal(self.lower, self.diag, self.upper, self.rhs)


def solve_tridiagonal(lower, diag, upper, rhs) -> np.ndarray:
    n = len(diag)
    ab = np.empty((3, n))
    ab[0, 0] = 0.0
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    ab[2, -1] = 0.0
    return solve_banded((1, 1), ab, rhs, overwrite_ab=True, check_finite=False)


def thomas_solve(lower, diag, upper, rhs) -> np.ndarray:
    """Plain elimination recurrence; works on stacked systems along axis 0."""
    lower = np.asarray(lower, dtype=float)
    diag = np.asarray(diag, dtype=float)
    upper = np.asarray(upper, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = diag.shape[0]
    c = np.empty_like(diag)
    d = np.empty_like(rhs)
    c[0] = upper[0] / diag[0]
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i] * c[i - 1]
        c[i] = upper[i] / m
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m
    x = np.empty_like(d)
    x[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


def operator_bands(weights: FluxWeights, n_points: int, dw: float):
    """Bands of the linear operator ``L`` with ``rhs = L f`` for frozen weights."""
    a, b = weights.coefficients()
    s = 1.0 / dw
    diag = np.zeros(n_points)
    diag[:-1] -= s * b          # -b_{i+1/2} f_i from F_{i+1/2}
    diag[1:] -= s * a           # -a_{i-1/2} f_i from -F_{i-1/2}
    diag[-1] += s * weights.right_closure()
    upper = np.zeros(n_points)
    upper[:-1] = s * a
    lower = np.zeros(n_points)
    lower[1:] = s * b
    return lower, diag, upper


def assemble_tridiagonal(weights: FluxWeights, f, dt: float, theta: float = 1.0,
                         rhs=None, strict: bool = False) -> TridiagonalSystem:
    """``(I - theta dt L) x = rhs`` with ``L`` the frozen flux operator.

    The diagonal is ``R_i = 1 + theta dt/dw (b_{i+1/2} + a_{i-1/2})`` and the
    off-diagonals are ``-theta dt/dw a_{i+1/2}`` and ``-theta dt/dw b_{i-1/2}``.
    With ``strict`` every row must be strictly diagonally dominant.
    Otherwise it suffices that the matrix is an M-matrix, certified by
    nonpositive off-diagonals plus row or column dominance.
    """
    f = np.asarray(f, dtype=float)
    lo, di, up = operator_bands(weights, f.size, weights.dw)
    sys = TridiagonalSystem(-theta * dt * lo, 1.0 - theta * dt * di, -theta * dt * up,
                            f.copy() if rhs is None else np.asarray(rhs, dtype=float))
    rows = sys.row_dominant()
    if strict:
        if not rows.all():
            bad = np.nonzero(~rows)[0]
            raise StabilityError(
                f"row diagonal dominance lost at rows {bad[:10].tolist()} for dt={dt}",
                rows=bad)
        return sys
    signs = (sys.lower <= 0).all() and (sys.upper <= 0).all() and (sys.diag > 0).all()
    if not (signs and (rows.all() or sys.column_dominant().all())):
        bad = np.nonzero(~rows)[0]
        raise StabilityError(
            f"implicit matrix is not an M-matrix for dt={dt} (rows {bad[:10].tolist()})",
            rows=bad)
    return sys


# ---------------------------------------------------------------------------
# step size policies

def _m_and_d(op: SpatialOperator, f):
    w = op.weights(f)
    m = float(np.max(np.abs(w.c_tilde))) if w.c_tilde.size else 0.0
    d = float(np.max(w.d_edge)) if w.d_edge.size else 0.0
    return m, d


def cfl_dt_explicit(op: SpatialOperator, f, safety: float = 1.0,
                    dt_max: Optional[float] = None) -> float:
    """``dw^2 / (2 (M dw + D))`` with ``M = max |C~|`` and ``D = max D_{i+1/2}``."""
    m, d = _m_and_d(op, f)
    dw = op.grid.dw
    den = 2.0 * (m * dw + d)
    dt = np.inf if den == 0.0 else safety * dw * dw / den
    return float(dt if dt_max is None else min(dt, dt_max))


def cfl_dt_semi_implicit(op: SpatialOperator, f, safety: float = SAFETY,
                         dt_max: Optional[float] = None) -> float:
    """``safety * dw / (2M)``; unbounded for zero drift unless ``dt_max`` is given."""
    m, _ = _m_and_d(op, f)
    dt = np.inf if m == 0.0 else safety * op.grid.dw / (2.0 * m)
    return float(dt if dt_max is None else min(dt, dt_max))


def choose_dt(op: SpatialOperator, f, config: SchemeConfig) -> float:
    pol = config.dt_policy
    if pol.kind == "fixed":
        return float(pol.dt)
    if pol.kind == "power":
        return float(pol.scale * op.grid.dw ** pol.power)
    cap = pol.dt_max if pol.dt_max is not None else config.t_final / 10.0
    if pol.kind == "cfl_explicit":
        return cfl_dt_explicit(op, f, pol.safety, cap)
    return cfl_dt_semi_implicit(op, f, pol.safety, cap)


# ---------------------------------------------------------------------------
# explicit steps

def step_explicit_euler(op: SpatialOperator, f, dt: float):
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    f = np.asarray(f, dtype=float)
    out = f + dt * op.rhs(f)
    return out, _report(f, out, dt, op.grid.dw)


def step_ssp2(op: SpatialOperator, f, dt: float):
    """Heun's method as a convex combination of two Euler steps."""
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    f = np.asarray(f, dtype=float)
    f1 = f + dt * op.rhs(f)
    out = 0.5 * f + 0.5 * (f1 + dt * op.rhs(f1))
    return out, _report(f, out, dt, op.grid.dw)


def step_rk4(op: SpatialOperator, f, dt: float):
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    f = np.asarray(f, dtype=float)
    k1 = op.rhs(f)
    k2 = op.rhs(f + 0.5 * dt * k1)
    k3 = op.rhs(f + 0.5 * dt * k2)
    k4 = op.rhs(f + dt * k3)
    out = f + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return out, _report(f, out, dt, op.grid.dw)


# ---------------------------------------------------------------------------
# implicit steps

def step_semi_implicit(op: SpatialOperator, f, dt: float, strict: bool = False):
    """Solve ``A[f^n] f^{n+1} = f^n`` with the weights frozen at ``f^n``."""
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    f = np.asarray(f, dtype=float)
    w = op.linear_weights(f)
    out = assemble_tridiagonal(w, f, dt, strict=strict).solve()
    return out, _report(f, out, dt, op.grid.dw, 1)


def step_imex2(op: SpatialOperator, f, dt: float, strict: bool = False):
    """Two-stage IMEX pair (Heun explicit, Crank-Nicolson implicit).

    Stage 1 is explicit, ``F1 = G1 = f^n``.  Stage 2 takes the weights from
    ``G2 = f^n + dt Q(f^n, f^n)`` and solves
    ``F2 = f^n + dt/2 Q(f^n, f^n) + dt/2 Q(G2, F2)`` for ``F2``, which is
    also the new value because the quadrature weights equal the last row.
    """
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    f = np.asarray(f, dtype=float)
    q1 = op.rhs(f)
    g2 = f + dt * q1
    w2 = op.linear_weights(g2)
    sys = assemble_tridiagonal(w2, f, dt, theta=0.5, rhs=f + 0.5 * dt * q1, strict=strict)
    out = sys.solve()
    return out, _report(f, out, dt, op.grid.dw, 1)


def step_fully_implicit(op: SpatialOperator, f, dt: float, tol: float = 1e-12,
                        max_iter: int = 200, strict: bool = False, history=None):
    """Picard iteration ``f_{k+1} = A[f_k]^{-1} f^n`` from ``f_0 = f^n``.

    ``history``, if a list, receives the L1 distance of every iterate.
    """
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    f = np.asarray(f, dtype=float)
    fk = f
    dist = np.inf
    dw = op.grid.dw
    for k in range(1, max_iter + 1):
        w = op.linear_weights(fk)
        nxt = assemble_tridiagonal(w, f, dt, strict=strict).solve()
        dist = dw * float(np.sum(np.abs(nxt - fk)))
        if history is not None:
            history.append(dist)
        fk = nxt
        if dist < tol or (op.fixed_weights and op.family is not FluxFamily.SP_EA):
            return fk, _report(f, fk, dt, dw, k)
    raise ConvergenceError(f"fixed-point iteration stalled at distance {dist:.3e}",
                           last_distance=dist, iterations=max_iter)


STEPPERS = {
    Integrator.EULER: step_explicit_euler,
    Integrator.RK4: step_rk4,
    Integrator.SSP2: step_ssp2,
    Integrator.SEMI_IMPLICIT_1: step_semi_implicit,
    Integrator.IMEX2: step_imex2,
    Integrator.FULLY_IMPLICIT: step_fully_implicit,
}


def get_stepper(integrator) -> Callable:
    return STEPPERS[Integrator(integrator)]


# ---------------------------------------------------------------------------
# driver

@dataclass
class RunResult:
    f: np.ndarray
    t: float
    steps: int
    snapshots: dict
    min_value: float
    max_mass_drift: float
    iterations: int = 0


def integrate(op: SpatialOperator, f0, t_final: float, integrator=Integrator.EULER,
              dt: Optional[float] = None, dt_fn: Optional[Callable] = None,
              output_times: Iterable[float] = (), callback: Optional[Callable] = None,
              **step_kw) -> RunResult:
    """Advance ``f0`` to ``t_final``.

    The step is ``dt`` (fixed) or ``dt_fn(f)`` re-evaluated every step, and is
    shortened to land exactly on each output time and on ``t_final``.
    ``callback(n, t, f, report)`` is called after every step.
    """
    if dt is None and dt_fn is None:
        raise InvalidArgumentError("give dt or dt_fn")
    step = get_stepper(integrator)
    f = np.array(f0, dtype=float)
    targets = sorted({float(t) for t in output_times if 0.0 < t <= t_final} | {float(t_final)})
    snaps = {}
    t = 0.0
    n = 0
    lo = float(np.min(f))
    worst = 0.0
    iters = 0
    fast = (Integrator(integrator) is Integrator.EULER and dt is not None
            and callback is None and not step_kw)
    for target in targets:
        if fast and t < target:
            # compiled bulk steps; extrema and mass drift are sampled at targets only
            n_steps = max(int(math.ceil((target - t) / dt - 1e-9)), 1)
            start = f
            f = op.euler_steps(f, dt, n_steps - 1)
            h = target - t - (n_steps - 1) * dt
            if h > 0:
                f = f + h * op.rhs(f)
            worst = max(worst, _report(start, f, dt, op.grid.dw).mass_drift)
            lo = min(lo, float(np.min(f)))
            n += n_steps
            t = target
        while t < target:
            h = dt if dt_fn is None else dt_fn(f)
            remaining = target - t
            last = h >= remaining * (1.0 - 1e-12)
            if last:
                h = remaining
            f, rep = step(op, f, h, **step_kw)
            t = target if last else t + h
            n += 1
            lo = min(lo, rep.min_value)
            worst = max(worst, rep.mass_drift)
            iters += rep.solver_iterations
            if callback is not None:
                callback(n, t, f, rep)
        snaps[target] = f.copy()
    return RunResult(f, t, n, snaps, lo, worst, iters)


def solve(problem, grid, f0, config: SchemeConfig, output_times=(), callback=None,
          **step_kw) -> RunResult:
    """Integrate with the operator and step-size policy described by ``config``."""
    op = SpatialOperator(problem, grid, config.flux_family, config.quadrature,
                         config.steady_state, config.log_steady_state)
    if config.dt_policy.kind in ("fixed", "power"):
        return integrate(op, f0, config.t_final, config.integrator,
                         dt=choose_dt(op, f0, config),
                         output_times=output_times, callback=callback, **step_kw)
    return integrate(op, f0, config.t_final, config.integrator,
                     dt_fn=lambda f: choose_dt(op, f, config),
                     output_times=output_times, callback=callback, **step_kw)
