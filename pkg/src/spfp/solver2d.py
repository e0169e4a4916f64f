"""Dimension-by-dimension Chang-Cooper and entropic schemes in two dimensions.

Densities are arrays ``f[i, j] ~ f(w_i, v_j)``.  Each direction carries its
own one-dimensional flux with the other coordinate frozen at the node
value, and all four sides are no-flux.  The v-direction is computed by
running the w-direction code on the transposed array, so a problem that is
symmetric under ``(w, v) -> (v, w)`` gives transposed results bitwise for
the unsplit explicit integrators.

Semi-implicit stepping uses Strang splitting (half step in w, full step in
v, half step in w) with one batch of tridiagonal solves per sub-step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .core import FluxFamily, Grid1D, make_uniform_grid
from .errors import InvalidArgumentError, StabilityError
from .flux import EA_FLOOR, bernoulli_pair, ea_delta, entropic_average
from .quadrature import get_rule


@dataclass(frozen=True)
class Grid2D:
    gw: Grid1D
    gv: Grid1D

    @property
    def shape(self):
        return (self.gw.n_points, self.gv.n_points)

    @property
    def dw(self) -> float:
        return self.gw.dw

    @property
    def dv(self) -> float:
        return self.gv.dw

    def mesh(self):
        return np.meshgrid(self.gw.nodes, self.gv.nodes, indexing="ij")

    def transpose(self) -> "Grid2D":
        return Grid2D(self.gv, self.gw)


def make_square_grid(L: float, n_cells: int) -> Grid2D:
    g = make_uniform_grid(-L, L, n_cells)
    return Grid2D(g, g)


def mass_2d(f, g2: Grid2D) -> float:
    return g2.dw * g2.dv * float(np.sum(f))


def _check2(f, g2):
    f = np.asarray(f, dtype=float)
    if f.shape != g2.shape:
        raise InvalidArgumentError(f"density has shape {f.shape}, grid expects {g2.shape}")
    return f


def _moment_along(x, ga: Grid1D, gb: Grid1D):
    """``(sum_i q_i sum_j q_j x_ij, sum_i q_i a_i sum_j q_j x_ij)``."""
    inner = x @ np.asarray(gb.trapezoid_weights)
    qa = np.asarray(ga.trapezoid_weights)
    return float(qa @ inner), float((qa * ga.nodes) @ inner)


def swarm_mean_velocity(f, g2: Grid2D) -> np.ndarray:
    """``u_f = int w f / int f`` with trapezoidal moments in both directions."""
    f = _check2(f, g2)
    m0a, m1w = _moment_along(f, g2.gw, g2.gv)
    ft = np.ascontiguousarray(f.T)
    m0b, m1v = _moment_along(ft, g2.gv, g2.gw)
    m0 = 0.5 * (m0a + m0b)
    if m0 == 0.0:
        raise InvalidArgumentError("mean velocity of a zero density")
    return np.array([m1w / m0, m1v / m0])


def bivariate_normal(g2: Grid2D, mean=(2.0, 2.0), var=(0.5, 0.5)) -> np.ndarray:
    W, V = g2.mesh()
    f = np.exp(-0.5 * ((W - mean[0]) ** 2 / var[0] + (V - mean[1]) ** 2 / var[1]))
    f /= 2.0 * np.pi * np.sqrt(var[0] * var[1])
    return f / mass_2d(f, g2)


def swarm_stationary_2d(g2: Grid2D, alpha: float, d: float, u=(0.0, 0.0)) -> np.ndarray:
    """``C exp(-(alpha |x|^4/4 + (1 - alpha)|x|^2/2 - u.x)/D)`` on the grid."""
    W, V = g2.mesh()
    r2 = W * W + V * V
    e = -(alpha * r2 * r2 / 4.0 + (1.0 - alpha) * r2 / 2.0 - u[0] * W - u[1] * V) / d
    f = np.exp(e - np.max(e))
    return f / mass_2d(f, g2)


@dataclass(frozen=True)
class DirectionalWeights:
    """Per-direction edge data; arrays have shape ``(n_cells_axis, n_points_other)``."""

    lam_w: np.ndarray
    lam_v: np.ndarray
    d: float
    g2: Grid2D

    def c_tilde(self):
        return self.d * self.lam_w / self.g2.dw, self.d * self.lam_v / self.g2.dv


class Swarm2DOperator:
    """Space-homogeneous swarming in two velocity dimensions.

    ``B = alpha x(|x|^2 - 1) + m0 x - m1`` componentwise and constant ``D``.
    The per-cell exponent integrates ``B_w(., v_j)/D`` over ``[w_i, w_{i+1}]``
    with the chosen rule; for ``alpha = 0`` every rule is exact.
    """

    def __init__(self, g2: Grid2D, alpha: float, d: float, family=FluxFamily.SP_CC,
                 quadrature="OPEN_NC6"):
        if not d > 0:
            raise InvalidArgumentError("D must be positive")
        self.g2 = g2
        self.alpha = float(alpha)
        self.d = float(d)
        self.family = FluxFamily(family)
        if self.family not in (FluxFamily.SP_CC, FluxFamily.SP_EA):
            raise InvalidArgumentError("2D operator supports SP_CC and SP_EA")
        self.rule = get_rule(quadrature)
        self._axis = {"w": self._precompute(g2.gw, g2.gv), "v": self._precompute(g2.gv, g2.gw)}
        self.clamped = 0

    def _precompute(self, ga: Grid1D, gb: Grid1D):
        pts = ga.nodes[:-1, None] + self.rule.nodes[None, :] * ga.dw      # (n, k)
        hw = ga.dw * self.rule.weights
        i_x = pts @ hw                                                    # int a da
        i_cube = (pts ** 3) @ hw
        b2 = gb.nodes ** 2
        # int alpha a (a^2 + b^2 - 1) da for every (cell, b_j)
        i_s = self.alpha * (i_cube[:, None] + i_x[:, None] * (b2[None, :] - 1.0))
        return i_x, i_s, ga.dw

    # -- moments --------------------------------------------------------
    def moments(self, f):
        g2 = self.g2
        ft = np.ascontiguousarray(f.T)
        m0a, m1w = _moment_along(f, g2.gw, g2.gv)
        m0b, m1v = _moment_along(ft, g2.gv, g2.gw)
        return 0.5 * (m0a + m0b), m1w, m1v, ft

    def _lam(self, axis, m0, m1):
        i_x, i_s, da = self._axis[axis]
        return (i_s + m0 * i_x[:, None] - m1 * da) / self.d

    def weights(self, f) -> DirectionalWeights:
        f = _check2(f, self.g2)
        m0, m1w, m1v, _ = self.moments(f)
        return DirectionalWeights(self._lam("w", m0, m1w), self._lam("v", m0, m1v),
                                  self.d, self.g2)

    # -- fluxes ---------------------------------------------------------
    def _coeffs(self, lam, x, da):
        """``(a, b)`` with ``F = a x_{i+1} - b x_i`` along axis 0."""
        s = self.d / da
        if self.family is FluxFamily.SP_CC:
            bp, bm = bernoulli_pair(lam)
            return s * bm, s * bp
        c = s * lam
        xc = np.maximum(x, EA_FLOOR)
        delta = ea_delta(xc[:-1], xc[1:])
        return c * (1.0 - delta) + s, s - c * delta

    def _div_axis0(self, x, lam, da):
        flux = np.zeros((x.shape[0] + 1, x.shape[1]))
        if self.family is FluxFamily.SP_CC:
            a, b = self._coeffs(lam, x, da)
            flux[1:-1] = a * x[1:] - b * x[:-1]
        else:
            low = x < EA_FLOOR
            self.clamped += int(np.count_nonzero(low))
            xc = np.where(low, EA_FLOOR, x)
            lx = np.log(xc)
            flux[1:-1] = (self.d * lam / da + self.d / da * (lx[1:] - lx[:-1])) * \
                entropic_average(xc[:-1], xc[1:])
        return (flux[1:] - flux[:-1]) / da

    def rhs(self, f) -> np.ndarray:
        f = _check2(f, self.g2)
        m0, m1w, m1v, ft = self.moments(f)
        dw_part = self._div_axis0(f, self._lam("w", m0, m1w), self.g2.dw)
        dv_part = self._div_axis0(ft, self._lam("v", m0, m1v), self.g2.dv).T
        return dw_part + dv_part

    # -- implicit directional sub-step ----------------------------------
    def implicit_axis(self, x, lam, da, dt):
        """Solve ``(I - dt L) y = x`` column by column along axis 0."""
        a, b = self._coeffs(lam, x, da)
        if np.any(a < 0) or np.any(b < 0):
            raise StabilityError("negative flux coefficients in the implicit sub-step")
        n, m = x.shape
        r = dt / da
        diag = np.ones((n, m))
        diag[:-1] += r * b
        diag[1:] += r * a
        upper = np.zeros((n, m))
        upper[:-1] = -r * a        # coefficient of y_{i+1} in row i
        lower = np.zeros((n, m))
        lower[1:] = -r * b         # coefficient of y_{i-1} in row i
        # stack columns into one block-diagonal tridiagonal system
        ab = np.zeros((3, n * m))
        ab[1] = diag.ravel(order="F")
        up = upper.ravel(order="F")
        lo = lower.ravel(order="F")
        ab[0, 1:] = up[:-1]
        ab[2, :-1] = lo[1:]
        y = solve_banded((1, 1), ab, x.ravel(order="F"), overwrite_ab=True,
                         check_finite=False)
        return y.reshape((n, m), order="F")

    def _half(self, f, dt, axis):
        m0, m1w, m1v, ft = self.moments(f)
        if axis == "w":
            return self.implicit_axis(f, self._lam("w", m0, m1w), self.g2.dw, dt)
        return self.implicit_axis(ft, self._lam("v", m0, m1v), self.g2.dv, dt).T


# ---------------------------------------------------------------------------
# steppers

def step_euler_2d(op: Swarm2DOperator, f, dt):
    return f + dt * op.rhs(f)


def step_ssp2_2d(op: Swarm2DOperator, f, dt):
    f1 = f + dt * op.rhs(f)
    return 0.5 * f + 0.5 * (f1 + dt * op.rhs(f1))


def step_rk4_2d(op: Swarm2DOperator, f, dt):
    k1 = op.rhs(f)
    k2 = op.rhs(f + 0.5 * dt * k1)
    k3 = op.rhs(f + 0.5 * dt * k2)
    k4 = op.rhs(f + dt * k3)
    return f + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_strang_semi_implicit_2d(op: Swarm2DOperator, f, dt):
    f = op._half(f, 0.5 * dt, "w")
    f = np.ascontiguousarray(op._half(f, dt, "v"))
    return op._half(f, 0.5 * dt, "w")


STEPPERS_2D = {
    "EULER": step_euler_2d,
    "SSP2": step_ssp2_2d,
    "RK4": step_rk4_2d,
    "SEMI_IMPLICIT_1": step_strang_semi_implicit_2d,
}


@dataclass
class SteadyResult:
    f: np.ndarray
    t: float
    steps: int
    converged: bool
    residual: float
    min_value: float
    max_mass_drift: float


def run_to_steady(op: Swarm2DOperator, f0, dt: float, t_max: float, tol: float = 1e-8,
                  integrator: str = "SEMI_IMPLICIT_1", callback=None) -> SteadyResult:
    """Step until ``||f^{n+1} - f^n||_1 / dt < tol`` or ``t >= t_max``.

    ``callback(n, t, f, dt)`` runs after every step.
    """
    if integrator not in STEPPERS_2D:
        raise InvalidArgumentError(f"unknown 2D integrator {integrator!r}")
    step = STEPPERS_2D[integrator]
    g2 = op.g2
    f = np.array(f0, dtype=float)
    m_init = mass_2d(f, g2)
    t, n, res, lo, drift = 0.0, 0, np.inf, float(np.min(f)), 0.0
    while t < t_max * (1.0 - 1e-12):
        last = dt >= (t_max - t) * (1.0 - 1e-12)
        h = t_max - t if last else dt
        nxt = step(op, f, h)
        res = g2.dw * g2.dv * float(np.sum(np.abs(nxt - f))) / h
        f = nxt
        t = t_max if last else t + h
        n += 1
        lo = min(lo, float(np.min(f)))
        drift = max(drift, abs(mass_2d(f, g2) - m_init) / m_init)
        if callback is not None:
            callback(n, t, f, h)
        if res < tol:
            return SteadyResult(f, t, n, True, res, lo, drift)
    return SteadyResult(f, t, n, False, res, lo, drift)


@dataclass
class PhaseRow:
    D: float
    speed: float
    u: tuple
    t: float
    steps: int
    converged: bool
    residual: float


def run_phase_transition(alpha: float, D_list: Sequence[float], g2: Grid2D,
                         dt: Optional[float] = None, t_max: float = 200.0,
                         tol: float = 1e-8, quadrature: str = "OPEN_NC6",
                         family=FluxFamily.SP_CC, init_mean=(2.0, 2.0),
                         init_var=(0.5, 0.5), integrator: str = "SEMI_IMPLICIT_1"):
    """``|u_f|`` of the numerical steady state for each diffusion value.

    The default step is ``dw / L`` with ``L`` the half width of the w axis.
    Rows that hit ``t_max`` are returned with ``converged = False``.
    """
    if dt is None:
        dt = g2.dw / max(abs(g2.gw.w_min), abs(g2.gw.w_max))
    f0 = bivariate_normal(g2, init_mean, init_var)
    rows = []
    for d in D_list:
        op = Swarm2DOperator(g2, alpha, d, family, quadrature)
        r = run_to_steady(op, f0, dt, t_max, tol, integrator)
        u = swarm_mean_velocity(r.f, g2)
        rows.append(PhaseRow(float(d), float(np.hypot(*u)), (float(u[0]), float(u[1])),
                             r.t, r.steps, r.converged, r.residual))
    return rows


@dataclass
class Swarm2DPreset:
    name: str
    parameters: dict
    operator: Swarm2DOperator
    grid: Grid2D
    initial: np.ndarray
    steady_state: Optional[np.ndarray] = field(default=None, repr=False)


def make_swarm2d_preset(p: dict) -> Swarm2DPreset:
    g2 = make_square_grid(p["L"], p["n_cells"])
    op = Swarm2DOperator(g2, p["alpha"], p["D"])
    f0 = bivariate_normal(g2, (p["init_mean"],) * 2, (p["init_var"],) * 2)
    return Swarm2DPreset("SWARM2D", p, op, g2, f0)
