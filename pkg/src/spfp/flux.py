"""Numerical fluxes and the conservative right-hand side.

Sign convention: the semi-discrete scheme is

    d f_i / dt = (F_{i+1/2} - F_{i-1/2}) / dw,

so ``F`` approximates ``(B[f] + D') f + D df/dw`` (the negative of the
usual transport flux).  Edge flux arrays have length ``N + 2`` and hold
``F_{-1/2}, F_{1/2}, ..., F_{N+1/2}``; the outer entries come from the
boundary closure.

Every two-point flux used here can be written as
``F_{i+1/2} = a_{i+1/2} f_{i+1} - b_{i+1/2} f_i``.  For Chang-Cooper
weights ``a = (D/dw) beta(-lambda)`` and ``b = (D/dw) beta(lambda)`` with
``beta(x) = x / (e^x - 1)``; this is algebraically the same as
``C~ [(1 - delta) f_{i+1} + delta f_i] + D (f_{i+1} - f_i)/dw`` but does not
lose digits when ``|lambda|`` is large.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional

import numpy as np

from .core import Boundary, FluxFamily, Grid1D, ProblemSpec
from .errors import InvalidArgumentError, PositivityRequiredError, QuadratureError
from .quadrature import CellQuadrature, QuadratureRule, get_rule

#: relative threshold below which an edge diffusion counts as vanishing
VANISHING_D = 1e-14
#: cap on |lambda| for exact weights next to zeros of the steady state
LAMBDA_CAP = 700.0
#: floor for logarithms in the entropic-average flux
EA_FLOOR = 1e-300
_TAYLOR = 1e-6


def bernoulli(x):
    """``x / (e^x - 1)`` with the removable singularity at 0 filled in."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        s = np.where(ax < _TAYLOR, 1.0 - 0.5 * ax + ax * ax / 12.0, ax / np.expm1(ax))
    s = np.where(np.isinf(ax), 0.0, s)
    return np.where(x >= 0, s, s + ax)


def bernoulli_pair(lam):
    """``(beta(lam), beta(-lam))`` from a single exponential.

    Uses ``beta(x) = beta(|x|) + max(-x, 0)``; ``beta(|x|)`` underflows to 0
    smoothly, so the exponent is capped before evaluating it.
    """
    lam = np.asarray(lam, dtype=float)
    ax = np.abs(lam)
    small = ax < _TAYLOR
    if small.any():
        safe = np.where(small, 1.0, np.minimum(ax, LAMBDA_CAP))
        s = np.where(small, 1.0 - 0.5 * ax + ax * ax / 12.0, safe / np.expm1(safe))
    else:
        axc = np.minimum(ax, LAMBDA_CAP)
        s = axc / np.expm1(axc)
    return s + np.maximum(-lam, 0.0), s + np.maximum(lam, 0.0)


#: odd Taylor coefficients of cc_delta about 0 (Bernoulli numbers), lam^1 .. lam^13
_DELTA_SERIES = (-1.0 / 12.0, 1.0 / 720.0, -1.0 / 30240.0, 1.0 / 1209600.0,
                 -1.0 / 47900160.0, 691.0 / 1307674368000.0, -1.0 / 74724249600.0)
#: below this |lam| the series is used; the closed form cancels like eps/|lam|
_DELTA_SWITCH = 0.5


def cc_delta(lam):
    """Chang-Cooper weight ``1/lam + 1/(1 - e^lam)``, always in ``(0, 1)``.

    For ``|lam| < 0.5`` a degree-13 Taylor polynomial replaces the closed form,
    which would lose ``eps/|lam|`` to cancellation.  For ``lam -> +inf`` the
    weight tends to 0 and for ``-inf`` to 1.
    """
    lam = np.asarray(lam, dtype=float)
    small = np.abs(lam) < _DELTA_SWITCH
    safe = np.where(small, 1.0, lam)
    with np.errstate(over="ignore"):
        d = 1.0 / safe - 1.0 / np.expm1(safe)
    if small.any():
        x2 = lam * lam
        poly = 0.0
        for c in reversed(_DELTA_SERIES):
            poly = poly * x2 + c
        d = np.where(small, 0.5 + lam * poly, d)
    return d if d.ndim else float(d)


def entropic_average(a, b):
    """Logarithmic mean ``(b - a)/(log b - log a)``; ``b`` when ``a == b``.

    Zero arguments follow the continuous limit: the mean of ``0`` and
    anything is ``0``.  Arguments are ordered first so the result is
    bitwise symmetric.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise InvalidArgumentError("entropic average needs nonnegative arguments")
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = (hi - lo) / lo
        # log1p avoids cancellation for close arguments; far apart, hi/lo may overflow
        den = np.where(t < 1.0, np.log1p(t), np.log(hi) - np.log(lo))
        out = (hi - lo) / den
    out = np.where(hi == lo, hi, out)
    out = np.where(lo == 0.0, 0.0, out)
    return out if out.ndim else float(out)


def ea_delta(fi, fip1):
    """Nonlinear weight with ``entropic_average = delta fi + (1 - delta) fip1``."""
    fi = np.asarray(fi, dtype=float)
    fip1 = np.asarray(fip1, dtype=float)
    lm = entropic_average(fi, fip1)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = (fip1 - lm) / (fip1 - fi)
    d = np.where(fi == fip1, 0.5, d)
    return d if d.ndim else float(d)


@dataclass(frozen=True)
class FluxWeights:
    """Per-edge data of a two-point flux on the ``N`` interior edges.

    ``kind`` is ``"cc"`` (Chang-Cooper weights, coefficients from
    ``lam``) or ``"generic"`` (coefficients from ``delta`` and ``c_tilde``
    directly, used by the central and frozen entropic-average fluxes).
    Edges with vanishing diffusion carry the upwind limit.
    ``ghost`` holds ``(lam, ratio, d_edge)`` of the right quasi-stationary
    closure, or ``None`` for a no-flux right boundary.
    """

    lam: np.ndarray
    c_tilde: np.ndarray
    d_edge: np.ndarray
    dw: float
    kind: str = "cc"
    vanishing: Optional[np.ndarray] = None
    ghost: Optional[tuple] = None
    weight_delta: Optional[np.ndarray] = None

    @cached_property
    def delta(self) -> np.ndarray:
        """Convex weights; Chang-Cooper weights of ``lam`` unless overridden."""
        if self.weight_delta is not None:
            return self.weight_delta
        return cc_delta(self.lam)

    def coefficients(self):
        """``(a, b)`` with ``F_{i+1/2} = a f_{i+1} - b f_i``."""
        if self.kind == "cc":
            bp, bm = bernoulli_pair(self.lam)
            scale = self.d_edge / self.dw
            a = scale * bm
            b = scale * bp
        else:
            s = self.d_edge / self.dw
            a = self.c_tilde * (1.0 - self.delta) + s
            b = s - self.c_tilde * self.delta
        if self.vanishing is not None and self.vanishing.any():
            v = self.vanishing
            a = np.where(v, np.maximum(self.c_tilde, 0.0), a)
            b = np.where(v, np.maximum(-self.c_tilde, 0.0), b)
        return a, b

    def right_closure(self) -> float:
        """``kappa`` with ``F_{N+1/2} = kappa f_N`` (0 for no flux)."""
        if self.ghost is None:
            return 0.0
        lam, ratio, d = self.ghost
        bp, bm = bernoulli_pair(lam)
        return float(d / self.dw * (bm * ratio - bp))

    def right_closure_ea(self) -> float:
        if self.ghost is None:
            return 0.0
        lam, ratio, d = self.ghost
        if ratio <= 0.0:
            return 0.0
        return float(d / self.dw * (lam + np.log(ratio)) * entropic_average(1.0, ratio))


# ---------------------------------------------------------------------------
# weight construction

def _vanishing_mask(d_edge):
    dmax = float(np.max(d_edge)) if d_edge.size else 0.0
    return d_edge <= VANISHING_D * dmax


def _edge_drift(problem, f, g, where):
    bound = problem.drift(f, g)
    w = g.edges[where]
    return bound(w) + problem.diffusion.dD(w)


class _Ghost:
    """Quadrature on the virtual cell ``[w_N, w_N + dw]`` beyond the right end."""

    def __init__(self, problem, g, rule):
        self.problem = problem
        self.quad = CellQuadrature(problem, g, rule, left=[g.w_max])
        self.d_edge = float(problem.diffusion.D(np.array([g.w_max + 0.5 * g.dw]))[0])
        self.dw = g.dw

    def __call__(self, f):
        lam = float(self.quad.lambdas(f)[0])
        if self.problem.right_ghost == "printed":
            expo = lam - float(self.quad.i_dd[0]) + self.dw
        else:
            expo = lam
        return lam, float(np.exp(-expo)), self.d_edge


def build_cc_weights(problem: ProblemSpec, f, g: Grid1D, rule, quad=None,
                     ghost=None) -> FluxWeights:
    """SP-CC weights: quadrature exponent, ``delta = cc_delta(lam)``,
    ``C~ = D_{i+1/2} lam / dw``.

    ``quad`` and ``ghost`` are optional caches of :class:`CellQuadrature`
    objects for repeated calls on the same grid.
    """
    if not isinstance(rule, QuadratureRule):
        rule = get_rule(rule)
    f = np.asarray(f, dtype=float)
    d_edge = problem.diffusion.D(g.edges)
    vanish = _vanishing_mask(d_edge)
    if quad is None:
        quad = CellQuadrature(problem, g, rule)
    lam = quad.lambdas(f)
    if vanish.any():
        c_tilde = np.empty_like(lam)
        ok = ~vanish
        c_tilde[ok] = d_edge[ok] * lam[ok] / g.dw
        cv = _edge_drift(problem, f, g, vanish)
        c_tilde[vanish] = cv
        lam = lam.copy()
        lam[vanish] = np.where(cv >= 0, np.inf, -np.inf)
    else:
        c_tilde = d_edge * lam / g.dw
        vanish = None
    bad = ~np.isfinite(lam) if vanish is None else (~np.isfinite(lam) & ~vanish)
    if bad.any():
        i = int(np.nonzero(bad)[0][0])
        raise QuadratureError(f"non-finite exponent on edge {i}", edge=i)
    ghost_data = None
    if problem.boundary is Boundary.QUASI_STATIONARY_RIGHT:
        if ghost is None:
            ghost = _Ghost(problem, g, rule)
        ghost_data = ghost(f)
    return FluxWeights(lam, c_tilde, d_edge, g.dw, "cc", vanish, ghost_data)


def exact_weights_from_log(log_f_inf, problem: ProblemSpec, g: Grid1D) -> FluxWeights:
    """Exact steady-state weights from ``log f_inf`` (``-inf`` allowed).

    ``lam = log f_i - log f_{i+1}``.  Edges touching a zero of the steady
    state get ``|lam| = LAMBDA_CAP`` so that the coefficient on the zero
    side stays finite and the other one underflows to zero.
    """
    lf = np.asarray(log_f_inf, dtype=float)
    if lf.shape != (g.n_points,) or np.any(np.isnan(lf)) or np.any(lf == np.inf):
        raise InvalidArgumentError("log steady state must be finite or -inf on every node")
    with np.errstate(invalid="ignore"):
        lam = lf[:-1] - lf[1:]
    both = np.isneginf(lf[:-1]) & np.isneginf(lf[1:])
    lam = np.where(both, 0.0, lam)
    lam = np.clip(lam, -LAMBDA_CAP, LAMBDA_CAP)
    d_edge = problem.diffusion.D(g.edges)
    c_tilde = d_edge * lam / g.dw
    return FluxWeights(lam, c_tilde, d_edge, g.dw, "cc")


def exact_weights(f_inf, problem: ProblemSpec, g: Grid1D) -> FluxWeights:
    """Weights that make ``f_inf`` an exact zero-flux state (needs ``f_inf > 0``)."""
    f_inf = np.asarray(f_inf, dtype=float)
    if np.any(~np.isfinite(f_inf)) or np.any(f_inf <= 0.0):
        raise PositivityRequiredError("exact weights need a strictly positive steady state")
    return exact_weights_from_log(np.log(f_inf), problem, g)


def central_weights(problem: ProblemSpec, f, g: Grid1D) -> FluxWeights:
    """Central differences: ``delta = 1/2``, ``C~ = C[f](w_{i+1/2})``."""
    f = np.asarray(f, dtype=float)
    d_edge = problem.diffusion.D(g.edges)
    c = _edge_drift(problem, f, g, slice(None))
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = g.dw * c / d_edge
    return FluxWeights(lam, c, d_edge, g.dw, "generic", weight_delta=np.full_like(c, 0.5))


def frozen_ea_weights(weights: FluxWeights, f) -> FluxWeights:
    """Entropic-average flux written in Chang-Cooper form with ``delta^E(f)``.

    Because ``D (log f_{i+1} - log f_i) * L(f_i, f_{i+1}) = D (f_{i+1} - f_i)``,
    the entropic flux equals ``C~ [delta^E f_i + (1 - delta^E) f_{i+1}] +
    D (f_{i+1} - f_i)/dw``.  Freezing ``delta^E`` gives a linear flux.
    """
    f = np.maximum(np.asarray(f, dtype=float), EA_FLOOR)
    return replace(weights, weight_delta=ea_delta(f[:-1], f[1:]), kind="generic")


# ---------------------------------------------------------------------------
# fluxes

def cc_flux(weights: FluxWeights, f, g: Grid1D) -> np.ndarray:
    """Two-point flux ``C~ [(1 - delta) f_{i+1} + delta f_i] + D (f_{i+1} - f_i)/dw``."""
    f = np.asarray(f, dtype=float)
    if f.shape != (g.n_points,) or weights.lam.shape != (g.n_cells,):
        raise InvalidArgumentError("density, weights and grid sizes disagree")
    a, b = weights.coefficients()
    out = np.zeros(g.n_points + 1)
    out[1:-1] = a * f[1:] - b * f[:-1]
    out[-1] = weights.right_closure() * f[-1]
    return out


def ea_flux(weights: FluxWeights, f, g: Grid1D, return_clamped: bool = False):
    """Entropic-average flux ``(C~ + D (log f_{i+1} - log f_i)/dw) L(f_i, f_{i+1})``.

    Values below ``EA_FLOOR`` (including negative ones) are clamped before
    taking logarithms; ``return_clamped`` also returns how many nodes were.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (g.n_points,) or weights.lam.shape != (g.n_cells,):
        raise InvalidArgumentError("density, weights and grid sizes disagree")
    low = f < EA_FLOOR
    fc = np.where(low, EA_FLOOR, f)
    lf = np.log(fc)
    lm = entropic_average(fc[:-1], fc[1:])
    out = np.zeros(g.n_points + 1)
    out[1:-1] = (weights.c_tilde + weights.d_edge / g.dw * (lf[1:] - lf[:-1])) * lm
    out[-1] = weights.right_closure_ea() * fc[-1]
    if return_clamped:
        return out, int(np.count_nonzero(low))
    return out


def divergence(fluxes, g: Grid1D) -> np.ndarray:
    """``(F_{i+1/2} - F_{i-1/2}) / dw`` for ``i = 0..N``."""
    fluxes = np.asarray(fluxes, dtype=float)
    if fluxes.shape != (g.n_points + 1,):
        raise InvalidArgumentError(f"expected {g.n_points + 1} edge fluxes")
    return (fluxes[1:] - fluxes[:-1]) / g.dw


# ---------------------------------------------------------------------------
# spatial operator

class SpatialOperator:
    """Binds a problem and a grid to a flux family, giving ``f -> rhs(f)``.

    Weights are cached when they cannot change (exact weights, or a drift
    that does not depend on the density).
    """

    def __init__(self, problem: ProblemSpec, grid: Grid1D, family=FluxFamily.SP_CC,
                 quadrature="GAUSS6", steady_state=None, log_steady_state=None):
        self.problem = problem
        self.grid = grid
        self.family = FluxFamily(family)
        self.rule = get_rule(quadrature)
        self._fixed = None
        self.clamped = 0
        if self.family is FluxFamily.SP_CC_EXACT:
            if log_steady_state is not None:
                self._fixed = exact_weights_from_log(log_steady_state, problem, grid)
            elif steady_state is not None:
                self._fixed = exact_weights(steady_state, problem, grid)
            else:
                raise InvalidArgumentError("SP_CC_EXACT requires an analytical steady state")
            if problem.boundary is Boundary.QUASI_STATIONARY_RIGHT:
                ghost = _Ghost(problem, grid, self.rule)(np.ones(grid.n_points))
                self._fixed = replace(self._fixed, ghost=ghost)
            self.quad = None
        elif self.family is FluxFamily.CENTRAL:
            self.quad = None
        else:
            self.quad = CellQuadrature(problem, grid, self.rule)
            self._ghost = (_Ghost(problem, grid, self.rule)
                           if problem.boundary is Boundary.QUASI_STATIONARY_RIGHT else None)
        self._static = not getattr(problem.drift, "depends_on_density", True)
        self._fast = None
        if (self.family is FluxFamily.SP_CC and self.quad.affine
                and not _vanishing_mask(problem.diffusion.D(grid.edges)).any()):
            q = self.quad
            self._fast = (q.i_w, q.i_1, q.i_s, problem.diffusion.D(grid.edges) / grid.dw)

    @property
    def fixed_weights(self) -> bool:
        return self._fixed is not None

    def weights(self, f) -> FluxWeights:
        if self._fixed is not None:
            return self._fixed
        if self.family is FluxFamily.CENTRAL:
            w = central_weights(self.problem, f, self.grid)
        else:
            w = build_cc_weights(self.problem, f, self.grid, self.rule,
                                 quad=self.quad, ghost=self._ghost)
        if self._static:
            self._fixed = w
        return w

    def linear_weights(self, f, weights=None) -> FluxWeights:
        """Weights of the flux that is linear in the density for frozen ``f``."""
        w = self.weights(f) if weights is None else weights
        if self.family is FluxFamily.SP_EA:
            return frozen_ea_weights(w, f)
        return w

    def fluxes(self, f, weights=None) -> np.ndarray:
        w = self.weights(f) if weights is None else weights
        if self.family is FluxFamily.SP_EA:
            out, n = ea_flux(w, f, self.grid, return_clamped=True)
            self.clamped += n
            return out
        return cc_flux(w, f, self.grid)

    def rhs(self, f, weights=None) -> np.ndarray:
        if weights is None and self._fast is not None and self._fixed is None:
            return self._fast_rhs(np.asarray(f, dtype=float))
        return divergence(self.fluxes(f, weights), self.grid)

    def euler_steps(self, f, dt: float, n_steps: int):
        """``n_steps`` forward Euler steps, compiled when the fast path applies."""
        f = np.asarray(f, dtype=float)
        if (self._fast is not None and self._fixed is None and self._ghost is None
                and n_steps > 0):
            from ._kernels import euler_affine_cc
            i_w, i_1, i_s, scale = self._fast
            g = self.grid
            q = np.asarray(g.trapezoid_weights)
            return euler_affine_cc(f, float(dt), int(n_steps), i_w, i_1, i_s, scale,
                                   q, q * g.nodes, g.dw)
        for _ in range(n_steps):
            f = f + dt * self.rhs(f)
        return f

    def _fast_rhs(self, f):
        # same arithmetic as build_cc_weights + cc_flux, minus the bookkeeping
        i_w, i_1, i_s, scale = self._fast
        m0, m1 = self.problem.drift.moments(f, self.grid)
        lam = m0 * i_w - m1 * i_1 + i_s
        bp, bm = bernoulli_pair(lam)
        flux = np.empty(f.size + 1)
        flux[0] = 0.0
        flux[1:-1] = scale * (bm * f[1:] - bp * f[:-1])
        if self._ghost is None:
            flux[-1] = 0.0
        else:
            flux[-1] = FluxWeights(lam, lam, scale, self.grid.dw,
                                   ghost=self._ghost(f)).right_closure() * f[-1]
        return (flux[1:] - flux[:-1]) / self.grid.dw

    def rhs_frozen(self, f, weights: FluxWeights) -> np.ndarray:
        """Right-hand side of the flux made linear with ``weights`` (see
        :meth:`linear_weights`)."""
        return divergence(cc_flux(weights, f, self.grid), self.grid)
