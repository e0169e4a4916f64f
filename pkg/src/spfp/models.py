"""Preset models with their drift operators and closed-form steady states.

Drift operators are callables ``drift(f, grid) -> (w -> B[f](w))``.  Drifts
that are affine in the density moments (``B = S(w) + m0 w - m1``) also set
``affine = True`` and expose ``moments`` and ``source`` so the exponent
quadrature can be precomputed per cell.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from .core import (Boundary, Diffusion, Grid1D, ProblemSpec, constant_diffusion,
                   make_uniform_grid, mean, total_mass)
from .errors import ConvergenceError, InvalidArgumentError
from .quadrature import CellQuadrature, get_rule


# ---------------------------------------------------------------------------
# interaction kernels and drifts

class KernelKind(str, enum.Enum):
    CONSTANT = "CONSTANT"
    BOUNDED_CONFIDENCE = "BOUNDED_CONFIDENCE"


@dataclass(frozen=True)
class InteractionKernel:
    kind: KernelKind = KernelKind.CONSTANT
    delta: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.kind is KernelKind.BOUNDED_CONFIDENCE:
            if self.delta is None or not self.delta > 0:
                raise InvalidArgumentError("bounded confidence needs a radius delta > 0")

    def evaluate(self, w, ws):
        w = np.asarray(w, dtype=float)
        ws = np.asarray(ws, dtype=float)
        if self.kind is KernelKind.CONSTANT:
            return np.ones(np.broadcast(w, ws).shape)
        return (np.abs(w - ws) <= self.delta).astype(float)


def trapezoid_moments(f, g: Grid1D):
    q = g.trapezoid_weights
    return float(np.dot(q, f)), float(np.dot(q * g.nodes, f))


class InteractionDrift:
    """``B[f](w) = S(w) + int P(w, w*) (w - w*) f(w*) dw*``.

    The interaction integral uses the trapezoidal rule on the solution grid.
    For the constant kernel it reduces to ``m0 w - m1``.  With
    ``fixed_mean = u`` the first moment is taken as ``m0 u`` instead of being
    measured, which is exact whenever the continuous dynamics conserves the
    mean.
    """

    depends_on_density = True

    def __init__(self, kernel: InteractionKernel = InteractionKernel(),
                 source: Optional[Callable] = None, fixed_mean: Optional[float] = None):
        self.kernel = kernel
        self._source = source
        self.fixed_mean = fixed_mean
        self.affine = kernel.kind is KernelKind.CONSTANT
        if fixed_mean is not None and not self.affine:
            raise InvalidArgumentError("fixed_mean needs the constant kernel")

    def source(self, w):
        w = np.asarray(w, dtype=float)
        return np.zeros_like(w) if self._source is None else self._source(w)

    def moments(self, f, g):
        m0, m1 = trapezoid_moments(f, g)
        if self.fixed_mean is not None:
            return m0, m0 * self.fixed_mean
        return m0, m1

    def __call__(self, f, g):
        f = np.asarray(f, dtype=float)
        if self.kernel.kind is KernelKind.CONSTANT:
            m0, m1 = self.moments(f, g)

            def bound(w):
                w = np.asarray(w, dtype=float)
                return self.source(w) + m0 * w - m1
            return bound
        qf = g.trapezoid_weights * f
        nodes = g.nodes

        def bound(w):
            w = np.asarray(w, dtype=float)
            diff = w[..., None] - nodes
            p = self.kernel.evaluate(w[..., None], nodes)
            return self.source(w) + (p * diff) @ qf
        return bound


class LinearDrift:
    """Density-independent drift ``B(w) = w - u`` (plus an optional source)."""

    depends_on_density = False
    affine = True

    def __init__(self, u: float = 0.0, extra: Optional[Callable] = None):
        self.u = float(u)
        self.extra = extra

    def source(self, w):
        w = np.asarray(w, dtype=float)
        s = w - self.u
        return s if self.extra is None else s + self.extra(w)

    def moments(self, f, g):
        return 0.0, 0.0

    def __call__(self, f, g):
        return self.source


class GradientFlowDrift:
    """``B[f] = Phi'(w) + dw * sum_i U'(w - w_i) f_i``.

    The plain grid sum matches the discrete free energy
    ``dw sum_j [dw/2 sum_i U(w_j - w_i) f_i f_j + D f_j log f_j] + dw sum_j Phi_j f_j``.
    """

    depends_on_density = True
    affine = False

    def __init__(self, dU: Callable, dPhi: Optional[Callable] = None):
        self.dU = dU
        self.dPhi = dPhi

    def __call__(self, f, g):
        f = np.asarray(f, dtype=float)
        nodes = g.nodes
        dw = g.dw

        def bound(w):
            w = np.asarray(w, dtype=float)
            out = dw * (self.dU(w[..., None] - nodes) @ f)
            if self.dPhi is not None:
                out = out + self.dPhi(w)
            return out
        return bound


def alignment_potential(r):
    """``U(r) = r^2 / 2``; its gradient drift is ``m0 w - m1``."""
    return 0.5 * np.asarray(r, dtype=float) ** 2


def alignment_potential_gradient(r):
    return np.asarray(r, dtype=float)


# ---------------------------------------------------------------------------
# opinion model

def opinion_diffusion(sigma2: float) -> Diffusion:
    """``D(w) = sigma2/2 (1 - w^2)^2``."""
    if not sigma2 > 0:
        raise InvalidArgumentError("sigma2 must be positive")
    s = float(sigma2)
    return Diffusion(
        D=lambda w: 0.5 * s * (1.0 - np.asarray(w) ** 2) ** 2,
        dD=lambda w: -2.0 * s * np.asarray(w) * (1.0 - np.asarray(w) ** 2),
        name=f"opinion(sigma2={s})",
    )


def opinion_drift(kernel: InteractionKernel = InteractionKernel()) -> InteractionDrift:
    return InteractionDrift(kernel)


def opinion_log_steady(g: Grid1D, u: float, sigma2: float) -> np.ndarray:
    """Log of the normalized stationary state for ``P = 1``; ``-inf`` at ``w = +-1``."""
    if not abs(u) < 1:
        raise InvalidArgumentError(f"opinion steady state needs |u| < 1, got {u}")
    if not sigma2 > 0:
        raise InvalidArgumentError("sigma2 must be positive")
    w = g.nodes
    inside = np.abs(w) < 1.0
    wi = w[inside]
    one = 1.0 - wi * wi
    lf = np.full(g.n_points, -np.inf)
    lf[inside] = (-2.0 * np.log(one) + u / (2.0 * sigma2) * np.log((1.0 + wi) / (1.0 - wi))
                  - (1.0 - u * wi) / (sigma2 * one))
    shift = np.max(lf)
    lf = lf - shift
    return lf - math.log(total_mass(np.exp(lf), g))


def opinion_steady(g: Grid1D, u: float, sigma2: float) -> np.ndarray:
    return np.exp(opinion_log_steady(g, u, sigma2))


def opinion_initial(g: Grid1D, c: float = 30.0) -> np.ndarray:
    w = g.nodes
    f = np.exp(-c * (w + 0.5) ** 2) + np.exp(-c * (w - 0.5) ** 2)
    return f / total_mass(f, g)


# ---------------------------------------------------------------------------
# wealth model

def wealth_diffusion(sigma2: float) -> Diffusion:
    """``D(w) = sigma2/2 w^2``."""
    if not sigma2 > 0:
        raise InvalidArgumentError("sigma2 must be positive")
    s = float(sigma2)
    return Diffusion(
        D=lambda w: 0.5 * s * np.asarray(w) ** 2,
        dD=lambda w: s * np.asarray(w),
        name=f"wealth(sigma2={s})",
    )


def wealth_drift(fixed_mean: Optional[float] = None) -> InteractionDrift:
    """``B[f](w) = m0 w - m1``; see :class:`InteractionDrift` for ``fixed_mean``."""
    return InteractionDrift(InteractionKernel(), fixed_mean=fixed_mean)


def pareto_exponent(sigma2: float) -> float:
    return 1.0 + 2.0 / sigma2


def wealth_log_steady(g: Grid1D, sigma2: float) -> np.ndarray:
    """Log of the inverse-gamma steady state (unit mass on the half line)."""
    if not sigma2 > 0:
        raise InvalidArgumentError("sigma2 must be positive")
    mu = pareto_exponent(sigma2)
    w = g.nodes
    lf = np.full(g.n_points, -np.inf)
    pos = w > 0
    wp = w[pos]
    lf[pos] = mu * math.log(mu - 1.0) - gammaln(mu) - (1.0 + mu) * np.log(wp) - (mu - 1.0) / wp
    return lf


def wealth_steady(g: Grid1D, sigma2: float) -> np.ndarray:
    return np.exp(wealth_log_steady(g, sigma2))


def wealth_initial(g: Grid1D, c: float = 20.0, u: float = 1.0) -> np.ndarray:
    f = np.exp(-c * (g.nodes - u) ** 2)
    return f / total_mass(f, g)


def wealth_right_boundary(f, problem: ProblemSpec, g: Grid1D, rule="GAUSS6") -> float:
    """Ghost value ``f_{N+1} = f_N exp(-lam)`` on the virtual cell right of ``w_N``."""
    rule = get_rule(rule)
    quad = CellQuadrature(problem, g, rule, left=[g.w_max])
    lam = float(quad.lambdas(np.asarray(f, dtype=float))[0])
    if problem.right_ghost == "printed":
        lam = lam - float(quad.i_dd[0]) + g.dw
    return float(f[-1]) * math.exp(-lam)


# ---------------------------------------------------------------------------
# swarming model (space homogeneous)

def self_propulsion(alpha: float):
    """``S(w) = alpha w (w^2 - 1)``."""
    a = float(alpha)
    return lambda w: a * np.asarray(w) * (np.asarray(w) ** 2 - 1.0)


def swarm_drift_1d(alpha: float) -> InteractionDrift:
    return InteractionDrift(InteractionKernel(), source=self_propulsion(alpha))


def swarm_diffusion(d: float) -> Diffusion:
    if not d > 0:
        raise InvalidArgumentError("swarming noise D must be positive")
    return constant_diffusion(d)


def swarm_potential(w, alpha: float):
    """``alpha w^4/4 + (1 - alpha) w^2/2``."""
    w = np.asarray(w, dtype=float)
    return alpha * w ** 4 / 4.0 + (1.0 - alpha) * w ** 2 / 2.0


def _swarm_profile(g, alpha, d, u):
    e = -(swarm_potential(g.nodes, alpha) - u * g.nodes) / d
    e = e - np.max(e)
    f = np.exp(e)
    return f / total_mass(f, g)


def swarm_steady_1d(g: Grid1D, alpha: float, d: float, u_seed: float = 0.0,
                    damping: float = 0.5, tol: float = 1e-12,
                    max_iter: int = 10_000):
    """Self-consistent stationary state ``C exp(-(Phi_alpha(w) - u w)/D)``.

    ``u`` is found by the damped iteration ``u <- (1-damping) u + damping
    mean(f(u))`` from ``u_seed``; different seeds can land on different
    branches.  Returns ``(f, u)``.

    For ``alpha = 0`` every ``u`` is self-consistent on the whole line (the
    profile is a Gaussian of variance ``D`` about ``u``), so the seed is
    returned as is.  On a truncated interval the residual is then the
    Gaussian tail mass beyond the ends.
    """
    if not d > 0:
        raise InvalidArgumentError("D must be positive")
    u = float(u_seed)
    if alpha == 0.0:
        return _swarm_profile(g, alpha, d, u), u
    for k in range(max_iter):
        f = _swarm_profile(g, alpha, d, u)
        m = mean(f, g)
        if abs(m - u) < tol:
            return f, m if k else u
        u = (1.0 - damping) * u + damping * m
    raise ConvergenceError(f"swarming fixed point did not converge from seed {u_seed}",
                           last_distance=abs(m - u), iterations=max_iter)


def swarm_free_energy(f, g: Grid1D, alpha: float, d: float) -> float:
    """``int Phi f - |u_f|^2/2 + D int f log f`` with plain grid sums."""
    f = np.asarray(f, dtype=float)
    pot = g.dw * float(np.dot(swarm_potential(g.nodes, alpha), f))
    u = mean(f, g)
    with np.errstate(divide="ignore", invalid="ignore"):
        flogf = np.where(f > 0, f * np.log(np.where(f > 0, f, 1.0)), 0.0)
    return pot - 0.5 * u * u + d * g.dw * float(np.sum(flogf))


def gaussian_initial(g: Grid1D, center: float, variance: float) -> np.ndarray:
    f = np.exp(-0.5 * (g.nodes - center) ** 2 / variance)
    return f / total_mass(f, g)


# ---------------------------------------------------------------------------
# prototype linear problem

def prototype_drift(u: float) -> LinearDrift:
    if not -1 < u < 1:
        raise InvalidArgumentError("prototype drift needs -1 < u < 1")
    return LinearDrift(u)


def prototype_log_steady(g: Grid1D, u: float, d: float) -> np.ndarray:
    lf = -((g.nodes - u) ** 2) / (2.0 * d)
    lf = lf - np.max(lf)
    return lf - math.log(total_mass(np.exp(lf), g))


def prototype_steady(g: Grid1D, u: float, d: float) -> np.ndarray:
    return np.exp(prototype_log_steady(g, u, d))


# ---------------------------------------------------------------------------
# presets

@dataclass
class ModelPreset:
    """A fully specified application problem on its default grid."""

    name: str
    parameters: dict
    problem: ProblemSpec
    grid: Grid1D
    initial: np.ndarray
    steady_state: Optional[np.ndarray] = None
    log_steady_state: Optional[np.ndarray] = None
    free_energy: Optional[Callable] = field(default=None, repr=False)


@dataclass(frozen=True)
class PresetInfo:
    name: str
    builder: Callable
    defaults: dict
    docs: dict
    summary: str


def _opinion(p):
    g = make_uniform_grid(-1.0, 1.0, p["n_cells"])
    if p["kernel"] == "BOUNDED_CONFIDENCE":
        kernel = InteractionKernel(KernelKind.BOUNDED_CONFIDENCE, p["confidence"])
    else:
        kernel = InteractionKernel()
    problem = ProblemSpec(opinion_drift(kernel), opinion_diffusion(p["sigma2"]))
    f0 = opinion_initial(g, p["c"])
    steady = log_steady = None
    if kernel.kind is KernelKind.CONSTANT:
        u = mean(f0, g) if p["u"] is None else p["u"]
        log_steady = opinion_log_steady(g, u, p["sigma2"])
        steady = np.exp(log_steady)
    return ModelPreset("OPINION", p, problem, g, f0, steady, log_steady)


def _wealth(p):
    g = make_uniform_grid(0.0, p["L"], p["n_cells"])
    boundary = Boundary.QUASI_STATIONARY_RIGHT if p["ghost"] != "none" else Boundary.NO_FLUX
    f0 = wealth_initial(g, p["c"], p["u"])
    if p["mean_closure"] not in ("conserved", "dynamic"):
        raise InvalidArgumentError("mean_closure must be conserved or dynamic")
    fixed = mean(f0, g) if p["mean_closure"] == "conserved" else None
    problem = ProblemSpec(wealth_drift(fixed), wealth_diffusion(p["sigma2"]), boundary,
                          right_ghost="printed" if p["ghost"] == "printed" else "consistent")
    log_steady = wealth_log_steady(g, p["sigma2"])
    return ModelPreset("WEALTH", p, problem, g, f0, np.exp(log_steady), log_steady)


def _swarm1d(p):
    L = p["L"]
    g = make_uniform_grid(-L, L, p["n_cells"])
    problem = ProblemSpec(swarm_drift_1d(p["alpha"]), swarm_diffusion(p["D"]))
    f0 = gaussian_initial(g, p["init_mean"], p["init_var"])
    alpha, d = p["alpha"], p["D"]
    try:
        steady, u = swarm_steady_1d(g, alpha, d, u_seed=mean(f0, g))
    except ConvergenceError:
        # slow fixed point near the bifurcation; the run itself is unaffected
        steady, u = None, None
    log_steady = None
    if steady is not None:
        with np.errstate(divide="ignore"):
            log_steady = np.log(steady)
    return ModelPreset("SWARM1D", dict(p, u_steady=u), problem, g, f0, steady, log_steady,
                       free_energy=lambda f, gg: swarm_free_energy(f, gg, alpha, d))


def _prototype(p):
    g = make_uniform_grid(-1.0, 1.0, p["n_cells"])
    problem = ProblemSpec(prototype_drift(p["u"]), constant_diffusion(p["D"]))
    f0 = opinion_initial(g, p["c"])
    log_steady = prototype_log_steady(g, p["u"], p["D"])
    return ModelPreset("PROTOTYPE", p, problem, g, f0, np.exp(log_steady), log_steady)


def _swarm2d(p):
    from .solver2d import make_swarm2d_preset
    return make_swarm2d_preset(p)


PRESETS = {
    "OPINION": PresetInfo(
        "OPINION", _opinion,
        {"sigma2": 0.2, "c": 30.0, "kernel": "CONSTANT", "confidence": None,
         "n_cells": 80, "u": None},
        {"sigma2": "noise sigma^2 in D(w) = sigma2/2 (1-w^2)^2 (default sigma^2/2 = 0.1)",
         "c": "concentration of the bimodal initial datum",
         "kernel": "CONSTANT or BOUNDED_CONFIDENCE",
         "confidence": "bounded-confidence radius Delta",
         "n_cells": "number of cells on [-1, 1]",
         "u": "mean used in the steady state (default: mean of the initial datum)"},
        "opinion dynamics on [-1, 1] with degenerate diffusion at w = +-1"),
    "PROTOTYPE": PresetInfo(
        "PROTOTYPE", _prototype,
        {"u": 0.2, "D": 0.1, "c": 30.0, "n_cells": 40},
        {"u": "drift centre, B(w) = w - u, -1 < u < 1",
         "D": "constant diffusion",
         "c": "concentration of the bimodal initial datum",
         "n_cells": "number of cells on [-1, 1]"},
        "linear Fokker-Planck prototype with a Gaussian steady state"),
    "SWARM1D": PresetInfo(
        "SWARM1D", _swarm1d,
        {"alpha": 1.0, "D": 0.4, "L": 5.0, "n_cells": 80, "init_mean": 1.0,
         "init_var": 0.5},
        {"alpha": "self-propulsion strength",
         "D": "constant noise intensity",
         "L": "half width of the velocity domain [-L, L]",
         "n_cells": "number of cells",
         "init_mean": "mean of the Gaussian initial datum",
         "init_var": "variance of the Gaussian initial datum"},
        "space-homogeneous swarming in one velocity dimension"),
    "SWARM2D": PresetInfo(
        "SWARM2D", _swarm2d,
        {"alpha": 2.0, "D": 0.1, "L": 3.0, "n_cells": 120, "init_mean": 2.0,
         "init_var": 0.5},
        {"alpha": "self-propulsion strength",
         "D": "constant noise intensity",
         "L": "half width of the square [-L, L]^2",
         "n_cells": "cells per direction",
         "init_mean": "mean of the bivariate normal initial datum (both axes)",
         "init_var": "variance of the initial datum (both axes)"},
        "space-homogeneous swarming in two velocity dimensions"),
    "WEALTH": PresetInfo(
        "WEALTH", _wealth,
        {"sigma2": 0.2, "c": 20.0, "u": 1.0, "L": 10.0, "n_cells": 200,
         "ghost": "consistent", "mean_closure": "conserved"},
        {"sigma2": "noise sigma^2 in D(w) = sigma2/2 w^2 (default sigma^2/2 = 0.1)",
         "c": "concentration of the Gaussian initial datum",
         "u": "centre of the initial datum",
         "L": "truncation point of [0, L]",
         "n_cells": "number of cells",
         "ghost": "right closure: consistent, printed or none",
         "mean_closure": "conserved: first moment from the initial mean; dynamic: measured"},
        "wealth distribution on a truncated half line"),
}


def make_preset(name: str, **params) -> ModelPreset:
    """Instantiate a preset, overriding any of its documented defaults."""
    key = name.upper()
    if key not in PRESETS:
        raise InvalidArgumentError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    info = PRESETS[key]
    unknown = set(params) - set(info.defaults)
    if unknown:
        raise InvalidArgumentError(f"unknown parameters for {key}: {sorted(unknown)}")
    p = dict(info.defaults)
    p.update(params)
    return info.builder(p)
