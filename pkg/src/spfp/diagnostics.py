"""Entropy and free-energy functionals, dissipation rates, error norms.

Dissipation functionals are normalized so that they balance the time
derivative of the matching functional computed from the semi-discrete
right-hand side, ``d/dt H = dw * sum_i (log(f_i/f_inf_i) + 1) rhs_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import Grid1D, _check_length, total_mass
from .errors import InvalidArgumentError, PositivityRequiredError
from .flux import entropic_average

#: steady-state values below this are left out of the relative entropy
TAIL_FLOOR = 1e-300


def _xlogy(x, y):
    """``x log(x / y)`` with ``0 log 0 = 0``."""
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos] / y[pos])
    return out


def relative_entropy(f, f_inf, g: Grid1D, return_excluded: bool = False):
    """``H = dw sum f_i log(f_i / f_inf_i)``.

    Nodes where ``f_inf < TAIL_FLOOR`` are skipped; ``return_excluded``
    also returns how many.
    """
    f = _check_length(f, g)
    fi = _check_length(f_inf, g)
    if np.any(f < 0):
        raise InvalidArgumentError("relative entropy needs f >= 0")
    keep = fi >= TAIL_FLOOR
    h = g.dw * float(np.sum(_xlogy(f[keep], fi[keep])))
    if return_excluded:
        return h, int(np.count_nonzero(~keep))
    return h


def l2_relative_distance(f, f_inf, g: Grid1D) -> float:
    """``dw sum (f_i - f_inf_i)^2 / f_inf_i``."""
    f = _check_length(f, g)
    fi = _check_length(f_inf, g)
    if np.any(fi <= 0):
        raise PositivityRequiredError("L2 entropy needs f_inf > 0")
    return g.dw * float(np.sum((f - fi) ** 2 / fi))


def steady_weight(f_inf) -> np.ndarray:
    """Edge weight ``f_inf_i f_inf_{i+1} / L(f_inf_i, f_inf_{i+1})``, ``L`` the logarithmic mean.

    It is the factor for which the exact-weight flux becomes
    ``D/dw * w_hat * (r_{i+1} - r_i)`` with ``r = f / f_inf``.
    """
    fi = np.asarray(f_inf, dtype=float)
    return fi[:-1] * fi[1:] / entropic_average(fi[:-1], fi[1:])


def _edge_diffusion(weights, problem, g):
    if weights is not None:
        return weights.d_edge
    if problem is None:
        raise InvalidArgumentError("pass weights or problem to get the edge diffusion")
    return problem.diffusion.D(g.edges)


def cc_dissipation(f, f_inf, g: Grid1D, weights=None, problem=None) -> float:
    """``(1/dw) sum (log r_{i+1} - log r_i)(r_{i+1} - r_i) w_hat_{i+1/2} D_{i+1/2}``.

    ``r = f / f_inf``.  Balances ``dH/dt`` for exact-weight Chang-Cooper
    fluxes of a density-independent drift.
    """
    f = _check_length(f, g)
    fi = _check_length(f_inf, g)
    if np.any(fi <= 0) or np.any(f <= 0):
        raise PositivityRequiredError("dissipation needs strictly positive densities")
    r = f / fi
    lr = np.log(r)
    d = _edge_diffusion(weights, problem, g)
    return float(np.sum(np.diff(lr) * np.diff(r) * steady_weight(fi) * d)) / g.dw


def ea_dissipation(f, f_inf, g: Grid1D, weights=None, problem=None) -> float:
    """``(1/dw) sum (log r_{i+1} - log r_i)^2 D_{i+1/2} L(f_i, f_{i+1})``."""
    f = _check_length(f, g)
    fi = _check_length(f_inf, g)
    if np.any(fi <= 0) or np.any(f <= 0):
        raise PositivityRequiredError("dissipation needs strictly positive densities")
    lr = np.log(f / fi)
    d = _edge_diffusion(weights, problem, g)
    return float(np.sum(np.diff(lr) ** 2 * d * entropic_average(f[:-1], f[1:]))) / g.dw


def entropy_rate(f, f_inf, rhs, g: Grid1D) -> float:
    """``dH/dt`` along the semi-discrete flow, from a right-hand side."""
    f = _check_length(f, g)
    fi = _check_length(f_inf, g)
    return g.dw * float(np.sum((np.log(f / fi) + 1.0) * np.asarray(rhs)))


# ---------------------------------------------------------------------------
# gradient-flow free energy

def interaction_matrix(U: Callable, g: Grid1D) -> np.ndarray:
    w = g.nodes
    return U(w[:, None] - w[None, :])


def potential_xi(f, g: Grid1D, U: Callable, d: float, Phi: Optional[Callable] = None):
    """``xi_j = Phi_j + dw sum_i U(w_j - w_i) f_i + D log f_j``."""
    f = _check_length(f, g)
    if np.any(f <= 0):
        raise PositivityRequiredError("xi needs f > 0")
    xi = g.dw * (interaction_matrix(U, g) @ f) + d * np.log(f)
    if Phi is not None:
        xi = xi + Phi(g.nodes)
    return xi


def discrete_free_energy(f, g: Grid1D, U: Optional[Callable], d: float,
                         Phi: Optional[Callable] = None) -> float:
    """``dw sum_j [dw/2 sum_i U(w_j - w_i) f_i f_j + D f_j log f_j + Phi_j f_j]``."""
    f = _check_length(f, g)
    flogf = np.zeros_like(f)
    pos = f > 0
    flogf[pos] = f[pos] * np.log(f[pos])
    e = d * float(np.sum(flogf))
    if U is not None:
        e += 0.5 * g.dw * float(f @ interaction_matrix(U, g) @ f)
    if Phi is not None:
        e += float(np.dot(Phi(g.nodes), f))
    return g.dw * e


def gradient_flow_dissipation(f, g: Grid1D, U: Callable, d: float,
                              Phi: Optional[Callable] = None) -> float:
    """``dw sum ((xi_{j+1} - xi_j)/dw)^2 L(f_j, f_{j+1})``."""
    xi = potential_xi(f, g, U, d, Phi)
    f = np.asarray(f, dtype=float)
    return g.dw * float(np.sum((np.diff(xi) / g.dw) ** 2 * entropic_average(f[:-1], f[1:])))


def free_energy_rate(f, rhs, g: Grid1D, U: Callable, d: float,
                     Phi: Optional[Callable] = None) -> float:
    """``dE/dt = dw sum_j (xi_j + D) rhs_j`` (chain rule on the discrete sum)."""
    xi = potential_xi(f, g, U, d, Phi)
    return g.dw * float(np.sum((xi + d) * np.asarray(rhs)))


# ---------------------------------------------------------------------------
# errors and rates

def l1_error(f, ref, g: Grid1D, relative: bool = False) -> float:
    f = _check_length(f, g)
    ref = _check_length(ref, g)
    e = g.dw * float(np.sum(np.abs(f - ref)))
    if relative:
        n = g.dw * float(np.sum(np.abs(ref)))
        if n == 0.0:
            raise InvalidArgumentError("relative error against a zero reference")
        e /= n
    return e


def restrict(ref, factor: int) -> np.ndarray:
    """Fine-grid values at the nodes of a grid ``factor`` times coarser."""
    ref = np.asarray(ref, dtype=float)
    if (ref.size - 1) % factor:
        raise InvalidArgumentError(f"grids are not nested by a factor {factor}")
    return ref[::factor]


def convergence_rate(error_coarse: float, error_fine: float, ratio: float = 2.0) -> float:
    """``log(e_coarse / e_fine) / log(ratio)``."""
    if not (error_coarse > 0 and error_fine > 0):
        raise InvalidArgumentError("rates need positive errors")
    return math.log(error_coarse / error_fine) / math.log(ratio)


def positivity_report(f):
    f = np.asarray(f, dtype=float)
    return float(np.min(f)), int(np.count_nonzero(f < 0))


def mass_drift(f, f0, g: Grid1D) -> float:
    """Relative change of :func:`total_mass`."""
    m0 = total_mass(f0, g)
    m = total_mass(f, g)
    return abs(m - m0) / abs(m0) if m0 != 0.0 else abs(m)


def total_variation(f) -> float:
    return float(np.sum(np.abs(np.diff(np.asarray(f, dtype=float)))))


def count_local_extrema(f, rel_tol: float = 1e-12) -> int:
    """Interior sign changes of the discrete derivative, ignoring flat steps."""
    f = np.asarray(f, dtype=float)
    d = np.diff(f)
    d = d[np.abs(d) > rel_tol * np.max(np.abs(f))]
    return int(np.count_nonzero(np.sign(d[1:]) != np.sign(d[:-1])))


@dataclass
class EntropyReport:
    relative_entropy: float
    l2_distance: float
    free_energy: float
    dissipation: float
    identity_residual: float


def entropy_report(f, f_inf, g: Grid1D, op, free_energy: Optional[Callable] = None
                   ) -> EntropyReport:
    """Snapshot of the entropy functionals for an operator ``op``.

    The dissipation is the entropic form for the SP_EA family and the
    Chang-Cooper form otherwise; the residual is ``|dH/dt + I|``.
    """
    from .core import FluxFamily
    f = _check_length(f, g)
    fi = _check_length(f_inf, g)
    h = relative_entropy(np.maximum(f, 0.0), fi, g)
    pos = np.all(f > 0) and np.all(fi > 0)
    l2 = l2_relative_distance(f, fi, g) if np.all(fi > 0) else float("nan")
    fe = free_energy(f, g) if free_energy is not None else float("nan")
    if pos:
        w = op.weights(f)
        if op.family is FluxFamily.SP_EA:
            dis = ea_dissipation(f, fi, g, w)
        else:
            dis = cc_dissipation(f, fi, g, w)
        res = abs(entropy_rate(f, fi, op.rhs(f), g) + dis)
    else:
        dis = res = float("nan")
    return EntropyReport(h, l2, fe, dis, res)
