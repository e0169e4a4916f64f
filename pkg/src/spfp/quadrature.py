"""Cell quadrature for the quasi-stationary exponent.

The exponent on the cell ``[w_i, w_{i+1}]`` is

    lambda_{i+1/2} = int_{w_i}^{w_{i+1}} (B[f](w) + D'(w)) / D(w) dw.

Only open rules are used so the integrand is never evaluated at a node
where the diffusion may vanish.  Newton-Cotes weights are obtained by exact
rational moment matching and the Gauss-Legendre rule by Newton iteration on
the Legendre polynomial; nothing is transcribed from tables.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import InvalidArgumentError, QuadratureError, VanishingDiffusionError


class RuleKind(str, enum.Enum):
    MIDPOINT = "MIDPOINT"
    OPEN_NC4 = "OPEN_NC4"
    OPEN_NC6 = "OPEN_NC6"
    GAUSS6 = "GAUSS6"


#: polynomial degree integrated exactly by each rule
EXACTNESS = {
    RuleKind.MIDPOINT: 1,
    RuleKind.OPEN_NC4: 3,
    RuleKind.OPEN_NC6: 5,
    RuleKind.GAUSS6: 11,
}

#: nominal accuracy order used in the scheme labels SP-CC_k
ORDER_LABEL = {
    RuleKind.MIDPOINT: "2",
    RuleKind.OPEN_NC4: "4",
    RuleKind.OPEN_NC6: "6",
    RuleKind.GAUSS6: "G",
}


class NonFiniteIntegrandWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the unit interval: ``int_0^1 g ~ sum_k weights[k] g(nodes[k])``."""

    kind: RuleKind
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def degree(self) -> int:
        return EXACTNESS[self.kind]

    def __len__(self):
        return len(self.nodes)


def _solve_rational(a, b):
    """Gauss-Jordan elimination over the rationals (small dense systems)."""
    n = len(b)
    m = [list(row) + [rhs] for row, rhs in zip(a, b)]
    for col in range(n):
        piv = next(r for r in range(col, n) if m[r][col] != 0)
        m[col], m[piv] = m[piv], m[col]
        p = m[col][col]
        m[col] = [x / p for x in m[col]]
        for r in range(n):
            if r != col and m[r][col] != 0:
                c = m[r][col]
                m[r] = [x - c * y for x, y in zip(m[r], m[col])]
    return [m[r][n] for r in range(n)]


def open_newton_cotes_weights(n_nodes: int):
    """Exact weights of the open rule with nodes ``k/(n_nodes+1)``, ``k = 1..n_nodes``.

    Returns ``(nodes, weights)`` as lists of :class:`fractions.Fraction`.
    """
    nodes = [Fraction(k, n_nodes + 1) for k in range(1, n_nodes + 1)]
    vander = [[x ** p for x in nodes] for p in range(n_nodes)]
    moments = [Fraction(1, p + 1) for p in range(n_nodes)]
    return nodes, _solve_rational(vander, moments)


def gauss_legendre(n: int, tol: float = 1e-15, max_iter: int = 100):
    """Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1]."""
    k = np.arange(1, n + 1)
    x = np.cos(np.pi * (k - 0.25) / (n + 0.5))
    for _ in range(max_iter):
        p0, p1 = np.ones_like(x), x.copy()
        for j in range(2, n + 1):
            p0, p1 = p1, ((2 * j - 1) * x * p1 - (j - 1) * p0) / j
        dp = n * (x * p1 - p0) / (x * x - 1.0)
        dx = p1 / dp
        x = x - dx
        if np.max(np.abs(dx)) < tol:
            break
    p0, p1 = np.ones_like(x), x.copy()
    for j in range(2, n + 1):
        p0, p1 = p1, ((2 * j - 1) * x * p1 - (j - 1) * p0) / j
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    return x[order], w[order]


@lru_cache(maxsize=None)
def get_rule(kind) -> QuadratureRule:
    kind = RuleKind(kind)
    if kind is RuleKind.MIDPOINT:
        nodes, weights = np.array([0.5]), np.array([1.0])
    elif kind in (RuleKind.OPEN_NC4, RuleKind.OPEN_NC6):
        n = 3 if kind is RuleKind.OPEN_NC4 else 5
        xs, ws = open_newton_cotes_weights(n)
        nodes = np.array([float(x) for x in xs])
        weights = np.array([float(w) for w in ws])
    else:
        x, w = gauss_legendre(6)
        nodes, weights = 0.5 * (x + 1.0), 0.5 * w
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return QuadratureRule(kind, nodes, weights)


def integrate_on_cell(g, a: float, b: float, rule: QuadratureRule) -> float:
    """``(b - a) * sum_k weights_k g(a + nodes_k (b - a))``.

    Non-finite integrand values propagate into the result and trigger a
    :class:`NonFiniteIntegrandWarning`.
    """
    if not b > a:
        raise InvalidArgumentError(f"empty cell [{a}, {b}]")
    vals = np.asarray(g(a + rule.nodes * (b - a)), dtype=float)
    if not np.all(np.isfinite(vals)):
        warnings.warn(f"non-finite integrand on [{a}, {b}]", NonFiniteIntegrandWarning,
                      stacklevel=2)
    return (b - a) * float(np.dot(rule.weights, vals))


def _exponent_integrand(problem, bound, w):
    d = problem.diffusion.D(w)
    if np.any(d <= 0.0):
        raise VanishingDiffusionError("diffusion vanishes at a quadrature node")
    return (bound(w) + problem.diffusion.dD(w)) / d


def lambda_cell(problem, f, g, i: int, rule: QuadratureRule) -> float:
    """Quadrature of ``(B[f] + D')/D`` over the cell ``[w_i, w_{i+1}]``."""
    if not 0 <= i < g.n_cells:
        raise InvalidArgumentError(f"edge index {i} outside 0..{g.n_cells - 1}")
    bound = problem.drift(f, g)
    a = g.nodes[i]
    w = a + rule.nodes * g.dw
    vals = _exponent_integrand(problem, bound, w)
    if not np.all(np.isfinite(vals)):
        raise QuadratureError(f"non-finite exponent integrand on edge {i}", edge=i)
    return g.dw * float(np.dot(rule.weights, vals))


class CellQuadrature:
    """Vectorized exponent quadrature on every cell of a grid.

    Quantities that only depend on the grid, the rule and the diffusion are
    computed once.  When the drift is affine in the density moments,
    ``B[f](w) = S(w) + m0 w - m1``, the three per-cell integrals of
    ``w/D``, ``1/D`` and ``(S + D')/D`` are also cached so each evaluation
    is two multiply-adds per edge.
    """

    def __init__(self, problem, grid, rule: QuadratureRule, left=None):
        self.problem = problem
        self.grid = grid
        self.rule = rule
        if left is None:
            left = grid.nodes[:-1]
        self.left = np.asarray(left, dtype=float)
        self.points = self.left[:, None] + rule.nodes[None, :] * grid.dw
        d = problem.diffusion.D(self.points)
        if np.any(d <= 0.0):
            bad = np.unique(np.nonzero(d <= 0.0)[0])
            raise VanishingDiffusionError(
                f"diffusion vanishes at quadrature nodes of edges {bad.tolist()}")
        self.inv_d = 1.0 / d
        self.dd_over_d = problem.diffusion.dD(self.points) * self.inv_d
        self.hw = grid.dw * rule.weights
        drift = problem.drift
        self.affine = bool(getattr(drift, "affine", False))
        if self.affine:
            src = drift.source(self.points)
            self.i_w = (self.points * self.inv_d) @ self.hw
            self.i_1 = self.inv_d @ self.hw
            self.i_s = (src * self.inv_d + self.dd_over_d) @ self.hw
            self._check(self.i_w + self.i_1 + self.i_s)
        self.i_dd = self.dd_over_d @ self.hw

    def _check(self, lam):
        if not np.all(np.isfinite(lam)):
            bad = np.nonzero(~np.isfinite(lam))[0]
            raise QuadratureError(
                f"non-finite exponent on edges {bad.tolist()}", edge=int(bad[0]))

    def lambdas(self, f) -> np.ndarray:
        drift = self.problem.drift
        if self.affine:
            m0, m1 = drift.moments(f, self.grid)
            return m0 * self.i_w - m1 * self.i_1 + self.i_s
        bound = drift(f, self.grid)
        lam = (bound(self.points) * self.inv_d) @ self.hw + self.i_dd
        self._check(lam)
        return lam

    def drift_integrals(self, f) -> np.ndarray:
        """Per-cell integral of ``(B[f] + D')`` itself (no division by D)."""
        bound = self.problem.drift(f, self.grid)
        dd = self.problem.diffusion.dD(self.points)
        return (bound(self.points) + dd) @ self.hw
