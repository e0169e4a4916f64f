"""Uniform grids and the problem description shared by every solver.

Unknowns are node-centred: ``f[i]`` approximates ``f(w_i)`` for
``i = 0..N`` on a uniform grid.  Fluxes live on the edges
``w_{i+1/2} = w_i + dw/2``.  Densities are plain float64 numpy arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgumentError, SingularMomentError


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on ``[w_min, w_max]`` with ``n_cells`` cells."""

    w_min: float
    w_max: float
    n_cells: int

    @property
    def n_points(self) -> int:
        return self.n_cells + 1

    @property
    def dw(self) -> float:
        return (self.w_max - self.w_min) / self.n_cells

    @cached_property
    def nodes(self) -> np.ndarray:
        w = self.w_min + np.arange(self.n_points) * self.dw
        w[-1] = self.w_max
        w.flags.writeable = False
        return w

    @cached_property
    def edges(self) -> np.ndarray:
        """Interior edge midpoints ``w_{i+1/2}``, ``i = 0..N-1``."""
        e = self.nodes[:-1] + 0.5 * self.dw
        e.flags.writeable = False
        return e

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        q = np.full(self.n_points, self.dw)
        q[0] = q[-1] = 0.5 * self.dw
        q.flags.writeable = False
        return q

    def refine(self, factor: int) -> "Grid1D":
        return Grid1D(self.w_min, self.w_max, self.n_cells * factor)


def make_uniform_grid(w_min: float, w_max: float, n_cells: int) -> Grid1D:
    """Build the grid with nodes ``w_min + i*dw``, ``i = 0..n_cells``."""
    if not (np.isfinite(w_min) and np.isfinite(w_max)) or not w_max > w_min:
        raise InvalidArgumentError(f"degenerate interval [{w_min}, {w_max}]")
    if int(n_cells) != n_cells or n_cells < 2:
        raise InvalidArgumentError(f"n_cells must be an integer >= 2, got {n_cells}")
    return Grid1D(float(w_min), float(w_max), int(n_cells))


def _check_length(f, g: Grid1D) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (g.n_points,):
        raise InvalidArgumentError(
            f"density has shape {f.shape}, grid expects ({g.n_points},)")
    return f


def total_mass(f, g: Grid1D) -> float:
    """Conserved mass ``dw * sum(f)`` (plain sum over all nodes)."""
    f = _check_length(f, g)
    return g.dw * float(np.sum(f))


def mean(f, g: Grid1D) -> float:
    f = _check_length(f, g)
    m = total_mass(f, g)
    if m == 0.0:
        raise SingularMomentError("mean of a density with zero mass")
    return g.dw * float(np.dot(g.nodes, f)) / m


def normalize(f, g: Grid1D) -> np.ndarray:
    """Rescale ``f`` to unit :func:`total_mass`."""
    f = _check_length(f, g)
    m = total_mass(f, g)
    if m <= 0.0:
        raise SingularMomentError("cannot normalize a density with nonpositive mass")
    return f / m


# ---------------------------------------------------------------------------
# problem description

@dataclass(frozen=True)
class Diffusion:
    """Diffusion coefficient ``D(w) >= 0`` together with its derivative."""

    D: Callable[[np.ndarray], np.ndarray]
    dD: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    constant: Optional[float] = None

    def __call__(self, w):
        return self.D(np.asarray(w, dtype=float))


def constant_diffusion(d: float) -> Diffusion:
    if not d >= 0:
        raise InvalidArgumentError(f"diffusion constant must be >= 0, got {d}")
    d = float(d)
    return Diffusion(
        D=lambda w: np.full_like(np.asarray(w, dtype=float), d),
        dD=lambda w: np.zeros_like(np.asarray(w, dtype=float)),
        name=f"constant({d})",
        constant=d,
    )


class Boundary(str, enum.Enum):
    NO_FLUX = "no_flux"
    QUASI_STATIONARY_RIGHT = "quasi_stationary_right"


@dataclass(frozen=True)
class ProblemSpec:
    """``d/dt f = d/dw [ (B[f] + D') f + D df/dw ]`` on a bounded interval.

    ``drift`` is a drift operator (see :mod:`spfp.models`): calling
    ``drift(f, grid)`` returns a vectorized function ``w -> B[f](w)`` with the
    density frozen.  ``right_ghost`` selects the exponent used for the
    quasi-stationary ghost value: ``"consistent"`` integrates
    ``(B + D')/D`` like the interior scheme, ``"printed"`` integrates
    ``(B + D)/D``.
    """

    drift: object
    diffusion: Diffusion
    boundary: Boundary = Boundary.NO_FLUX
    right_ghost: str = "consistent"

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if self.right_ghost not in ("consistent", "printed"):
            raise InvalidArgumentError(f"unknown right_ghost variant {self.right_ghost!r}")


class FluxFamily(str, enum.Enum):
    SP_CC = "SP_CC"
    SP_EA = "SP_EA"
    SP_CC_EXACT = "SP_CC_EXACT"
    CENTRAL = "CENTRAL"


class Integrator(str, enum.Enum):
    EULER = "EULER"
    RK4 = "RK4"
    SSP2 = "SSP2"
    SEMI_IMPLICIT_1 = "SEMI_IMPLICIT_1"
    IMEX2 = "IMEX2"
    FULLY_IMPLICIT = "FULLY_IMPLICIT"

    @property
    def implicit(self) -> bool:
        return self in (Integrator.SEMI_IMPLICIT_1, Integrator.IMEX2,
                        Integrator.FULLY_IMPLICIT)


@dataclass(frozen=True)
class DtPolicy:
    """How the time step is chosen.

    ``"fixed"`` uses ``dt``; ``"cfl_explicit"`` and ``"cfl_semi_implicit"``
    re-evaluate the positivity bounds every step, scaled by ``safety``;
    ``"power"`` uses ``scale * dw**power`` with ``dw`` of the run's grid.
    """

    kind: str = "cfl_explicit"
    dt: Optional[float] = None
    safety: float = 0.99
    dt_max: Optional[float] = None
    scale: float = 1.0
    power: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fixed", "cfl_explicit", "cfl_semi_implicit", "power"):
            raise InvalidArgumentError(f"unknown dt policy {self.kind!r}")
        if self.kind == "fixed" and not (self.dt is not None and self.dt > 0):
            raise InvalidArgumentError("fixed dt policy needs dt > 0")
        if not self.safety > 0:
            raise InvalidArgumentError("dt safety factor must be positive")
        if self.kind == "power" and not self.scale > 0:
            raise InvalidArgumentError("power dt policy needs scale > 0")

    @classmethod
    def fixed(cls, dt: float) -> "DtPolicy":
        return cls("fixed", dt=dt)


@dataclass(frozen=True)
class SchemeConfig:
    flux_family: FluxFamily = FluxFamily.SP_CC
    quadrature: str = "GAUSS6"
    integrator: Integrator = Integrator.EULER
    dt_policy: DtPolicy = field(default_factory=DtPolicy)
    t_final: float = 1.0
    steady_state: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    log_steady_state: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "flux_family", FluxFamily(self.flux_family))
        object.__setattr__(self, "integrator", Integrator(self.integrator))
        if (self.flux_family is FluxFamily.SP_CC_EXACT
                and self.steady_state is None and self.log_steady_state is None):
            raise InvalidArgumentError("SP_CC_EXACT requires an analytical steady state")
        if not self.t_final > 0:
            raise InvalidArgumentError("t_final must be positive")
