"""Compiled inner loops for long explicit runs with moment-affine drifts.

The arithmetic mirrors :meth:`spfp.flux.SpatialOperator.rhs` on its fast
path; only the loop over time steps is moved out of the interpreter.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_TAYLOR = 1e-6
_CAP = 700.0


@njit(cache=True)
def _bernoulli_pair(lam):
    ax = abs(lam)
    if ax < _TAYLOR:
        s = 1.0 - 0.5 * ax + ax * ax / 12.0
    else:
        axc = min(ax, _CAP)
        s = axc / math.expm1(axc)
    return s + max(-lam, 0.0), s + max(lam, 0.0)


@njit(cache=True)
def euler_affine_cc(f, dt, n_steps, i_w, i_1, i_s, scale, q, qw, dw):
    """``n_steps`` forward Euler steps of the no-flux Chang-Cooper scheme."""
    n = f.shape[0]
    f = f.copy()
    flux = np.zeros(n + 1)
    for _ in range(n_steps):
        m0 = 0.0
        m1 = 0.0
        for j in range(n):
            m0 += q[j] * f[j]
            m1 += qw[j] * f[j]
        for e in range(n - 1):
            lam = m0 * i_w[e] - m1 * i_1[e] + i_s[e]
            bp, bm = _bernoulli_pair(lam)
            flux[e + 1] = scale[e] * (bm * f[e + 1] - bp * f[e])
        for j in range(n):
            f[j] += dt * ((flux[j + 1] - flux[j]) / dw)
    return f
