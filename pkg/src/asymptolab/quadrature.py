"""Composite Gauss rules on graded panels.

Every rule is returned as (nodes, weights) with sum(w * F(s)) approximating
the plain integral of F, even when a weight function is used internally.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi


@lru_cache(maxsize=64)
def _legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return leggauss(n)


@lru_cache(maxsize=64)
def _jacobi_left(n: int, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    # weight (1+x)^(-gamma) on [-1, 1]
    return roots_jacobi(n, 0.0, -gamma)


def legendre_panel(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _legendre(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def jacobi_panel(b: float, n: int, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Rule on [0, b] exact for s^(-gamma) times a polynomial of degree 2n-1."""
    if gamma == 0:
        return legendre_panel(0.0, b, n)
    x, w = _jacobi_left(n, float(gamma))
    s = 0.5 * b * (x + 1.0)
    weights = (0.5 * b) ** (1.0 - gamma) * w * s**gamma
    return s, weights


def sqrt_end_panel(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule on [a, b] after substituting s = b - tau^2 (square-root end at b)."""
    tau, w = legendre_panel(0.0, np.sqrt(b - a), n)
    return b - tau**2, 2.0 * tau * w


def graded_breaks(a: float, b: float, levels_end: int = 0, levels_start: int = 20) -> list[float]:
    """Dyadic breakpoints on [a, b].

    For a > 0 the breaks are a, 2a, 4a, ... below b.  For a == 0 they grade
    geometrically toward 0 from b (b/2^k down to b * 2^-levels_start).
    `levels_end` extra halvings are added toward b.
    """
    if not b > a:
        return [a, b]
    if a > 0:
        breaks = [a]
        while breaks[-1] * 2 < b * (1 - 1e-12):
            breaks.append(breaks[-1] * 2)
    else:
        breaks = [0.0] + [b * 2.0**-k for k in range(levels_start, 0, -1)]
    left = breaks[-1]
    for k in range(1, levels_end + 1):
        cut = b - (b - left) * 2.0**-k
        breaks.append(cut)
    breaks.append(b)
    return breaks


def composite_rule(
    a: float,
    b: float,
    nodes_per_panel: int,
    left_singularity: float = 0.0,
    sqrt_end: bool = False,
    levels_end: int = 0,
    levels_start: int = 20,
) -> tuple[np.ndarray, np.ndarray]:
    """Graded composite rule on [a, b].

    left_singularity > 0 (only with a == 0) puts a Gauss-Jacobi panel for
    s^(-left_singularity) first; sqrt_end treats the last panel with the
    square-root substitution.
    """
    breaks = graded_breaks(a, b, levels_end, levels_start)
    nodes, weights = [], []
    for i, (lo, hi) in enumerate(zip(breaks[:-1], breaks[1:])):
        last = i == len(breaks) - 2
        if i == 0 and a == 0 and left_singularity > 0:
            s, w = jacobi_panel(hi, nodes_per_panel, left_singularity)
        elif last and sqrt_end:
            s, w = sqrt_end_panel(lo, hi, nodes_per_panel)
        else:
            s, w = legendre_panel(lo, hi, nodes_per_panel)
        nodes.append(s)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)
