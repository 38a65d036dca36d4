"""Gauss kernel, spectral heat propagator, Hermite polynomials and the
moment-expansion profiles of the heat semigroup."""

from __future__ import annotations

import math
import threading
import warnings
from collections import OrderedDict
from functools import lru_cache
from itertools import product

import numpy as np
from scipy import fft as sfft

from .errors import BoundaryMassWarning, OrderTooHigh, ScaleOutOfRange
from .field import Field, GridSpec, MultiIndex, moment

CACHE_SIZE = 64


def gaussian_values(grid: GridSpec, t: float) -> np.ndarray:
    """(4 pi t)^(-n/2) exp(-|x|^2 / 4t) on the grid, with no scale checks."""
    r2 = grid.radius**2
    return (4.0 * np.pi * t) ** (-0.5 * grid.dim) * np.exp(-r2 / (4.0 * t))


def gauss_kernel(grid: GridSpec, t: float) -> Field:
    """Sampled heat kernel G_t.

    Requires sqrt(t) >= 3 dx (resolved) and sqrt(t) <= L/6 (contained).
    """
    if not t > 0:
        raise ValueError("t must be positive")
    root = math.sqrt(t)
    if root < 3 * grid.spacing or root > grid.half_width / 6:
        raise ScaleOutOfRange(
            f"sqrt(t)={root:.4g} outside [{3 * grid.spacing:.4g}, {grid.half_width / 6:.4g}]"
        )
    return Field(grid, gaussian_values(grid, t))


class HeatPropagator:
    """Spectral heat semigroup on a grid, with an LRU cache of multipliers."""

    def __init__(self, grid: GridSpec, cache_size: int = CACHE_SIZE):
        self.grid = grid
        self.cache_size = cache_size
        self._multipliers: OrderedDict[float, np.ndarray] = OrderedDict()
        self._lock = threading.Lock()

    def multiplier(self, t: float) -> np.ndarray:
        """exp(-t |xi|^2), cached by exact time value."""
        t = float(t)
        with self._lock:
            cached = self._multipliers.get(t)
            if cached is not None:
                self._multipliers.move_to_end(t)
                return cached
        table = np.exp(-t * self.grid.ksq)
        table.setflags(write=False)
        with self._lock:
            self._multipliers[t] = table
            while len(self._multipliers) > self.cache_size:
                self._multipliers.popitem(last=False)
        return table

    @property
    def cached_times(self) -> list[float]:
        with self._lock:
            return list(self._multipliers)

    def derivative(self, alpha) -> np.ndarray:
        alpha = MultiIndex.coerce(alpha, self.grid.dim)
        return _derivative_table(self.grid, alpha.components)

    def gradient_along(self, direction) -> np.ndarray:
        """Multiplier of a . grad, i.e. i (a . xi), Nyquist modes removed."""
        return _gradient_table(self.grid, tuple(float(a) for a in direction))

    def apply_spectrum(self, t: float, alpha, spectrum: np.ndarray) -> np.ndarray:
        alpha = MultiIndex.coerce(alpha, self.grid.dim)
        out = spectrum
        if t != 0:
            out = out * self.multiplier(t)
        if alpha.order:
            out = out * self.derivative(alpha)
        return out

    def apply(self, t: float, alpha, phi: Field) -> Field:
        """d^alpha e^{t Lap} phi."""
        alpha = MultiIndex.coerce(alpha, self.grid.dim)
        if alpha.order > 3:
            raise OrderTooHigh("heat_apply supports derivatives up to order 3")
        if t < 0:
            raise ValueError("t must be nonnegative")
        if t == 0 and alpha.order == 0:
            return phi
        spec = self.apply_spectrum(t, alpha, sfft.fftn(phi.values))
        return Field(self.grid, sfft.ifftn(spec).real)


@lru_cache(maxsize=32)
def _derivative_table(grid: GridSpec, comps: tuple[int, ...]) -> np.ndarray:
    out = np.ones(grid.shape, dtype=complex)
    for k, mask, c in zip(grid.wave_mesh, grid.nyquist_mask, comps):
        if c:
            factor = (1j * k) ** c
            if c % 2:
                factor = factor * mask
            out = out * factor
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def _gradient_table(grid: GridSpec, direction: tuple[float, ...]) -> np.ndarray:
    out = np.zeros(grid.shape, dtype=complex)
    for k, mask, a in zip(grid.wave_mesh, grid.nyquist_mask, direction):
        if a:
            out = out + 1j * a * k * mask
    out.setflags(write=False)
    return out


@lru_cache(maxsize=16)
def propagator(grid: GridSpec) -> HeatPropagator:
    """Shared propagator per grid."""
    return HeatPropagator(grid)


def heat_apply(t: float, alpha, phi: Field) -> Field:
    """d^alpha e^{t Lap} phi via the grid's shared propagator."""
    return propagator(phi.grid).apply(t, alpha, phi)


# -- Hermite polynomials ------------------------------------------------------


@lru_cache(maxsize=None)
def _hermite_1d(order: int) -> tuple[tuple[int, int], ...]:
    """(power, integer coefficient) pairs of the 1D polynomial h_order."""
    terms = []
    for b in range(order // 2 + 1):
        coeff = (-1) ** b * math.factorial(order) // (math.factorial(b) * math.factorial(order - 2 * b))
        terms.append((order - 2 * b, coeff))
    return tuple(terms)


def hermite_coefficients(alpha) -> dict[tuple[int, ...], int]:
    """Monomial exponents -> integer coefficient, (-1)^|b| a!/(b!(a-2b)!) over 2b <= a."""
    if not isinstance(alpha, MultiIndex):
        alpha = MultiIndex(tuple(alpha))
    table: dict[tuple[int, ...], int] = {}
    for parts in product(*(_hermite_1d(c) for c in alpha.components)):
        powers = tuple(pw for pw, _ in parts)
        table[powers] = math.prod(c for _, c in parts)
    return table


def hermite_eval(alpha, x) -> np.ndarray | float:
    """Evaluate h_alpha at a point (sequence of n coordinates, or arrays)."""
    if not isinstance(alpha, MultiIndex):
        alpha = MultiIndex(tuple(alpha))
    coords = [x] if np.isscalar(x) or (alpha.dim == 1 and isinstance(x, np.ndarray)) else list(x)
    if len(coords) != alpha.dim:
        raise ValueError("point dimension does not match multi-index")
    total = 0.0
    for powers, coeff in hermite_coefficients(alpha).items():
        term = float(coeff)
        for xi, pw in zip(coords, powers):
            term = term * xi**pw
        total = total + term
    return total


def hermite_gaussian(grid: GridSpec, alpha, t: float = 1.0) -> Field:
    """delta_t(h_alpha G_1) evaluated in closed form on the grid."""
    alpha = MultiIndex.coerce(alpha, grid.dim)
    scaled = [x / math.sqrt(t) for x in grid.mesh]
    h = hermite_eval(alpha, scaled)
    g = gaussian_values(grid, t)
    return Field(grid, np.broadcast_to(h, grid.shape) * g)


def lambda_profile(alpha, m: int, t: float, phi: Field) -> Field:
    """Moment expansion of d^alpha e^{t Lap} phi to order m.

    (-2)^-|alpha| t^(-|alpha|/2) sum_{k<=m} 2^-k t^(-k/2) sum_{|beta|=k} M_beta(phi) delta_t(h_{alpha+beta} G_1)
    """
    grid = phi.grid
    alpha = MultiIndex.coerce(alpha, grid.dim)
    if m not in (0, 1, 2):
        raise ValueError("m must be 0, 1 or 2")
    if alpha.order + m > 4:
        raise OrderTooHigh("|alpha| + m must not exceed 4")
    if not t > 0:
        raise ValueError("t must be positive")
    total = np.zeros(grid.shape)
    with warnings.catch_warnings():
        warnings.simplefilter("error", BoundaryMassWarning)
        for k in range(m + 1):
            for beta in MultiIndex.of_order(k, grid.dim):
                mb = moment(beta, phi)
                if mb == 0.0:
                    continue
                shape = hermite_gaussian(grid, alpha + beta, t)
                total = total + (2.0**-k) * t ** (-0.5 * k) * mb * shape.values
    scale = (-2.0) ** (-alpha.order) * t ** (-0.5 * alpha.order)
    return Field(grid, scale * total)


def expansion_error_bound(alpha, m: int, t: float, q: float, phi: Field) -> tuple[float, float]:
    """Scaled expansion error and its moment bound, both computed on the grid.

    Returns (lhs, rhs) with
    lhs = t^((n/2)(1-1/q) + (|alpha|+m)/2) ||d^alpha e^{t Lap} phi - Lambda_{alpha,m}(t; phi)||_q
    rhs = 2^-(|alpha|+m+1) t^(-1/2) sum_{|beta|=m+1} ||h_{alpha+beta} G_1||_q ||x^beta phi||_1 / beta!
    """
    from .field import lq_norm

    grid = phi.grid
    alpha = MultiIndex.coerce(alpha, grid.dim)
    if alpha.order + m + 1 > 4:
        raise OrderTooHigh("|alpha| + m + 1 must not exceed 4")
    n = grid.dim
    err = heat_apply(t, alpha, phi) - lambda_profile(alpha, m, t, phi)
    lhs = t ** (0.5 * n * (1.0 - 1.0 / q) + 0.5 * (alpha.order + m)) * lq_norm(err, q)
    total = 0.0
    for beta in MultiIndex.of_order(m + 1, n):
        shape = lq_norm(hermite_gaussian(grid, alpha + beta, 1.0), q)
        weighted = float(np.abs(beta.monomial(grid) * phi.values).sum() * grid.cell_volume)
        total += shape * weighted / beta.factorial
    rhs = 2.0 ** -(alpha.order + m + 1) * t**-0.5 * total
    return float(lhs), float(rhs)
