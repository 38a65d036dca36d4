"""Grids, sampled fields, dilations, norms and moments.

Every function lives on a uniform periodic grid over the box [-L, L)^n with
nodes x_j = -L + j*dx.  Integrals are plain Riemann sums, which on a periodic
grid coincide with the midpoint/trapezoid rule and are spectrally accurate for
smooth decaying integrands.

Spectral helpers use the continuous Fourier transform

    F(xi) = integral of phi(x) exp(-i xi.x) dx

sampled at the grid wavenumbers in FFT order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Iterator

import numpy as np
from scipy import fft as sfft
from scipy.signal import czt

from .errors import (
    BoundaryMassWarning,
    GridMismatch,
    NonFiniteField,
    OrderTooHigh,
    ScaleOutOfRange,
)

MAX_ORDER = 4
BOUNDARY_THRESHOLD = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on [-L, L)^n with N points per axis."""

    dim: int
    half_width: float
    points_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        n = self.points_per_axis
        if n < 8 or n & (n - 1):
            raise ValueError(f"points_per_axis must be a power of two >= 8, got {n}")
        object.__setattr__(self, "half_width", float(self.half_width))

    @property
    def spacing(self) -> float:
        # division by a power of two is exact in binary floating point
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @cached_property
    def coords(self) -> np.ndarray:
        """1D node coordinates shared by every axis."""
        return -self.half_width + self.spacing * np.arange(self.points_per_axis)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        """Sparse broadcasting coordinate arrays, one per axis."""
        return tuple(np.meshgrid(*([self.coords] * self.dim), indexing="ij", sparse=True))

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(x * x for x in self.mesh))

    @cached_property
    def box_radius(self) -> np.ndarray:
        """max_j |x_j|, the distance used for box containment."""
        out = np.zeros(self.shape)
        for x in self.mesh:
            out = np.maximum(out, np.abs(x))
        return out

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """1D angular wavenumbers in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.points_per_axis, d=self.spacing)

    @cached_property
    def wave_mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.wavenumbers] * self.dim), indexing="ij", sparse=True))

    @cached_property
    def ksq(self) -> np.ndarray:
        """|xi|^2 on the full spectral grid."""
        return np.broadcast_to(sum(k * k for k in self.wave_mesh), self.shape).copy()

    @cached_property
    def nyquist_mask(self) -> tuple[np.ndarray, ...]:
        """Per-axis boolean arrays, True off the unpaired Nyquist mode."""
        ok = np.ones(self.points_per_axis, dtype=bool)
        ok[self.points_per_axis // 2] = False
        return tuple(np.meshgrid(*([ok] * self.dim), indexing="ij", sparse=True))

    @cached_property
    def ft_phase(self) -> np.ndarray:
        """exp(-i xi.x_0) with x_0 the lower corner; equals (-1)^(sum of indices)."""
        m = np.rint(np.fft.fftfreq(self.points_per_axis) * self.points_per_axis).astype(int)
        sign = np.where(m % 2 == 0, 1.0, -1.0)
        out = np.ones(self.shape)
        for axis in range(self.dim):
            shape = [1] * self.dim
            shape[axis] = -1
            out = out * sign.reshape(shape)
        return out

    def shell_mask(self, layers: int = 2) -> np.ndarray:
        """Points within `layers` cells of the box boundary."""
        edge = self.half_width - layers * self.spacing
        near = np.zeros(self.shape, dtype=bool)
        for x in self.mesh:
            near = near | (np.abs(x) >= edge)
        return near

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape))

    def sample(self, func) -> "Field":
        """Evaluate func(*mesh) on the grid."""
        return Field(self, np.broadcast_to(func(*self.mesh), self.shape))


@dataclass(frozen=True, eq=False)
class Field:
    """Real function sampled on a GridSpec.  Immutable."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise NonFiniteField("field contains NaN or Inf")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def _check(self, other: "Field") -> None:
        if other.grid != self.grid:
            raise GridMismatch(f"{self.grid} vs {other.grid}")

    def __add__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values + other.values)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values - other.values)
        return NotImplemented

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __mul__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.grid, self.values * other.values)
        if np.isscalar(other):
            return Field(self.grid, float(other) * self.values)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return Field(self.grid, self.values / float(other))
        return NotImplemented

    def map(self, func) -> "Field":
        return Field(self.grid, func(self.values))

    def reflect(self) -> "Field":
        """x -> -x.  On the periodic grid index j maps to (N - j) mod N."""
        v = self.values
        for axis in range(self.grid.dim):
            v = np.roll(np.flip(v, axis=axis), 1, axis=axis)
        return Field(self.grid, v)

    def ft(self) -> np.ndarray:
        """Continuous Fourier transform sampled at the grid wavenumbers."""
        return self.grid.cell_volume * self.grid.ft_phase * sfft.fftn(self.values)

    @classmethod
    def from_ft(cls, grid: GridSpec, spectrum: np.ndarray) -> "Field":
        vals = sfft.ifftn(spectrum * grid.ft_phase).real / grid.cell_volume
        return cls(grid, vals)

    def at_origin(self) -> float:
        idx = (self.grid.points_per_axis // 2,) * self.grid.dim
        return float(self.values[idx])


@dataclass(frozen=True, order=True)
class MultiIndex:
    """Multi-index alpha in Z_{>=0}^n of order at most 4."""

    components: tuple[int, ...]

    def __post_init__(self):
        comps = tuple(int(c) for c in self.components)
        if any(c < 0 for c in comps):
            raise ValueError("multi-index components must be nonnegative")
        if sum(comps) > MAX_ORDER:
            raise OrderTooHigh(f"order {sum(comps)} exceeds {MAX_ORDER}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def zero(cls, dim: int) -> "MultiIndex":
        return cls((0,) * dim)

    @classmethod
    def unit(cls, j: int, dim: int) -> "MultiIndex":
        comps = [0] * dim
        comps[j] = 1
        return cls(tuple(comps))

    @classmethod
    def coerce(cls, value, dim: int) -> "MultiIndex":
        """Accept a MultiIndex, a tuple, or an integer order in 1D (0 means zero in any dim)."""
        if isinstance(value, MultiIndex):
            out = value
        elif isinstance(value, (int, np.integer)):
            if value == 0:
                return cls.zero(dim)
            if dim != 1:
                raise ValueError("integer multi-index only allowed in 1D")
            out = cls((int(value),))
        else:
            out = cls(tuple(value))
        if out.dim != dim:
            raise ValueError(f"multi-index {out.components} does not match dim {dim}")
        return out

    @classmethod
    def of_order(cls, order: int, dim: int) -> Iterator["MultiIndex"]:
        for comps in product(range(order + 1), repeat=dim):
            if sum(comps) == order:
                yield cls(comps)

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def order(self) -> int:
        return sum(self.components)

    @property
    def factorial(self) -> int:
        return math.prod(math.factorial(c) for c in self.components)

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        return MultiIndex(tuple(a + b for a, b in zip(self.components, other.components)))

    def monomial(self, grid: GridSpec) -> np.ndarray:
        out = np.ones(grid.shape)
        for x, c in zip(grid.mesh, self.components):
            if c:
                out = out * x**c
        return out


NONLINEARITY_KINDS = ("abs_power_signed", "abs_power", "integer_power")


@dataclass(frozen=True)
class Nonlinearity:
    """Flux function f with exponent p: |s|^(p-1) s, |s|^p, or s^p."""

    kind: str
    exponent: float

    def __post_init__(self):
        if self.kind not in NONLINEARITY_KINDS:
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if not self.exponent > 1:
            raise ValueError("exponent must exceed 1")
        if self.kind == "integer_power" and float(self.exponent) != int(self.exponent):
            raise ValueError("integer_power needs an integer exponent")
        object.__setattr__(self, "exponent", float(self.exponent))

    @property
    def p(self) -> float:
        return self.exponent

    @property
    def lipschitz_constant(self) -> float:
        """C with |f(a)-f(b)| <= C (|a|^(p-1) + |b|^(p-1)) |a-b|."""
        return self.exponent

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        p = self.exponent
        if self.kind == "abs_power_signed":
            return np.abs(s) ** (p - 1) * s
        if self.kind == "abs_power":
            return np.abs(s) ** p
        return s ** int(p)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        p = self.exponent
        if self.kind == "abs_power_signed":
            return p * np.abs(s) ** (p - 1)
        if self.kind == "abs_power":
            return p * np.abs(s) ** (p - 1) * np.sign(s)
        return p * s ** (int(p) - 1)

    def scalar(self, s: float) -> float:
        return float(self(np.float64(s)))

    def scalar_derivative(self, s: float) -> float:
        return float(self.derivative(np.float64(s)))


@dataclass(frozen=True)
class FujitaClass:
    regime: str  # "subcritical", "critical" or "supercritical"
    k: int


@dataclass(frozen=True)
class ScalingExponents:
    """Exponent bookkeeping for dimension n and power p."""

    n: int
    p: float
    tol: float = 1e-12

    @property
    def sigma(self) -> float:
        return 0.5 * self.n * (self.p - 1.0) - 0.5

    @property
    def gamma(self) -> float:
        """Decay exponent of the mass of f(A_0(s)): n(p-1)/2 = sigma + 1/2."""
        return 0.5 * self.n * (self.p - 1.0)

    def critical_exponent(self, k: int) -> float:
        """p at which (k+1) sigma = 1/2."""
        return 1.0 + (k + 2) / ((k + 1) * self.n)

    def recursion_ceiling(self, k: int) -> float:
        """Upper end of the p-range where the order-k recursion is defined."""
        if k == 0:
            return math.inf
        return 1.0 + (k + 1) / (k * self.n)

    def fujita_class(self, k: int) -> FujitaClass:
        gap = (k + 1) * self.sigma - 0.5
        if abs(gap) <= self.tol:
            return FujitaClass("critical", k)
        return FujitaClass("subcritical" if gap < 0 else "supercritical", k)


def lq_norm(phi: Field, q: float) -> float:
    """Riemann-sum L^q norm; grid maximum for q = inf."""
    if not (q >= 1):
        raise ValueError("q must lie in [1, inf]")
    a = np.abs(phi.values)
    if math.isinf(q):
        return float(a.max())
    if q == 1:
        return float(a.sum() * phi.grid.cell_volume)
    peak = a.max()
    if peak == 0:
        return 0.0
    # scale by the peak to keep large q from overflowing
    return float(peak * ((a / peak) ** q).sum() ** (1.0 / q) * phi.grid.cell_volume ** (1.0 / q))


def _check_boundary(phi: Field, threshold: float) -> None:
    peak = np.abs(phi.values).max()
    if peak == 0:
        return
    edge = np.abs(phi.values[phi.grid.shell_mask()]).max()
    if edge > threshold * peak:
        warnings.warn(
            f"boundary shell carries {edge / peak:.2e} of the peak; moments untrusted",
            BoundaryMassWarning,
            stacklevel=3,
        )


def moment(beta, phi: Field, threshold: float = BOUNDARY_THRESHOLD) -> float:
    """M_beta = (1/beta!) * integral of x^beta phi."""
    beta = MultiIndex.coerce(beta, phi.grid.dim)
    if beta.order > 2:
        raise OrderTooHigh("moments are supported up to order 2")
    _check_boundary(phi, threshold)
    total = (beta.monomial(phi.grid) * phi.values).sum() * phi.grid.cell_volume
    return float(total / beta.factorial)


def weighted_l1_norm(phi: Field, threshold: float = BOUNDARY_THRESHOLD) -> float:
    """Integral of |x| |phi(x)|."""
    _check_boundary(phi, threshold)
    return float((phi.grid.radius * np.abs(phi.values)).sum() * phi.grid.cell_volume)


def ft_on_lattice(phi: Field, k0: float, dk: float, count: int) -> np.ndarray:
    """Continuous Fourier transform of phi on the lattice k0 + m*dk, m < count, per axis.

    Evaluated with a chirp-z transform along each axis, so the lattice need
    not match the grid's own wavenumbers.
    """
    g = phi.grid
    h, L = g.spacing, g.half_width
    freqs = k0 + dk * np.arange(count)
    out = phi.values.astype(complex)
    for axis in range(g.dim):
        out = czt(out, m=count, w=np.exp(-1j * dk * h), a=np.exp(1j * k0 * h), axis=axis)
        shape = [1] * g.dim
        shape[axis] = -1
        out = out * (h * np.exp(1j * freqs * L)).reshape(shape)
    return out


def scaled_ft(phi: Field, scale: float, target: GridSpec | None = None) -> np.ndarray:
    """phi's transform at scale * xi for the wavenumbers xi of `target`, in FFT order."""
    target = target or phi.grid
    n = target.points_per_axis
    dxi = np.pi / target.half_width
    lattice = ft_on_lattice(phi, -scale * dxi * (n // 2), scale * dxi, n)
    # the band-limited interpolant carries nothing beyond the source Nyquist
    k = scale * dxi * (np.arange(n) - n // 2)
    inside = np.abs(k) < np.pi / phi.grid.spacing
    for axis in range(target.dim):
        shape = [1] * target.dim
        shape[axis] = -1
        lattice = lattice * inside.reshape(shape)
    return sfft.ifftshift(lattice)


def dilate(t: float, phi: Field, target: GridSpec | None = None, tol: float = 1e-6) -> Field:
    """Parabolic dilation t^(-n/2) phi(x / sqrt(t)), sampled on `target` (default: phi's grid).

    Band-limited evaluation: the transform of the dilate is phi_hat(sqrt(t) xi).
    Raises ScaleOutOfRange if the dilate does not fit in the target box or is
    not resolved by its grid, judged at relative level `tol`.
    """
    if not t > 0:
        raise ValueError("dilation time must be positive")
    target = target or phi.grid
    if t == 1 and target == phi.grid:
        return phi
    if target.dim != phi.grid.dim:
        raise GridMismatch("dimension mismatch in dilation")
    peak = np.abs(phi.values).max()
    if peak == 0:
        return target.zeros()
    root = math.sqrt(t)
    significant = np.abs(phi.values) > tol * peak
    reach = phi.grid.box_radius[significant].max()
    if root * reach > target.half_width:
        raise ScaleOutOfRange(
            f"dilate by t={t:g} reaches |x|={root * reach:.3g} beyond half width {target.half_width:g}"
        )
    spectrum = scaled_ft(phi, root, target)
    edge = np.abs(spectrum[~_inner_band(target)])
    if edge.size and edge.max() > tol * np.abs(spectrum).max():
        raise ScaleOutOfRange(f"dilate by t={t:g} is not resolved on the target grid")
    return Field.from_ft(target, spectrum)


def _inner_band(grid: GridSpec) -> np.ndarray:
    """Wavenumbers inside 3/4 of the Nyquist band on every axis."""
    cut = 0.75 * np.pi / grid.spacing
    inside = np.ones(grid.shape, dtype=bool)
    for k in grid.wave_mesh:
        inside = inside & (np.abs(k) <= cut)
    return inside
