"""Asymptotic profiles built from Duhamel integrals.

Notation used in names: A0 is the mass mode M * G_t; A0k(k) the recursive
profile of order k; tildeA the critical log-corrected profile; A1k the
first-moment corrected profile; psi the time-integrated flux discrepancy.
Star shapes live on a unit-time grid and are dilated to later times.

Fourier spectra in this module follow Field.ft: continuous transforms at
the grid wavenumbers.  The flux of the mass mode is a Gaussian power,
f(M G_s) = f(M) (4 pi s)^(-gamma) p^(-n/2) G_{s/p} with gamma = n(p-1)/2,
so its transform is known exactly and small times need no spatial resolution.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import QuadratureBudgetExceeded, RangeViolation, TailBudgetExceeded
from .field import Field, GridSpec, MultiIndex, Nonlinearity, ScalingExponents, lq_norm, scaled_ft
from .heat import gaussian_values, hermite_gaussian, propagator
from .parallel import parallel_map
from .quadrature import composite_rule, jacobi_panel
from .solver import Trajectory

FAMILIES = (
    "A0k", "TildeA0", "A1k", "Lambda",
    "Star_R02", "Star_S01", "Star_S02", "Star_TildeR01", "BurgersWave",
)
STAR_SHAPES = ("S01", "R01", "S02", "R02", "TildeR01")
THETA_NODES = 64


def default_unit_grid(dim: int) -> GridSpec:
    return GridSpec(dim, 16.0, 2048 if dim == 1 else 256)


# -- generic Duhamel quadrature -------------------------------------------------


def duhamel(
    t: float,
    integrand,
    s_range: tuple[float, float],
    singular_end: bool = False,
    *,
    grid: GridSpec,
    convection,
    nodes_per_panel: int = 16,
    left_singularity: float = 0.0,
    tol: float | None = None,
    max_nodes_per_panel: int = 128,
) -> Field:
    """Integral over s in s_range of a . grad e^{(t-s) Lap} integrand(s).

    integrand(s) returns a Field or its transform (complex array on the grid's
    spectral lattice).  Panels are graded dyadically; when s_range starts at
    0, a Gauss-Jacobi panel absorbs an s^(-left_singularity) blow-up, and
    singular_end applies s = t - tau^2 on the last panel.  With tol set, the
    panel order is doubled until successive results agree in L^1.
    """
    s0, s1 = map(float, s_range)
    if not 0 <= s0 <= s1 <= t * (1 + 1e-14):
        raise ValueError(f"s_range {s_range} not inside [0, {t}]")
    if s1 == s0:
        return grid.zeros()
    prop = propagator(grid)
    grad = prop.gradient_along(convection)

    def run(npp: int) -> Field:
        nodes, weights = composite_rule(
            s0, s1, npp, left_singularity if s0 == 0 else 0.0, sqrt_end=singular_end
        )
        specs = parallel_map(lambda s: _as_spectrum(integrand(s), grid), nodes)
        acc = np.zeros(grid.shape, dtype=complex)
        for s, w, spec in zip(nodes, weights, specs):
            acc += w * prop.multiplier(t - s) * spec
        return Field.from_ft(grid, grad * acc)

    result = run(nodes_per_panel)
    if tol is None:
        return result
    npp = nodes_per_panel
    while True:
        npp *= 2
        if npp > max_nodes_per_panel:
            raise QuadratureBudgetExceeded(f"no agreement to {tol:g} with {npp // 2} nodes per panel")
        refined = run(npp)
        if lq_norm(refined - result, 1) < tol:
            return refined
        result = refined


def _as_spectrum(value, grid: GridSpec) -> np.ndarray:
    if isinstance(value, Field):
        if value.grid != grid:
            raise ValueError("integrand lives on a different grid")
        return value.ft()
    arr = np.asarray(value)
    if arr.shape != grid.shape:
        raise ValueError("integrand spectrum has the wrong shape")
    return arr


# -- profile requests --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProfileSpec:
    """Which asymptotic object to build, and with which data."""

    family: str
    nonlinearity: Nonlinearity
    convection: tuple[float, ...]
    mass: float
    first_moments: tuple[float, ...] = ()
    order: int = 0
    nodes_per_panel: int = 16
    alpha: tuple[int, ...] | None = None
    m: int | None = None
    trajectory: Trajectory | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown profile family {self.family!r}")
        if self.nodes_per_panel < 8:
            raise ValueError("quadrature budget must be at least 8 nodes per panel")
        a = tuple(float(x) for x in np.atleast_1d(self.convection))
        object.__setattr__(self, "convection", a)
        if not self.first_moments:
            object.__setattr__(self, "first_moments", (0.0,) * len(a))
        exps = ScalingExponents(len(a), self.nonlinearity.p)
        if self.family == "A0k":
            check_a0k_range(exps, self.order)
        elif self.family == "A1k":
            check_a1k_range(exps, self.order)
        elif self.family == "TildeA0":
            check_critical(exps, self.order - 1)


def check_a0k_range(exps: ScalingExponents, k: int) -> None:
    lo, hi = 1.0 + 1.0 / exps.n, exps.recursion_ceiling(k)
    if not lo < exps.p < hi:
        raise RangeViolation(f"order {k} needs {lo:g} < p < {hi:g}, got p={exps.p:g}")


def check_a1k_range(exps: ScalingExponents, k: int) -> None:
    lo, hi = exps.critical_exponent(k), exps.recursion_ceiling(k)
    if not lo < exps.p < hi:
        raise RangeViolation(f"first-moment profile of order {k} needs {lo:g} < p < {hi:g}, got p={exps.p:g}")


def check_critical(exps: ScalingExponents, k: int) -> None:
    if abs(exps.p - exps.critical_exponent(k)) > 1e-12:
        raise RangeViolation(
            f"critical profile of order {k + 1} needs p = {exps.critical_exponent(k):g}, got p={exps.p:g}"
        )


@dataclass(frozen=True, eq=False)
class PsiIntegral:
    """Time-integrated flux discrepancy of order k, truncated at tail_time."""

    k: int
    value: Field
    tail_time: float
    tail_bound: float
    mass: float
    mass_tail: float = 0.0
    node_times: tuple[float, ...] = field(default=(), repr=False)
    node_masses: tuple[float, ...] = field(default=(), repr=False)

    @property
    def mass_estimate(self) -> float:
        """Truncated mass plus the power-law extrapolated tail."""
        return self.mass + self.mass_tail


# -- the builder --------------------------------------------------------------------


class Profiles:
    """Builds every profile for fixed data (f, a, M_0, first moments) on a grid."""

    def __init__(
        self,
        grid: GridSpec,
        nonlinearity: Nonlinearity,
        convection,
        mass: float,
        first_moments=None,
        nodes_per_panel: int = 16,
        unit_grid: GridSpec | None = None,
        singular_end: bool = False,
    ):
        if nodes_per_panel < 8:
            raise ValueError("quadrature budget must be at least 8 nodes per panel")
        self.grid = grid
        self.f = nonlinearity
        self.a = tuple(float(x) for x in np.atleast_1d(convection))
        if len(self.a) != grid.dim:
            raise ValueError("convection vector dimension does not match grid")
        self.mass = float(mass)
        self.first_moments = tuple(first_moments) if first_moments is not None else (0.0,) * grid.dim
        self.nodes_per_panel = nodes_per_panel
        self.unit_grid = unit_grid or default_unit_grid(grid.dim)
        self.singular_end = singular_end
        self.exps = ScalingExponents(grid.dim, nonlinearity.p)
        self._memo: dict[tuple[int, float], np.ndarray] = {}
        self._lock = threading.Lock()
        self._stars: dict[str, Field] = {}

    @classmethod
    def from_trajectory(cls, traj: Trajectory, **kwargs) -> "Profiles":
        cfg = traj.config
        return cls(traj.grid, cfg.nonlinearity, cfg.convection, traj.conserved_mass,
                   traj.first_moments, **kwargs)

    @classmethod
    def from_spec(cls, spec: ProfileSpec, grid: GridSpec, **kwargs) -> "Profiles":
        return cls(grid, spec.nonlinearity, spec.convection, spec.mass, spec.first_moments,
                   nodes_per_panel=spec.nodes_per_panel, **kwargs)

    # exact pieces

    @property
    def gamma(self) -> float:
        return self.exps.gamma

    @property
    def flux_of_mass(self) -> float:
        return self.f.scalar(self.mass)

    def _power_prefactor(self) -> float:
        n, p = self.grid.dim, self.f.p
        return self.flux_of_mass * (4.0 * np.pi) ** (-self.gamma) * p ** (-0.5 * n)

    def mass_flux_spectrum(self, s: float, grid: GridSpec | None = None) -> np.ndarray:
        """Exact transform of f(A_0(s)) = f(M) G_s^p."""
        grid = grid or self.grid
        return self._power_prefactor() * s ** (-self.gamma) * np.exp(-(s / self.f.p) * grid.ksq)

    def in_theorem_range(self, k: int, t: float) -> bool:
        return t > 2.0**k

    def A0(self, t: float, grid: GridSpec | None = None) -> Field:
        """M_0 G_t, periodized on the box so that its grid mass is exactly M_0."""
        grid = grid or self.grid
        return Field.from_ft(grid, self.mass * np.exp(-t * grid.ksq))

    def odd_mode(self, coeffs, t: float, grid: GridSpec | None = None) -> Field:
        """sum_j c_j delta_t(x_j G_1)."""
        grid = grid or self.grid
        total = grid.zeros()
        for j, c in enumerate(coeffs):
            if c:
                total = total + c * hermite_gaussian(grid, MultiIndex.unit(j, grid.dim), t)
        return total

    # recursive profiles

    def R01(self, t: float, grid: GridSpec | None = None) -> Field:
        """A_{0,1}(t) - A_0(t) by Duhamel quadrature of the exact flux spectrum."""
        grid = grid or self.grid
        self._require_sub_fujita()
        return duhamel(
            t, lambda s: self.mass_flux_spectrum(s, grid), (0.0, t), self.singular_end,
            grid=grid, convection=self.a, nodes_per_panel=self.nodes_per_panel,
            left_singularity=self.gamma,
        )

    def A0k(self, k: int, t: float) -> Field:
        check_a0k_range(self.exps, k)
        if k == 0:
            return self.A0(t)
        if k == 1:
            return self.A0(t) + self.R01(t)
        if t < 1:
            raise ValueError("recursive profiles of order >= 2 are defined for t >= 1")
        early = duhamel(
            t, self.mass_flux_spectrum, (0.0, 1.0), False, grid=self.grid, convection=self.a,
            nodes_per_panel=self.nodes_per_panel, left_singularity=self.gamma,
        )
        late = duhamel(
            t, lambda s: self.flux_spectrum(k - 1, s), (1.0, t), self.singular_end,
            grid=self.grid, convection=self.a, nodes_per_panel=self.nodes_per_panel,
        )
        return self.A0(t) + early + late

    def flux_spectrum(self, k: int, s: float) -> np.ndarray:
        """Transform of f(A_{0,k}(s)) evaluated pointwise on the grid; memoized."""
        if k < 0:
            return np.zeros(self.grid.shape, dtype=complex)
        key = (k, float(s))
        with self._lock:
            hit = self._memo.get(key)
        if hit is not None:
            return hit
        spec = self.A0k(k, s).map(self.f).ft()
        spec.setflags(write=False)
        with self._lock:
            self._memo[key] = spec
        return spec

    def flux_mass(self, k: int, s: float) -> float:
        """M_0(f(A_{0,k}(s))), with f(A_{0,-1}) = 0."""
        return float(self.flux_spectrum(k, s).flat[0].real)

    # critical profile

    def tilde_coefficient(self, k: int, t: float, nodes_per_panel: int | None = None) -> float:
        """Integral over [1, t] of M_0(f(A_{0,k}(s)) - f(A_{0,k-1}(s)))."""
        if t <= 1:
            return 0.0
        nodes, weights = composite_rule(1.0, t, nodes_per_panel or self.nodes_per_panel)
        vals = [self.flux_mass(k, s) - self.flux_mass(k - 1, s) for s in nodes]
        return float(np.dot(weights, vals))

    def tildeA(self, k_plus_1: int, t: float, override: bool = False) -> Field:
        k = k_plus_1 - 1
        if not override:
            check_critical(self.exps, k)
        coeff = self.tilde_coefficient(k, t)
        correction = self.odd_mode([-0.5 * t**-0.5 * coeff * aj for aj in self.a], t)
        return self.A0k(k, t) + correction

    # first-moment profile

    def a1k_coefficients(self, psi_mass: float) -> list[float]:
        return [mj - aj * psi_mass for mj, aj in zip(self.first_moments, self.a)]

    def A1k(self, k: int, t: float, psi: PsiIntegral) -> Field:
        check_a1k_range(self.exps, k)
        if psi.k != k:
            raise ValueError(f"psi was computed for order {psi.k}, not {k}")
        return self.A0k(k, t) + self.a1k_difference(t, psi.mass_estimate)

    def a1k_difference(self, t: float, psi_mass: float, grid: GridSpec | None = None) -> Field:
        """A_{1,k}(t) - A_{0,k}(t) = (1/2) t^(-1/2) sum_j (M_{e_j} - a_j M_0(psi)) delta_t(x_j G_1)."""
        coeffs = [0.5 * t**-0.5 * c for c in self.a1k_coefficients(psi_mass)]
        return self.odd_mode(coeffs, t, grid)

    # star shapes on the unit grid

    def _require_sub_fujita(self) -> None:
        n, p = self.grid.dim, self.f.p
        if not 1 + 1 / n < p < 1 + 2 / n:
            raise RangeViolation(f"needs {1 + 1 / n:g} < p < {1 + 2 / n:g}, got p={p:g}")

    def star(self, which: str, override: bool = False) -> Field:
        if which not in STAR_SHAPES:
            raise ValueError(f"unknown star shape {which!r}")
        with self._lock:
            hit = self._stars.get(which)
        if hit is not None:
            return hit
        builder = {
            "S01": self._star_s01, "R01": lambda: self.flux_of_mass * self.star("S01"),
            "S02": self._star_s02,
            "R02": lambda: self.flux_of_mass * self.f.scalar_derivative(self.mass) * self.star("S02"),
            "TildeR01": lambda: self._star_tilde_r01(override),
        }[which]
        out = builder()
        with self._lock:
            self._stars[which] = out
        return out

    def _star_s01(self) -> Field:
        """Integral over theta in (0,1) of a . grad e^{(1-theta) Lap} G_theta^p, in closed form.

        Each theta contributes -(1/2) p^(-n/2) (4 pi theta)^(-gamma) (a.x) G_tau(x) / tau
        with tau = 1 - theta + theta/p.
        """
        self._require_sub_fujita()
        grid, n, p = self.unit_grid, self.grid.dim, self.f.p
        theta, w = jacobi_panel(1.0, THETA_NODES, self.gamma)
        total = np.zeros(grid.shape)
        for th, wt in zip(theta, w):
            tau = 1.0 - th + th / p
            total += wt * (4 * np.pi * th) ** (-self.gamma) / tau * gaussian_values(grid, tau)
        ax = sum(aj * x for aj, x in zip(self.a, grid.mesh))
        return Field(grid, -0.5 * p ** (-0.5 * n) * ax * total)

    def _star_s02(self) -> Field:
        """Nested flux shape of second order, without the f(M) f'(M) factor.

        The inner integrand G_theta^(p-1) S01(theta, .) equals
        theta^(-sigma-gamma) delta_theta(P) with P = S01 G_1^(p-1), so the outer
        integral is taken in Fourier space with P's transform at sqrt(theta) xi.
        """
        n, p = self.grid.dim, self.f.p
        if not 1 + 1 / n < p < 1 + 1.5 / n:
            raise RangeViolation(f"second-order shape needs {1 + 1 / n:g} < p < {1 + 1.5 / n:g}")
        grid = self.unit_grid
        P = self.star("S01") * Field(grid, gaussian_values(grid, 1.0) ** (p - 1))
        weight = self.exps.sigma + self.gamma
        # theta = u^2 near 0: the integrand is u^(1 - 2 weight) times a smooth function of u
        u, uw = composite_rule(0.0, math.sqrt(0.5), THETA_NODES // 2, left_singularity=2 * weight - 1, levels_start=2)
        tail = composite_rule(0.5, 1.0, THETA_NODES // 4, levels_end=6)
        nodes = np.concatenate([u**2, tail[0]])
        weights = np.concatenate([2 * u * uw, tail[1]])
        acc = np.zeros(grid.shape, dtype=complex)
        for th, wt in zip(nodes, weights):
            acc += wt * th ** (-weight) * np.exp(-(1 - th) * grid.ksq) * scaled_ft(P, math.sqrt(th))
        grad = propagator(grid).gradient_along(self.a)
        return Field.from_ft(grid, grad * acc)

    def _star_tilde_r01(self, override: bool) -> Field:
        n = self.grid.dim
        if not override:
            check_critical(self.exps, 0)
        coeff = -(1.0 / (8.0 * np.pi)) * (1.0 + 2.0 / n) ** (-0.5 * n) * self.flux_of_mass
        return self.odd_mode([coeff * aj for aj in self.a], 1.0, self.unit_grid)

    def odd_moment_check(self) -> float:
        """M_0(R_{0,1}(1) f'(A_0(1))) on the unit grid; zero by parity."""
        grid = self.unit_grid
        r01 = self.R01(1.0, grid)
        weight = self.A0(1.0, grid).map(self.f.derivative)
        return float((r01 * weight).values.sum() * grid.cell_volume)

    def tilde_r02(self) -> Field:
        """-(1/2) M_0(R_{0,1}(1) f'(A_0(1))) sum_j a_j x_j G_1: the would-be log mode."""
        coeff = -0.5 * self.odd_moment_check()
        return self.odd_mode([coeff * aj for aj in self.a], 1.0, self.unit_grid)


# -- module-level operations --------------------------------------------------------


def profile_A0k(profiles: Profiles, k: int, t: float) -> Field:
    return profiles.A0k(k, t)


def profile_tildeA(profiles: Profiles, k_plus_1: int, t: float, override: bool = False) -> Field:
    return profiles.tildeA(k_plus_1, t, override)


def profile_A1k(profiles: Profiles, k: int, t: float, psi: PsiIntegral) -> Field:
    return profiles.A1k(k, t, psi)


def star_shape(profiles: Profiles, which: str, override: bool = False) -> Field:
    return profiles.star(which, override)


def remainder_R01(profiles: Profiles, t: float) -> tuple[Field, float]:
    """R_{0,1}(t) on the analysis grid and the parity moment M_0(R_{0,1}(1) f'(A_0(1)))."""
    return profiles.R01(t), profiles.odd_moment_check()


def burgers_wave(grid: GridSpec, t: float, mass: float, a: float) -> Field:
    """Self-similar wave of u_t - u_xx = a (u^2)_x with mass M (1D)."""
    from scipy.special import erfc

    if grid.dim != 1:
        raise ValueError("the diffusion wave is one-dimensional")
    if a == 0:
        raise ValueError("a must be nonzero")
    if mass == 0:
        return grid.zeros()
    x = grid.coords
    g = gaussian_values(grid, t)
    c = math.expm1(-a * mass)
    upper = 0.5 * erfc(x / (2.0 * math.sqrt(t)))
    return Field(grid, -(c / a) * g / (1.0 + c * upper))


# -- psi ---------------------------------------------------------------------------


def psi_nodes(S_max: float, nodes_per_panel: int = 8) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """Quadrature rules on [0, 1] and [1, S_max] used by compute_psi."""
    early = composite_rule(0.0, 1.0, nodes_per_panel, levels_start=3)
    late = composite_rule(1.0, S_max, nodes_per_panel)
    return early, late


def psi_sample_times(S_max: float, nodes_per_panel: int = 8) -> list[float]:
    """Solver sample times needed by compute_psi."""
    (e, _), (l, _) = psi_nodes(S_max, nodes_per_panel)
    return sorted(set(e.tolist()) | set(l.tolist()))


def compute_psi(
    k: int,
    traj: Trajectory,
    S_max: float,
    profiles: Profiles | None = None,
    nodes_per_panel: int = 8,
    tail_tol: float | None = None,
) -> PsiIntegral:
    """psi_{0,k} from a trajectory sampled at psi_sample_times(S_max).

    k = 0 integrates f(u) over (0, S_max).  For k >= 1 the mass-mode flux is
    subtracted on (0, 1) (exactly, in Fourier space) and f(A_{0,k-1}) on
    (1, S_max).  The tail beyond S_max is modeled by a power law fitted on the
    last decade of nodes.
    """
    profiles = profiles or Profiles.from_trajectory(traj)
    grid = traj.grid
    f = profiles.f
    (e_nodes, e_w), (l_nodes, l_w) = psi_nodes(S_max, nodes_per_panel)
    acc = np.zeros(grid.shape, dtype=complex)
    times, masses, norms = [], [], []
    for s, w in zip(e_nodes, e_w):
        acc += w * traj.at(s).map(f).ft()
    if k >= 1:
        theta, tw = jacobi_panel(1.0, THETA_NODES, profiles.gamma)
        for s, w in zip(theta, tw):
            acc -= w * profiles.mass_flux_spectrum(s)
    for s, w in zip(l_nodes, l_w):
        integrand = traj.at(s).map(f)
        if k >= 1:
            integrand = integrand - profiles.A0k(k - 1, s).map(f)
        spec = integrand.ft()
        acc += w * spec
        times.append(s)
        masses.append(float(spec.flat[0].real))
        norms.append(lq_norm(integrand, 1))
    value = Field.from_ft(grid, acc)
    total_mass = float(acc.flat[0].real)

    times, masses, norms = map(np.asarray, (times, masses, norms))
    decade = times >= S_max / 10
    kappa = 0.5 + (k + 1) * profiles.exps.sigma
    tail_bound = math.inf
    if kappa > 1 and np.all(norms[decade] > 0):
        C = float(np.max(norms[decade] * times[decade] ** kappa))
        tail_bound = C * S_max ** (1 - kappa) / (kappa - 1)
    mass_tail = _power_tail(times[decade], masses[decade], S_max)
    if tail_tol is not None and tail_bound > tail_tol:
        raise TailBudgetExceeded(f"tail bound {tail_bound:.3e} exceeds {tail_tol:.3e}")
    return PsiIntegral(k, value, S_max, tail_bound, total_mass, mass_tail,
                       tuple(times.tolist()), tuple(masses.tolist()))


def _power_tail(times: np.ndarray, values: np.ndarray, S_max: float) -> float:
    """Integral beyond S_max of a fitted c s^(-kappa); zero when no clean power law fits."""
    if times.size < 3 or not (np.all(values > 0) or np.all(values < 0)):
        return 0.0
    slope, intercept = np.polyfit(np.log(times), np.log(np.abs(values)), 1)
    kappa = -slope
    if kappa <= 1:
        return 0.0
    c = math.copysign(math.exp(intercept), values[0])
    return c * S_max ** (1 - kappa) / (kappa - 1)
