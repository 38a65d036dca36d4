"""Long-time spectral solver for u_t - Lap u = a . grad f(u) on a periodic box.

The linear part is propagated exactly by exp(-t|xi|^2); the flux is advanced
with a Lawson-type (integrating factor) Dormand-Prince 5(4) pair whose
embedded fourth-order solution drives the step-size controller.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft

from .errors import BoxExhausted, StepFailure
from .field import Field, GridSpec, Nonlinearity, lq_norm
from .heat import gaussian_values, propagator
from .io import canonical_hash, export_field, grid_dict


# -- initial data ---------------------------------------------------------------


@dataclass(frozen=True)
class GaussianBump:
    """mass * G_spread(x - center)."""

    mass: float
    center: tuple[float, ...]
    spread: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.spread > 0:
            raise ValueError("spread must be positive")

    def values(self, grid: GridSpec) -> np.ndarray:
        if len(self.center) != grid.dim:
            raise ValueError("center dimension does not match grid")
        r2 = sum((x - c) ** 2 for x, c in zip(grid.mesh, self.center))
        g = (4.0 * np.pi * self.spread) ** (-0.5 * grid.dim) * np.exp(-r2 / (4.0 * self.spread))
        return self.mass * np.broadcast_to(g, grid.shape)


@dataclass(frozen=True)
class GaussianMixture:
    """Finite sum of Gaussian bumps; moments are known in closed form."""

    components: tuple[GaussianBump, ...]

    def sample(self, grid: GridSpec) -> Field:
        total = np.zeros(grid.shape)
        for bump in self.components:
            total = total + bump.values(grid)
        return Field(grid, total)

    @property
    def mass(self) -> float:
        return float(sum(b.mass for b in self.components))

    def first_moments(self, dim: int) -> tuple[float, ...]:
        return tuple(float(sum(b.mass * b.center[j] for b in self.components)) for j in range(dim))

    def describe(self) -> dict:
        return {"kind": "gaussian_mixture", "components": [asdict(b) for b in self.components]}

    def scaled(self, factor: float) -> "GaussianMixture":
        return GaussianMixture(tuple(GaussianBump(factor * b.mass, b.center, b.spread) for b in self.components))


def translated_gaussian(mass: float, center, spread: float = 0.5) -> GaussianMixture:
    center = (center,) if np.isscalar(center) else tuple(center)
    return GaussianMixture((GaussianBump(mass, center, spread),))


@dataclass(frozen=True, eq=False)
class ExplicitSamples:
    """Initial data given directly as grid samples."""

    field: Field

    def sample(self, grid: GridSpec) -> Field:
        if grid != self.field.grid:
            raise ValueError("explicit samples live on a different grid")
        return self.field

    @property
    def mass(self) -> float:
        return float(self.field.values.sum() * self.field.grid.cell_volume)

    def first_moments(self, dim: int) -> tuple[float, ...]:
        g = self.field.grid
        return tuple(float((x * self.field.values).sum() * g.cell_volume) for x in g.mesh)

    def describe(self) -> dict:
        return {"kind": "explicit", "sha256": canonical_hash(self.field.values)}


# -- configuration ------------------------------------------------------------------


@dataclass(frozen=True)
class StepPolicy:
    """Adaptive step parameters.

    Steps are capped by max(dt_min, growth * t) and by the embedded error
    controller with relative tolerance rtol (spectral L2 norm).
    """

    rtol: float = 1e-10
    growth: float = 0.1
    dt_min: float = 0.02
    dt_initial: float = 1e-3
    dt_floor: float = 1e-12
    max_rejects: int = 60
    box_tol: float = 1e-3
    dealias: bool = False


@dataclass(frozen=True, eq=False)
class SolverConfig:
    grid: GridSpec
    nonlinearity: Nonlinearity
    convection: tuple[float, ...]
    initial_data: GaussianMixture | ExplicitSamples
    t_end: float
    sample_times: tuple[float, ...]
    step_policy: StepPolicy = field(default_factory=StepPolicy)
    self_test: bool = False

    def __post_init__(self):
        a = tuple(float(x) for x in np.atleast_1d(self.convection))
        object.__setattr__(self, "convection", a)
        object.__setattr__(self, "sample_times", tuple(float(s) for s in self.sample_times))
        if len(a) != self.grid.dim:
            raise ValueError("convection vector dimension does not match grid")
        if not any(a) and not self.self_test:
            raise ValueError("a = 0 is only allowed in self-test mode")
        times = self.sample_times
        if any(not 0 < s <= self.t_end for s in times):
            raise ValueError("sample_times must lie in (0, t_end]")
        if any(b <= a_ for a_, b in zip(times, times[1:])):
            raise ValueError("sample_times must be strictly increasing")
        if self.step_policy.dealias and self.nonlinearity.kind != "integer_power":
            raise ValueError("dealiasing is only available for integer powers")

    def describe(self) -> dict:
        return {
            "grid": grid_dict(self.grid),
            "nonlinearity": {"kind": self.nonlinearity.kind, "exponent": self.nonlinearity.exponent},
            "convection": list(self.convection),
            "initial_data": self.initial_data.describe(),
            "t_end": self.t_end,
            "sample_times": list(self.sample_times),
            "step_policy": asdict(self.step_policy),
            "self_test": self.self_test,
        }

    @property
    def config_hash(self) -> str:
        return canonical_hash(self.describe())


# -- trajectory -------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    t: float
    dt: float
    max_norm: float
    mass_drift: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    samples: tuple[tuple[float, Field], ...]
    conserved_mass: float
    first_moments: tuple[float, ...]
    diagnostics: tuple[StepRecord, ...]
    config: SolverConfig
    rejected_steps: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples])

    @property
    def grid(self) -> GridSpec:
        return self.config.grid

    def at(self, t: float, rel: float = 1e-12) -> Field:
        for s, u in self.samples:
            if abs(s - t) <= rel * max(1.0, abs(t)):
                return u
        raise KeyError(f"no sample at t={t}")

    @property
    def max_mass_drift(self) -> float:
        return max((r.mass_drift for r in self.diagnostics), default=0.0)

    def decay_constant(self, q_list=(1.0, 2.0, math.inf)) -> float:
        """Empirical C in t^{(n/2)(1-1/q)} ||u(t)||_q <= C ||u_0||_1 over the samples."""
        env = decay_envelope(self, q_list)
        base = lq_norm(self.config.initial_data.sample(self.grid), 1)
        if base == 0:
            return 0.0
        return max(row["running_sup"] for row in env) / base

    def export(self, directory: Path, stem: str = "u") -> list[Path]:
        directory = Path(directory)
        written = []
        h = self.config.config_hash
        for i, (t, u) in enumerate(self.samples):
            written.extend(export_field(u, directory / f"{stem}_{i:04d}", t, h))
        return written


def decay_envelope(traj: Trajectory, q_list) -> list[dict]:
    """Rows (t, q, normalized norm, running sup over t for that q)."""
    if not traj.samples:
        raise ValueError("empty trajectory")
    n = traj.grid.dim
    rows = []
    for q in q_list:
        running = 0.0
        for t, u in traj.samples:
            value = t ** (0.5 * n * (1.0 - 1.0 / q)) * lq_norm(u, q)
            running = max(running, value)
            rows.append({"t": t, "q": q, "normalized": value, "running_sup": running})
    return rows


# -- integrator ------------------------------------------------------------------

_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_B_LOW = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)


class _Flux:
    """Spectral right-hand side a . grad f(u)."""

    def __init__(self, config: SolverConfig):
        grid = config.grid
        self.f = config.nonlinearity
        self.grad = propagator(grid).gradient_along(config.convection)
        self.active = bool(np.any(self.grad))
        self.mask = None
        if config.step_policy.dealias:
            cut = (2.0 / 3.0) * np.pi / grid.spacing
            keep = np.ones(grid.shape, dtype=bool)
            for k in grid.wave_mesh:
                keep = keep & (np.abs(k) <= cut)
            self.mask = keep

    def __call__(self, uh: np.ndarray) -> np.ndarray:
        if not self.active:
            return np.zeros_like(uh)
        u = sfft.ifftn(uh).real
        fh = sfft.fftn(self.f(u))
        if self.mask is not None:
            fh = fh * self.mask
        return self.grad * fh


def _lawson_step(uh, k1, h, ksq, flux):
    """One Lawson DP5(4) step; returns (new state, last stage flux, error estimate)."""
    cache: dict[float, np.ndarray] = {}

    def prop(tau):
        if tau == 0:
            return None
        out = cache.get(tau)
        if out is None:
            out = np.exp(-tau * ksq)
            cache[tau] = out
        return out

    def shifted(arr, tau):
        e = prop(tau)
        return arr if e is None else arr * e

    stages = [k1]
    for i in range(1, 7):
        acc = shifted(uh, _C[i] * h)
        for j, aij in enumerate(_A[i]):
            if aij:
                acc = acc + (h * aij) * shifted(stages[j], (_C[i] - _C[j]) * h)
        if i == 6:
            new = acc
        stages.append(flux(acc))
    err = np.zeros_like(uh)
    for j in range(7):
        d = _B[j] - _B_LOW[j]
        if d:
            err = err + (h * d) * shifted(stages[j], (1.0 - _C[j]) * h)
    return new, stages[6], err


def solve(config: SolverConfig) -> Trajectory:
    """Integrate from t = 0 to t_end, returning samples at config.sample_times."""
    grid = config.grid
    policy = config.step_policy
    ksq = grid.ksq
    flux = _Flux(config)
    u0 = config.initial_data.sample(grid)
    mass0 = float(u0.values.sum() * grid.cell_volume)
    mass_scale = 1.0 + abs(mass0)
    uh = sfft.fftn(u0.values)
    k1 = flux(uh)
    t = 0.0
    h_ctrl = policy.dt_initial
    targets = list(config.sample_times)
    if not targets or targets[-1] != config.t_end:
        targets.append(config.t_end)
    wanted = set(config.sample_times)
    samples, records = [], []
    rejects_total = 0

    for target in targets:
        while t < target:
            cap = max(policy.dt_min, policy.growth * t)
            h = min(h_ctrl, cap)
            clipped = t + h >= target * (1.0 - 1e-14)
            if clipped:
                h = target - t
            rejects = 0
            while True:
                new, k_last, err = _lawson_step(uh, k1, h, ksq, flux)
                scale = np.sqrt(np.sum(np.abs(new) ** 2)) + 1e-300
                ratio = np.sqrt(np.sum(np.abs(err) ** 2)) / (policy.rtol * scale)
                if ratio <= 1.0:
                    break
                rejects += 1
                rejects_total += 1
                h *= max(0.2, 0.9 * ratio**-0.2)
                clipped = False
                if rejects > policy.max_rejects or h < policy.dt_floor * max(1.0, t):
                    raise StepFailure(f"step size collapsed to {h:.3e} at t={t:.6g}")
            t = target if clipped else t + h
            uh, k1 = new, k_last
            grow = 5.0 if ratio == 0 else min(5.0, max(0.2, 0.9 * ratio**-0.2))
            if not clipped or h * grow > h_ctrl:
                h_ctrl = h * grow
            mass = float(uh.flat[0].real) * grid.cell_volume
            u = sfft.ifftn(uh).real
            if not np.all(np.isfinite(u)):
                raise StepFailure(f"non-finite state at t={t:.6g}")
            records.append(StepRecord(t, h, float(np.abs(u).max()), abs(mass - mass0) / mass_scale))
        if target in wanted:
            field_t = Field(grid, sfft.ifftn(uh).real)
            _check_box(field_t, policy.box_tol, t)
            samples.append((t, field_t))

    moments = config.initial_data.first_moments(grid.dim)
    return Trajectory(tuple(samples), mass0, moments, tuple(records), config, rejects_total)


def _check_box(u: Field, tol: float, t: float) -> None:
    peak = np.abs(u.values).max()
    if peak == 0:
        return
    edge = np.abs(u.values[u.grid.shell_mask()]).max()
    if edge > tol * peak:
        raise BoxExhausted(f"boundary carries {edge / peak:.2e} of the peak at t={t:g}")


def heat_reference(config: SolverConfig, t: float) -> Field:
    """e^{t Lap} u_0 by a single spectral multiplication."""
    u0 = config.initial_data.sample(config.grid)
    return propagator(config.grid).apply(t, 0, u0)


def box_for(t_end: float, support: float = 0.0, factor: float = 8.0) -> float:
    """Half width meeting L >= factor * sqrt(t_end) + support."""
    return factor * math.sqrt(t_end) + support


def gaussian_on(grid: GridSpec, t: float) -> Field:
    return Field(grid, gaussian_values(grid, t))
