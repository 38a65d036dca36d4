"""Remainder curves, decay fits and limit-constant checks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateFit, PlateauNotReached
from .field import Field, lq_norm
from .parallel import parallel_map
from .profiles import Profiles, PsiIntegral, check_critical
from .solver import Trajectory

MODELS = ("pure_power", "power_times_log")
THEOREMS = ("T2.4", "T2.5", "B.sub", "B.critical", "B.super")
UNDERFLOW = 1e-280


@dataclass(frozen=True)
class RemainderCurve:
    q: float
    times: tuple[float, ...]
    values: tuple[float, ...]
    normalized: tuple[float, ...]
    label: str = ""

    def __post_init__(self):
        if any(v < 0 for v in self.values):
            raise ValueError("remainder norms are nonnegative")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")

    @classmethod
    def from_values(cls, q: float, times, values, dim: int, label: str = "") -> "RemainderCurve":
        times = tuple(float(t) for t in times)
        values = tuple(float(v) for v in values)
        scale = [t ** (0.5 * dim * (1.0 - 1.0 / q)) for t in times]
        return cls(q, times, values, tuple(s * v for s, v in zip(scale, values)), label)


@dataclass(frozen=True)
class DecayFit:
    slope: float
    prefactor: float
    window: tuple[float, float]
    residual: float
    model: str
    log_coefficient: float = 0.0
    stderr: float = 0.0
    points: int = 0


def measure_remainder(
    traj: Trajectory,
    profile: Callable[[float], Field],
    q_list: Sequence[float],
    times: Sequence[float],
    label: str = "",
) -> list[RemainderCurve]:
    """Curves of ||u(t) - profile(t)||_q, one per q, sharing one profile evaluation per t."""
    times = [float(t) for t in times]
    diffs = parallel_map(lambda t: traj.at(t) - profile(t), times)
    dim = traj.grid.dim
    return [
        RemainderCurve.from_values(q, times, [lq_norm(d, q) for d in diffs], dim, label)
        for q in q_list
    ]


def default_window(times: Sequence[float]) -> tuple[float, float]:
    """Drops the earliest two samples, keeps the latest."""
    if len(times) < 3:
        raise DegenerateFit("need at least four points in the fit window")
    return times[2], times[-1]


def _window_data(curve: RemainderCurve, window) -> tuple[np.ndarray, np.ndarray, tuple[float, float]]:
    window = tuple(window) if window is not None else default_window(curve.times)
    lo, hi = window
    t = np.array(curve.times)
    y = np.array(curve.normalized)
    keep = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
    t, y = t[keep], y[keep]
    if t.size < 4:
        raise DegenerateFit(f"window {window} holds {t.size} points, need at least 4")
    if not np.all(np.isfinite(y)) or np.any(y <= UNDERFLOW):
        raise DegenerateFit("remainder values underflow; nothing to fit")
    return t, y, (float(lo), float(hi))


def _least_squares(design: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
    coef, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    resid = rhs - design @ coef
    rms = float(np.sqrt(np.mean(resid**2)))
    dof = max(1, rhs.size - design.shape[1])
    cov = np.linalg.pinv(design.T @ design) * float(resid @ resid) / dof
    return coef, rms, np.sqrt(np.abs(np.diag(cov)))


def fit_decay(curve: RemainderCurve, model: str = "pure_power", window=None) -> DecayFit:
    """Least squares in log-log coordinates on the normalized curve.

    pure_power: log y = log c + slope log t.
    power_times_log: log y = log c + slope log t + log log t.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    t, y, window = _window_data(curve, window)
    lt = np.log(t)
    rhs = np.log(y)
    if model == "power_times_log":
        if np.any(t <= 1):
            raise DegenerateFit("power_times_log needs t > 1")
        rhs = rhs - np.log(lt)
    design = np.column_stack([np.ones_like(lt), lt])
    coef, rms, err = _least_squares(design, rhs)
    return DecayFit(float(coef[1]), float(math.exp(coef[0])), window, rms, model,
                    1.0 if model == "power_times_log" else 0.0, float(err[1]), int(t.size))


def fit_power_and_log(curve: RemainderCurve, window=None) -> DecayFit:
    """power_times_log with a free log exponent: log y = log c + slope log t + g log log t."""
    t, y, window = _window_data(curve, window)
    if np.any(t <= 1):
        raise DegenerateFit("power_times_log needs t > 1")
    lt = np.log(t)
    design = np.column_stack([np.ones_like(lt), lt, np.log(lt)])
    coef, rms, err = _least_squares(design, np.log(y))
    return DecayFit(float(coef[1]), float(math.exp(coef[0])), window, rms, "power_times_log",
                    float(coef[2]), float(err[1]), int(t.size))


def fit_log_coefficient(curve: RemainderCurve, slope: float = -0.5, window=None) -> DecayFit:
    """Free exponent of the log factor with the power fixed: log y - slope log t = log c + g log log t."""
    t, y, window = _window_data(curve, window)
    if np.any(t <= 1):
        raise DegenerateFit("log-coefficient fit needs t > 1")
    lt = np.log(t)
    rhs = np.log(y) - slope * lt
    design = np.column_stack([np.ones_like(lt), np.log(lt)])
    coef, rms, err = _least_squares(design, rhs)
    return DecayFit(slope, float(math.exp(coef[0])), window, rms, "power_times_log",
                    float(coef[1]), float(err[1]), int(t.size))


# -- limit constants --------------------------------------------------------------


@dataclass(frozen=True)
class LimitReport:
    theorem: str
    q: float
    times: tuple[float, ...]
    ratios: tuple[float, ...]
    target: float
    delta: float
    in_band: bool
    settled: bool
    rate: str

    @property
    def passed(self) -> bool:
        return self.in_band and self.settled

    @property
    def final_ratio(self) -> float:
        return self.ratios[-1]


def settling(ratios: Sequence[float]) -> bool:
    """|r(T) - r(T/2)| < |r(T/2) - r(T/4)| on the last three dyadic samples."""
    if len(ratios) < 3:
        return False
    r1, r2, r3 = ratios[-3:]
    return abs(r3 - r2) < abs(r2 - r1)


def limit_target(
    theorem: str, profiles: Profiles, q: float, psi: PsiIntegral | None = None
) -> tuple[float, Callable[[float], float], str]:
    """(target constant, rate function, rate label) for a limit statement."""
    sigma = profiles.exps.sigma
    if theorem == "B.sub":
        return lq_norm(profiles.star("R01"), q), lambda t: t**-sigma, f"t^-{sigma:g}"
    if theorem == "B.critical":
        check_critical(profiles.exps, 0)
        return (lq_norm(profiles.star("TildeR01"), q),
                lambda t: t**-0.5 * math.log(t), "t^-1/2 log t")
    if theorem == "T2.5":
        return lq_norm(profiles.star("R02"), q), lambda t: t ** (-2 * sigma), f"t^-{2 * sigma:g}"
    if theorem in ("T2.4", "B.super"):
        if psi is None:
            raise ValueError(f"{theorem} needs the psi integral")
        shape = profiles.a1k_difference(1.0, psi.mass_estimate, profiles.unit_grid)
        return lq_norm(shape, q), lambda t: t**-0.5, "t^-1/2"
    raise ValueError(f"unknown theorem {theorem!r}")


def remainder_profile(theorem: str, profiles: Profiles, k: int = 1) -> tuple[Callable[[float], Field], int]:
    """Profile subtracted from u, and its order."""
    if theorem in ("B.sub", "B.critical", "B.super"):
        return profiles.A0, 0
    if theorem == "T2.5":
        return (lambda t: profiles.A0k(1, t)), 1
    if theorem == "T2.4":
        return (lambda t: profiles.A0k(k, t)), k
    raise ValueError(f"unknown theorem {theorem!r}")


def verify_limit_constant(
    theorem: str,
    traj: Trajectory,
    profiles: Profiles,
    q_list: Sequence[float],
    times: Sequence[float],
    psi: PsiIntegral | None = None,
    k: int = 1,
    delta: float = 0.15,
    strict: bool = False,
) -> list[LimitReport]:
    """Ratio of the normalized remainder to rate(t) * target at each time."""
    if theorem not in THEOREMS:
        raise ValueError(f"unknown theorem {theorem!r}")
    if theorem == "B.super":
        k = 0
    if psi is not None and theorem in ("T2.4", "B.super") and psi.k != k:
        raise ValueError(f"psi computed for order {psi.k}, theorem needs {k}")
    profile, _ = remainder_profile(theorem, profiles, k)
    curves = measure_remainder(traj, profile, q_list, times, label=theorem)
    reports = []
    for curve in curves:
        target, rate, label = limit_target(theorem, profiles, curve.q, psi)
        if target > 0:
            ratios = tuple(y / (rate(t) * target) for t, y in zip(curve.times, curve.normalized))
            in_band = abs(ratios[-1] - 1.0) <= delta
        else:
            # vanishing constant: the remainder must be o(rate)
            ratios = tuple(y / rate(t) for t, y in zip(curve.times, curve.normalized))
            in_band = ratios[-1] <= delta * max(ratios)
        settled = settling(ratios)
        if strict and not settled:
            raise PlateauNotReached(f"{theorem} q={curve.q}: ratios {ratios[-3:]} not contracting")
        reports.append(LimitReport(theorem, curve.q, curve.times, ratios, target, delta, in_band, settled, label))
    return reports


@dataclass(frozen=True)
class NonOptimalityReport:
    power_fit: DecayFit
    log_fit: DecayFit
    coefficient_times: tuple[float, ...]
    coefficient_values: tuple[float, ...]
    odd_moment: float
    tilde_r02_max: float
    slope_tol: float = 0.05
    log_tol: float = 0.5

    @property
    def cauchy_differences(self) -> tuple[float, ...]:
        v = self.coefficient_values
        return tuple(abs(b - a) for a, b in zip(v, v[1:]))

    @property
    def slope_ok(self) -> bool:
        return abs(self.power_fit.slope + 0.5) <= self.slope_tol

    @property
    def log_ok(self) -> bool:
        return abs(self.log_fit.log_coefficient) < self.log_tol

    @property
    def coefficient_bounded(self) -> bool:
        diffs = self.cauchy_differences
        return len(diffs) >= 2 and all(b < a for a, b in zip(diffs, diffs[1:]))

    @property
    def cancellation_ok(self) -> bool:
        return abs(self.odd_moment) <= 1e-8 and self.tilde_r02_max <= 1e-8

    @property
    def passed(self) -> bool:
        return self.slope_ok and self.log_ok and self.coefficient_bounded and self.cancellation_ok


def verify_nonoptimality_critical(
    traj: Trajectory,
    profiles: Profiles,
    q: float = 1.0,
    times: Sequence[float] | None = None,
    window=None,
    coefficient_times: Sequence[float] | None = None,
) -> NonOptimalityReport:
    """Checks that u - A_{0,1} decays like t^(-1/2) with no log factor at p = 1 + 3/(2n)."""
    check_critical(profiles.exps, 1)
    if profiles.f.kind not in ("abs_power_signed", "abs_power"):
        raise ValueError("needs f = |s|^(p-1) s or |s|^p")
    times = times if times is not None else [t for t in traj.times if t >= 16 and _dyadic(t)]
    (curve,) = measure_remainder(traj, lambda t: profiles.A0k(1, t), [q], times, "T2.6")
    power = fit_decay(curve, "pure_power", window)
    logfit = fit_log_coefficient(curve, -0.5, window)
    ctimes = tuple(coefficient_times or [2.0**j for j in range(2, 13)])
    cvals = tuple(profiles.tilde_coefficient(1, t) for t in ctimes)
    return NonOptimalityReport(
        power, logfit, ctimes, cvals, profiles.odd_moment_check(),
        lq_norm(profiles.tilde_r02(), math.inf),
    )


def _dyadic(t: float) -> bool:
    e = math.log2(t)
    return abs(e - round(e)) < 1e-12


# -- CSV output ---------------------------------------------------------------------

REMAINDER_HEADER = ("experiment", "q", "t", "raw_norm", "normalized_norm", "target_rate", "target_constant")
FIT_HEADER = ("experiment", "label", "q", "model", "slope", "prefactor", "log_coefficient",
              "t_lo", "t_hi", "residual", "points")


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isinf(x):
            return "inf"
        return repr(x)
    return str(x)


def write_remainder_csv(
    path: Path, experiment: str, curves: Sequence[RemainderCurve],
    target_rate: str = "", target_constants: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    target_constants = target_constants or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REMAINDER_HEADER)
        for c in curves:
            const = target_constants.get(c.q, "")
            for t, v, y in zip(c.times, c.values, c.normalized):
                w.writerow([experiment, _fmt(float(c.q)), _fmt(t), _fmt(v), _fmt(y), target_rate, _fmt(const)])
    return path


def write_fits_csv(path: Path, experiment: str, fits: Sequence[tuple[str, float, DecayFit]]) -> Path:
    """fits: (label, q, fit) triples."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIT_HEADER)
        for label, q, fit in fits:
            w.writerow([experiment, label, _fmt(float(q)), fit.model, _fmt(fit.slope), _fmt(fit.prefactor),
                        _fmt(fit.log_coefficient), _fmt(fit.window[0]), _fmt(fit.window[1]),
                        _fmt(fit.residual), fit.points])
    return path


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
