"""Experiment runner: `asymptolab run <config.json>`, `plot <run_dir>`, `selftest`.

Exit codes: 0 all checks passed, 1 a check failed, 2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .analysis import (
    RemainderCurve,
    fit_decay,
    fit_power_and_log,
    measure_remainder,
    read_csv,
    verify_limit_constant,
    verify_nonoptimality_critical,
    write_fits_csv,
    write_remainder_csv,
)
from .errors import AsymptolabError, ConfigInvalid, MissingData
from .field import Field, GridSpec, Nonlinearity, ScalingExponents, dilate, lq_norm, moment
from .heat import expansion_error_bound
from .io import canonical_hash, file_sha256
from .plotting import profile_figure, remainder_figure
from .profiles import Profiles, burgers_wave, check_a0k_range, check_a1k_range, compute_psi, psi_sample_times
from .solver import GaussianBump, GaussianMixture, SolverConfig, StepPolicy, solve

SCHEMA_VERSION = 1
SCENARIOS = (
    "rate_table_k", "optimality_T2.4", "optimality_T2.5", "nonoptimality_T2.6",
    "zeroth_order_appendixB", "heat_expansion_prop33", "burgers_wave",
)
F_KINDS = ("abs_power_signed", "abs_power", "integer_power")
MANIFEST = "manifest.json"


# -- configuration --------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    scenario: str
    n: int
    p: float
    a: tuple[float, ...]
    f_kind: str
    initial_data: GaussianMixture
    half_width: float
    points_per_axis: int
    t_end: float
    t_first: float
    k: int
    q_list: tuple[float, ...]
    window: tuple[float, float] | None
    delta: float
    slope_tol: float
    nodes_per_panel: int
    rtol: float
    output_dir: Path
    raw: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def config_hash(self) -> str:
        return canonical_hash(self.raw)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.n, self.half_width, self.points_per_axis)

    @property
    def nonlinearity(self) -> Nonlinearity:
        return Nonlinearity(self.f_kind, self.p)

    @property
    def exponents(self) -> ScalingExponents:
        return ScalingExponents(self.n, self.p)

    @property
    def dyadic_times(self) -> list[float]:
        lo = round(math.log2(self.t_first))
        hi = math.floor(math.log2(self.t_end) + 1e-12)
        return [2.0**j for j in range(lo, hi + 1)]


def _q_value(raw) -> float:
    if isinstance(raw, str) and raw.lower() in ("inf", "infinity"):
        return math.inf
    q = float(raw)
    if not q >= 1:
        raise ValueError("q must lie in [1, inf]")
    return q


def _get(doc: dict, key: str, kind, default=None, required=False):
    if key not in doc or doc[key] is None:
        if required:
            raise ConfigInvalid(key, "missing required field")
        return default
    try:
        return kind(doc[key])
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(key, f"bad value {doc[key]!r}: {exc}") from None


def _initial_data(raw, n: int) -> GaussianMixture:
    raw = raw if raw is not None else {}
    if not isinstance(raw, dict):
        raise ConfigInvalid("initial_data", "must be an object")
    parts = raw.get("components", [raw])
    try:
        bumps = []
        for part in parts:
            center = part.get("center", [0.0] * n)
            center = [center] if np.isscalar(center) else list(center)
            if len(center) != n:
                raise ValueError(f"center needs {n} coordinates")
            bumps.append(GaussianBump(float(part.get("mass", 1.0)), tuple(center), float(part.get("spread", 0.5))))
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigInvalid("initial_data", str(exc)) from None
    return GaussianMixture(tuple(bumps))


def default_grid(n: int, t_end: float) -> tuple[float, int]:
    """Half width 8 sqrt(t_end) and the smallest power of two giving spacing <= 0.1875."""
    half_width = max(16.0, 8.0 * math.sqrt(t_end))
    points = 2 ** math.ceil(math.log2(2 * half_width / 0.1875))
    return half_width, points


def parse_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigInvalid("<root>", "configuration must be a JSON object")
    version = _get(doc, "schema_version", int, required=True)
    if version != SCHEMA_VERSION:
        raise ConfigInvalid("schema_version", f"unsupported version {version}, expected {SCHEMA_VERSION}")
    name = _get(doc, "name", str, required=True)
    scenario = _get(doc, "scenario", str, required=True)
    if scenario not in SCENARIOS:
        raise ConfigInvalid("scenario", f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    n = _get(doc, "n", int, 1)
    if n not in (1, 2):
        raise ConfigInvalid("n", "dimension must be 1 or 2")
    needs_p = scenario != "heat_expansion_prop33"
    p = _get(doc, "p", float, 2.0, required=needs_p)
    if not p > 1:
        raise ConfigInvalid("p", "exponent must exceed 1")
    default_kind = "integer_power" if scenario == "burgers_wave" else "abs_power_signed"
    f_kind = _get(doc, "f_kind", str, default_kind)
    if f_kind not in F_KINDS:
        raise ConfigInvalid("f_kind", f"choose from {', '.join(F_KINDS)}")
    a = _get(doc, "a", lambda v: tuple(float(x) for x in np.atleast_1d(v)), (1.0,) + (0.0,) * (n - 1))
    if len(a) != n:
        raise ConfigInvalid("a", f"convection vector needs {n} components")
    if not any(a):
        raise ConfigInvalid("a", "convection vector must be nonzero")
    t_end = _get(doc, "t_end", float, 64.0 if scenario == "heat_expansion_prop33" else 8192.0)
    t_first = _get(doc, "t_first", float, 4.0 if scenario == "heat_expansion_prop33" else 16.0)
    if not 0 < t_first <= t_end:
        raise ConfigInvalid("t_first", "needs 0 < t_first <= t_end")
    grid_doc = doc.get("grid") or {}
    if not isinstance(grid_doc, dict):
        raise ConfigInvalid("grid", "must be an object")
    half_width, points = default_grid(n, t_end)
    half_width = _get(grid_doc, "half_width", float, half_width)
    points = _get(grid_doc, "points_per_axis", int, points)
    try:
        GridSpec(n, half_width, points)
    except ValueError as exc:
        raise ConfigInvalid("grid", str(exc)) from None
    try:
        q_list = tuple(_q_value(q) for q in doc.get("q_list", [1, "inf"]))
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid("q_list", str(exc)) from None
    window = doc.get("window")
    if window is not None:
        try:
            lo, hi = (float(w) for w in window)
        except (TypeError, ValueError):
            raise ConfigInvalid("window", "expected [t_lo, t_hi]") from None
        window = (lo, hi)
    out = Path(doc.get("output_dir") or Path("runs") / name)
    cfg = ExperimentConfig(
        name=name, scenario=scenario, n=n, p=p, a=a, f_kind=f_kind,
        initial_data=_initial_data(doc.get("initial_data"), n),
        half_width=half_width, points_per_axis=points, t_end=t_end, t_first=t_first,
        k=_get(doc, "k", int, 1), q_list=q_list, window=window,
        delta=_get(doc, "delta", float, 0.15), slope_tol=_get(doc, "slope_tol", float, 0.05),
        nodes_per_panel=_get(doc, "nodes_per_panel", int, 16), rtol=_get(doc, "rtol", float, 1e-10),
        output_dir=out, raw=doc,
    )
    _check_compatibility(cfg)
    return cfg


def _check_compatibility(cfg: ExperimentConfig) -> None:
    try:
        Nonlinearity(cfg.f_kind, cfg.p)
    except ValueError as exc:
        raise ConfigInvalid("f_kind", str(exc)) from None
    if cfg.nodes_per_panel < 8:
        raise ConfigInvalid("nodes_per_panel", "quadrature budget must be at least 8")
    if cfg.k < 0:
        raise ConfigInvalid("k", "order must be nonnegative")
    exps = cfg.exponents
    lo = 1.0 + 1.0 / cfg.n
    sc = cfg.scenario
    try:
        if sc == "rate_table_k":
            check_a0k_range(exps, cfg.k)
        elif sc == "optimality_T2.4":
            check_a1k_range(exps, cfg.k)
        elif sc == "optimality_T2.5":
            if cfg.f_kind != "abs_power_signed":
                raise ConfigInvalid("f_kind", "optimality_T2.5 requires f = |s|^(p-1) s")
            if not lo < cfg.p < 1 + 1.5 / cfg.n:
                raise ConfigInvalid("p", f"optimality_T2.5 needs {lo:g} < p < {1 + 1.5 / cfg.n:g}")
        elif sc == "nonoptimality_T2.6":
            if cfg.f_kind not in ("abs_power_signed", "abs_power"):
                raise ConfigInvalid("f_kind", "nonoptimality_T2.6 requires |s|^(p-1) s or |s|^p")
            if abs(cfg.p - (1 + 1.5 / cfg.n)) > 1e-12:
                raise ConfigInvalid("p", f"nonoptimality_T2.6 needs p = {1 + 1.5 / cfg.n:g}")
        elif sc == "zeroth_order_appendixB":
            if not cfg.p > lo:
                raise ConfigInvalid("p", f"zeroth_order_appendixB needs p > {lo:g}")
        elif sc == "burgers_wave":
            if cfg.n != 1:
                raise ConfigInvalid("n", "burgers_wave is one-dimensional")
            if cfg.f_kind != "integer_power" or cfg.p != 2:
                raise ConfigInvalid("p", "burgers_wave uses f(s) = s^2")
    except AsymptolabError as exc:
        if isinstance(exc, ConfigInvalid):
            raise
        raise ConfigInvalid("p", str(exc)) from None
    if sc not in ("heat_expansion_prop33", "burgers_wave") and cfg.window is None and len(cfg.dyadic_times) < 6:
        raise ConfigInvalid("t_end", "need at least six dyadic samples for a fit window")


def load_config(path: Path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigInvalid("<json>", f"line {exc.lineno}: {exc.msg}") from None
    return parse_config(doc)


# -- results ----------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class ScenarioResult:
    curves: list[RemainderCurve] = field(default_factory=list)
    fits: list = field(default_factory=list)
    guides: list[tuple[float, str]] = field(default_factory=list)
    checks: list[Check] = field(default_factory=list)
    tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)
    sections: dict[str, Field] = field(default_factory=dict)
    target_rate: str = ""
    target_constants: dict = field(default_factory=dict)


@dataclass
class RunManifest:
    name: str
    scenario: str
    config_hash: str
    code_version: str
    started: str
    finished: str
    files: list[dict]
    checks: list[dict]
    guides: list[dict]
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _num(x: float) -> str:
    return "inf" if math.isinf(x) else repr(float(x))


def _q_label(q: float) -> str:
    return "q=inf" if math.isinf(q) else f"q={q:g}"


def _rounded(x: float) -> str:
    return f"{round(x, 6):g}"


# -- scenarios ------------------------------------------------------------------------


def _solve(cfg: ExperimentConfig, extra_times=()) -> "Trajectory":  # noqa: F821
    times = sorted(set(cfg.dyadic_times) | set(float(t) for t in extra_times if t <= cfg.t_end))
    config = SolverConfig(
        cfg.grid, cfg.nonlinearity, cfg.a, cfg.initial_data, cfg.t_end, times,
        StepPolicy(rtol=cfg.rtol),
    )
    return solve(config)


def _branch(cfg: ExperimentConfig, k: int) -> tuple[str, float, str]:
    rate = (k + 1) * cfg.exponents.sigma
    if abs(rate - 0.5) <= 1e-12:
        return "critical", -0.5, "-1/2 (log t)"
    if rate < 0.5:
        return "subcritical", -rate, f"-(k+1)σ = {_rounded(-rate)}"
    return "supercritical", -0.5, "-1/2"


def _sections(traj, profile: Callable[[float], Field], t: float, label: str) -> dict[str, Field]:
    return {f"u({t:g})": traj.at(t), f"{label}({t:g})": profile(t)}


def scenario_rate_table(cfg: ExperimentConfig) -> ScenarioResult:
    traj = _solve(cfg)
    prof = Profiles.from_trajectory(traj, nodes_per_panel=cfg.nodes_per_panel)
    k = cfg.k
    branch, slope, note = _branch(cfg, k)
    profile = (lambda t: prof.A0k(k, t))
    curves = measure_remainder(traj, profile, cfg.q_list, cfg.dyadic_times, f"u - A0{k}")
    res = ScenarioResult(curves=curves, guides=[(slope, note)], target_rate=note)
    for c in curves:
        fit = fit_decay(c, "pure_power", cfg.window)
        res.fits.append((f"u - A0{k}", c.q, fit))
        ok = abs(fit.slope - slope) <= cfg.slope_tol
        detail = f"slope {fit.slope:.4f}, expected {slope:g} +- {cfg.slope_tol:g}"
        if branch == "critical":
            # unit log factor, then slope and log exponent fitted together
            res.fits.append((f"u - A0{k} unit log", c.q, fit_decay(c, "power_times_log", cfg.window)))
            joint = fit_power_and_log(c, cfg.window)
            res.fits.append((f"u - A0{k} free log", c.q, joint))
            ok = abs(joint.slope - slope) <= cfg.slope_tol and joint.log_coefficient <= 1.0
            detail = (f"slope with free log {joint.slope:.4f}, expected {slope:g} +- {cfg.slope_tol:g}; "
                      f"log exponent {joint.log_coefficient:.4f} (bound 1); pure slope {fit.slope:.4f}")
        res.checks.append(Check(f"rate {branch} {_q_label(c.q)}", ok, detail))
    res.sections = _sections(traj, profile, cfg.dyadic_times[-1], f"A0{k}")
    return res


def _limit_result(cfg, theorem, traj, prof, psi=None, k=1, note="") -> ScenarioResult:
    reports = verify_limit_constant(theorem, traj, prof, cfg.q_list, cfg.dyadic_times, psi=psi, k=k, delta=cfg.delta)
    res = ScenarioResult()
    sigma = cfg.exponents.sigma
    slope = {"T2.4": -0.5, "B.super": -0.5, "T2.5": -2 * sigma, "B.sub": -sigma, "B.critical": -0.5}[theorem]
    res.guides = [(slope, note)]
    res.target_rate = note
    rows = []
    for rep in reports:
        res.target_constants[rep.q] = rep.target
        for t, r in zip(rep.times, rep.ratios):
            rows.append([theorem, _num(rep.q), _num(t), _num(r), _num(rep.target)])
        last3 = ", ".join(f"{r:.5f}" for r in rep.ratios[-3:])
        res.checks.append(Check(
            f"{theorem} limit constant {_q_label(rep.q)}", rep.passed,
            f"final ratio {rep.final_ratio:.5f} (band {cfg.delta:g}), last ratios {last3}, settled {rep.settled}",
        ))
    res.tables["limits.csv"] = (["theorem", "q", "t", "ratio", "target_constant"], rows)
    return res


def _remainder_curves(traj, profile, cfg, label):
    return measure_remainder(traj, profile, cfg.q_list, cfg.dyadic_times, label)


def scenario_t24(cfg: ExperimentConfig) -> ScenarioResult:
    k = cfg.k
    traj = _solve(cfg, psi_sample_times(cfg.t_end))
    prof = Profiles.from_trajectory(traj, nodes_per_panel=cfg.nodes_per_panel)
    psi = compute_psi(k, traj, cfg.t_end, prof)
    theorem = "B.super" if k == 0 else "T2.4"
    res = _limit_result(cfg, theorem, traj, prof, psi, k, "-1/2")
    profile = (lambda t: prof.A0k(k, t))
    res.curves = _remainder_curves(traj, profile, cfg, f"u - A0{k}")
    coeffs = prof.a1k_coefficients(psi.mass_estimate)
    res.checks.append(Check("shape coefficient nonzero", any(abs(c) > 1e-8 for c in coeffs),
                            f"M_e - a M0(psi) = {[round(float(c), 8) for c in coeffs]}"))
    res.tables["psi.csv"] = (
        ["k", "tail_time", "mass", "mass_tail", "mass_estimate", "tail_bound"],
        [[k, _num(psi.tail_time), _num(psi.mass), _num(psi.mass_tail), _num(psi.mass_estimate), _num(psi.tail_bound)]],
    )
    res.sections = _sections(traj, profile, cfg.dyadic_times[-1], f"A0{k}")
    res.sections[f"A1{k}({cfg.dyadic_times[-1]:g})"] = prof.A1k(k, cfg.dyadic_times[-1], psi)
    return res


def scenario_t25(cfg: ExperimentConfig) -> ScenarioResult:
    traj = _solve(cfg)
    prof = Profiles.from_trajectory(traj, nodes_per_panel=cfg.nodes_per_panel)
    sigma = cfg.exponents.sigma
    res = _limit_result(cfg, "T2.5", traj, prof, note=f"-2σ = {_rounded(-2 * sigma)}")
    profile = (lambda t: prof.A0k(1, t))
    res.curves = _remainder_curves(traj, profile, cfg, "u - A01")
    s01 = prof.star("S01")
    a_point = _nearest(s01, prof.a)
    s02 = prof.star("S02").at_origin()
    res.checks.append(Check("S01(a) < 0", a_point < -1e-4, f"S01(a) = {a_point:.6e}"))
    res.checks.append(Check("S02*(0) < 0", s02 < 0, f"S02*(0) = {s02:.6e}"))
    res.sections = {"R02*": prof.star("R02"), "S01": s01}
    return res


def _nearest(phi: Field, point) -> float:
    idx = tuple(int(np.argmin(np.abs(phi.grid.coords - c))) for c in point)
    return float(phi.values[idx])


def scenario_t26(cfg: ExperimentConfig) -> ScenarioResult:
    traj = _solve(cfg)
    prof = Profiles.from_trajectory(traj, nodes_per_panel=cfg.nodes_per_panel)
    profile = (lambda t: prof.A0k(1, t))
    res = ScenarioResult(guides=[(-0.5, "-1/2")], target_rate="-1/2")
    res.curves = _remainder_curves(traj, profile, cfg, "u - A01")
    rows = []
    for q in cfg.q_list:
        rep = verify_nonoptimality_critical(traj, prof, q, cfg.dyadic_times, cfg.window)
        res.fits.append(("u - A01", q, rep.power_fit))
        res.fits.append(("u - A01 log exponent", q, rep.log_fit))
        res.checks.append(Check(f"pure t^-1/2 {_q_label(q)}", rep.slope_ok and rep.log_ok,
                                f"slope {rep.power_fit.slope:.4f}, log exponent {rep.log_fit.log_coefficient:.4f}"))
        if not rows:
            for t, v in zip(rep.coefficient_times, rep.coefficient_values):
                rows.append([_num(t), _num(v)])
            res.checks.append(Check("coefficient integral Cauchy", rep.coefficient_bounded,
                                    f"last increment {rep.cauchy_differences[-1]:.3e}"))
            res.checks.append(Check("odd-moment cancellation", rep.cancellation_ok,
                                    f"M0 = {rep.odd_moment:.3e}, max |R02~*| = {rep.tilde_r02_max:.3e}"))
    res.tables["coefficient.csv"] = (["t", "coefficient_integral"], rows)
    res.sections = {"R01(1)": prof.star("R01")}
    return res


def scenario_appendix_b(cfg: ExperimentConfig) -> ScenarioResult:
    n, p = cfg.n, cfg.p
    sigma = cfg.exponents.sigma
    fujita = 1 + 2 / n
    if abs(p - fujita) <= 1e-12:
        theorem, note = "B.critical", "-1/2 (log t)"
    elif p < fujita:
        theorem, note = "B.sub", f"-σ = {_rounded(-sigma)}"
    else:
        theorem, note = "B.super", "-1/2"
    extra = psi_sample_times(cfg.t_end) if theorem == "B.super" else ()
    traj = _solve(cfg, extra)
    prof = Profiles.from_trajectory(traj, nodes_per_panel=cfg.nodes_per_panel)
    psi = compute_psi(0, traj, cfg.t_end, prof) if theorem == "B.super" else None
    res = _limit_result(cfg, theorem, traj, prof, psi, 0, note)
    res.curves = _remainder_curves(traj, prof.A0, cfg, "u - A0")
    res.sections = _sections(traj, prof.A0, cfg.dyadic_times[-1], "A0")
    return res


def scenario_prop33(cfg: ExperimentConfig) -> ScenarioResult:
    grid = GridSpec(cfg.n, cfg.half_width, cfg.points_per_axis)
    phi = cfg.initial_data.sample(grid)
    res = ScenarioResult()
    rows, worst = [], math.inf
    e1 = (1,) + (0,) * (cfg.n - 1)
    zero = (0,) * cfg.n
    for alpha, m in ((zero, 0), (e1, 0), (zero, 1)):
        for t in cfg.dyadic_times:
            for q in cfg.q_list or (1.0,):
                lhs, rhs = expansion_error_bound(alpha, m, t, q, phi)
                rows.append([str(alpha), m, _num(t), _num(q), _num(lhs), _num(rhs), _num(rhs - lhs)])
                worst = min(worst, rhs - lhs)
    res.checks.append(Check("expansion bound", worst >= 0, f"smallest margin {worst:.3e}"))
    res.tables["heat_bound.csv"] = (["alpha", "m", "t", "q", "lhs", "rhs", "margin"], rows)
    return res


def scenario_burgers(cfg: ExperimentConfig) -> ScenarioResult:
    traj = _solve(cfg)
    grid = traj.grid
    mass = traj.conserved_mass
    a = cfg.a[0]
    times = cfg.dyadic_times
    wave = (lambda t: burgers_wave(grid, t, mass, a))
    res = ScenarioResult(guides=[(-0.5, "-1/2")], target_rate="-1/2")
    res.curves = measure_remainder(traj, wave, cfg.q_list, times, "u - chi")
    (l1,) = measure_remainder(traj, wave, [1.0], times) if 1.0 not in cfg.q_list else [
        c for c in res.curves if c.q == 1.0]
    vals = l1.values
    decreasing = all(v == 0 for v in vals) or all(b < a_ for a_, b in zip(vals, vals[1:]))
    res.checks.append(Check("L1 distance to wave decreasing", decreasing,
                            ", ".join(f"{v:.3e}" for v in vals)))
    chi1 = wave(1.0)
    gap = max(lq_norm(wave(t) - dilate(t, chi1), math.inf) for t in times)
    res.checks.append(Check("wave self-similar", gap <= 1e-8, f"max gap {gap:.3e}"))
    # mass on a box wide enough that the Gaussian tails are below 1e-12
    half = 12.0 * math.sqrt(times[-1])
    wide = GridSpec(1, half, 2 ** math.ceil(math.log2(2 * half / grid.spacing)))
    mgap = max(abs(moment(0, burgers_wave(wide, t, mass, a)) - mass) for t in times)
    res.checks.append(Check("wave mass", mgap <= 1e-8, f"max mass error {mgap:.3e}"))
    res.sections = _sections(traj, wave, times[-1], "chi")
    return res


RUNNERS = {
    "rate_table_k": scenario_rate_table,
    "optimality_T2.4": scenario_t24,
    "optimality_T2.5": scenario_t25,
    "nonoptimality_T2.6": scenario_t26,
    "zeroth_order_appendixB": scenario_appendix_b,
    "heat_expansion_prop33": scenario_prop33,
    "burgers_wave": scenario_burgers,
}


# -- persistence ----------------------------------------------------------------------


def _write_table(path: Path, header: list[str], rows: list[list]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _write_sections(path: Path, sections: dict[str, Field]) -> Path:
    labels = list(sections)
    fields = [sections[k] for k in labels]
    rows = []
    grid = fields[0].grid
    for j, x in enumerate(grid.coords):
        vals = []
        for phi in fields:
            v = phi.values if phi.grid.dim == 1 else phi.values[:, phi.grid.points_per_axis // 2]
            if phi.grid != grid:
                raise ValueError("sections must share a grid")
            vals.append(_num(v[j]))
        rows.append([_num(x)] + vals)
    return _write_table(path, ["x"] + labels, rows)


def _atomic_json(path: Path, payload: dict) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_figures(run_dir: Path, guides: list[tuple[float, str]], title: str = "") -> tuple[list[Path], list[str]]:
    """SVG figures from the CSVs in run_dir; returns (written files, notes)."""
    run_dir = Path(run_dir)
    written, notes = [], []
    rem = run_dir / "remainders.csv"
    if rem.exists():
        rows = read_csv(rem)
        curves: dict[str, tuple[list, list]] = {}
        for row in rows:
            label = _q_label(float(row["q"]))
            t, y = curves.setdefault(label, ([], []))
            t.append(float(row["t"]))
            y.append(float(row["normalized_norm"]))
        positive = {k: v for k, v in curves.items() if all(y > 0 for y in v[1])}
        if positive:
            written.append(remainder_figure(positive, guides, run_dir / "remainder.svg", title))
        else:
            notes.append("no positive remainder data; remainder plot skipped")
    else:
        notes.append("empty q_list; no remainder plot")
    sec = run_dir / "sections.csv"
    if sec.exists():
        rows = read_csv(sec)
        labels = [k for k in rows[0] if k != "x"]
        x = np.array([float(r["x"]) for r in rows])
        grid = GridSpec(1, -float(x[0]), len(x))
        fields = {lab: Field(grid, np.array([float(r[lab]) for r in rows])) for lab in labels}
        peak = max(np.abs(f.values).max() for f in fields.values())
        width = _visible_width(x, fields, peak)
        written.append(profile_figure(fields, run_dir / "profiles.svg", title, width))
    return written, notes


def _visible_width(x: np.ndarray, fields: dict[str, Field], peak: float) -> float:
    if peak == 0:
        return float(np.abs(x).max())
    mask = np.zeros(x.shape, bool)
    for f in fields.values():
        mask |= np.abs(f.values) > 1e-3 * peak
    return float(np.abs(x[mask]).max() * 1.2) if mask.any() else float(np.abs(x).max())


def run(config_path: Path, output_dir: Path | None = None) -> RunManifest:
    cfg = load_config(config_path)
    out = Path(output_dir) if output_dir is not None else cfg.output_dir
    started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    result = RUNNERS[cfg.scenario](cfg)
    out.mkdir(parents=True, exist_ok=True)
    emitted = [_copy_config(cfg, out)]
    if result.curves and cfg.q_list:
        emitted.append(write_remainder_csv(out / "remainders.csv", cfg.name, result.curves,
                                           result.target_rate, result.target_constants))
    if result.fits:
        emitted.append(write_fits_csv(out / "fits.csv", cfg.name, result.fits))
    for fname, (header, rows) in sorted(result.tables.items()):
        emitted.append(_write_table(out / fname, header, rows))
    if result.sections:
        emitted.append(_write_sections(out / "sections.csv", result.sections))
    emitted.append(_write_table(out / "checks.csv", ["check", "passed", "detail"],
                                [[c.name, c.passed, c.detail] for c in result.checks]))
    figures, _ = render_figures(out, result.guides, f"{cfg.name}: {cfg.scenario}")
    emitted.extend(figures)
    manifest = RunManifest(
        name=cfg.name, scenario=cfg.scenario, config_hash=cfg.config_hash, code_version=__version__,
        started=started, finished=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        files=[{"path": p.name, "sha256": file_sha256(p)} for p in emitted],
        checks=[asdict(c) for c in result.checks],
        guides=[{"slope": s, "annotation": a} for s, a in result.guides],
        passed=all(c.passed for c in result.checks),
    )
    _atomic_json(out / MANIFEST, manifest.to_dict())
    return manifest


def _copy_config(cfg: ExperimentConfig, out: Path) -> Path:
    path = out / "config.json"
    path.write_text(json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(run_dir: Path) -> dict:
    path = Path(run_dir) / MANIFEST
    if not path.exists():
        raise MissingData(f"no {MANIFEST} in {run_dir}")
    return json.loads(path.read_text())


def verify_manifest(run_dir: Path) -> list[str]:
    """Files whose checksum no longer matches the manifest."""
    manifest = load_manifest(run_dir)
    bad = []
    for entry in manifest["files"]:
        path = Path(run_dir) / entry["path"]
        if not path.exists() or file_sha256(path) != entry["sha256"]:
            bad.append(entry["path"])
    return bad


def plot(run_dir: Path) -> tuple[list[Path], list[str]]:
    manifest = load_manifest(run_dir)
    listed = {e["path"] for e in manifest["files"]}
    for needed in ("remainders.csv", "sections.csv"):
        if needed in listed and not (Path(run_dir) / needed).exists():
            raise MissingData(f"{needed} listed in the manifest but absent")
    guides = [(g["slope"], g["annotation"]) for g in manifest.get("guides", [])]
    return render_figures(run_dir, guides, f"{manifest['name']}: {manifest['scenario']}")


# -- self test --------------------------------------------------------------------------


def selftest_checks() -> list[Check]:
    """Fast checks of exactly known values."""
    from .heat import gauss_kernel, heat_apply, hermite_eval
    from .solver import heat_reference, translated_gaussian

    checks = []

    def add(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # reported, not raised
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        checks.append(Check(name, bool(ok), detail))

    grid = GridSpec(1, 32.0, 1024)
    g1 = gauss_kernel(grid, 1.0)
    add("unit mass", lambda: (abs(lq_norm(g1, 1) - 1) < 1e-10, f"{lq_norm(g1, 1):.12f}"))
    add("dilate identity", lambda: (np.array_equal(dilate(1.0, g1).values, g1.values), "exact"))
    add("zero norms", lambda: (lq_norm(grid.zeros(), 2) == 0, "0"))
    add("peak at 1/(4 pi)", lambda: (abs(gauss_kernel(GridSpec(1, 4.0, 1024), 1 / (4 * np.pi)).at_origin() - 1) < 1e-12, ""))
    add("heat at t=0", lambda: (np.array_equal(heat_apply(0.0, 0, g1).values, g1.values), "exact"))
    add("h_0 = 1, h_1 = x", lambda: (hermite_eval((0,), 0.7) == 1 and hermite_eval((1,), 0.7) == 0.7, ""))
    add("odd moment", lambda: (abs(moment(1, g1)) < 1e-10, f"{moment(1, g1):.2e}"))
    add("zero wave", lambda: (not burgers_wave(grid, 4.0, 0.0, 1.0).values.any(), ""))

    def zero_solution():
        cfg = SolverConfig(grid, Nonlinearity("integer_power", 2), (1.0,), translated_gaussian(0.0, 0.0), 4.0, (1.0, 4.0))
        traj = solve(cfg)
        return all(not u.values.any() for _, u in traj.samples), "u stays 0"

    def heat_only():
        cfg = SolverConfig(grid, Nonlinearity("integer_power", 2), (0.0,), translated_gaussian(1.0, 0.0), 4.0,
                           (1.0, 4.0), self_test=True)
        traj = solve(cfg)
        gap = max(lq_norm(u - heat_reference(cfg, t), math.inf) for t, u in traj.samples)
        return gap < 1e-8, f"{gap:.2e}"

    add("zero data", zero_solution)
    add("a = 0 is the heat flow", heat_only)

    def missing_p():
        try:
            parse_config({"schema_version": 1, "name": "x", "scenario": "rate_table_k"})
        except ConfigInvalid as exc:
            return exc.field == "p", str(exc)
        return False, "accepted"

    add("config without p", missing_p)
    return checks


# -- entry point ----------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="asymptolab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--out", type=Path, default=None, help="override output_dir")
    p_plot = sub.add_parser("plot", help="redraw SVG figures of a run directory")
    p_plot.add_argument("run_dir", type=Path)
    sub.add_parser("selftest", help="fast checks of exactly known values")
    args = parser.parse_args(argv)

    try:
        if args.verb == "run":
            manifest = run(args.config, args.out)
            for c in manifest.checks:
                print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['detail']}")
            return 0 if manifest.passed else 1
        if args.verb == "plot":
            written, notes = plot(args.run_dir)
            for path in written:
                print(path)
            for note in notes:
                print(f"note: {note}")
            return 0
        checks = selftest_checks()
        for c in checks:
            print(f"{'PASS' if c.passed else 'FAIL'}  {c.name} {c.detail}")
        return 0 if all(c.passed for c in checks) else 1
    except (ConfigInvalid, MissingData, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AsymptolabError as exc:
        print(f"error in {_origin(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def _origin(exc: BaseException) -> str:
    """Module in which an exception was raised."""
    tb = exc.__traceback__
    name = "?"
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", name)
        tb = tb.tb_next
    return name


if __name__ == "__main__":
    sys.exit(main())
