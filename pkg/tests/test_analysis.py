import math

import numpy as np
import pytest

from asymptolab.analysis import (
    DecayFit,
    RemainderCurve,
    default_window,
    fit_decay,
    fit_log_coefficient,
    fit_power_and_log,
    measure_remainder,
    read_csv,
    settling,
    verify_limit_constant,
    write_fits_csv,
    write_remainder_csv,
)
from asymptolab.errors import DegenerateFit, PlateauNotReached
from asymptolab.field import GridSpec, Nonlinearity
from asymptolab.profiles import Profiles
from asymptolab.solver import SolverConfig, solve, translated_gaussian

DYADIC = [2.0**j for j in range(6, 14)]
# pure-power least squares of t^(-1/2) log t over 2^6..2^13, from an ordinary regression
PURE_SLOPE_OF_LOG_DECAY = -0.34253957


def curve_of(values, times=DYADIC, q=1.0, dim=1):
    return RemainderCurve.from_values(q, times, values, dim)


def test_pure_power_recovers_slope():
    fit = fit_decay(curve_of([t**-0.3 for t in DYADIC]), window=(64, 8192))
    assert fit.slope == pytest.approx(-0.3, abs=1e-12)
    assert fit.prefactor == pytest.approx(1.0, rel=1e-12)
    assert fit.residual < 1e-14 and fit.points == 8


def test_normalization_uses_q():
    c = RemainderCurve.from_values(math.inf, [4.0, 16.0], [1.0, 1.0], dim=2)
    assert c.normalized == (4.0, 16.0)
    c1 = RemainderCurve.from_values(1.0, [4.0, 16.0], [1.0, 1.0], dim=2)
    assert c1.normalized == (1.0, 1.0)


def test_power_times_log_recovers_exponent():
    values = [3.0 * t**-0.5 * math.log(t) for t in DYADIC]
    fit = fit_decay(curve_of(values), model="power_times_log", window=(64, 8192))
    assert -fit.slope == pytest.approx(0.5, abs=1e-10)
    assert fit.prefactor == pytest.approx(3.0, rel=1e-10)
    assert fit.log_coefficient == 1.0


def test_pure_power_on_log_decay_matches_regression():
    values = [t**-0.5 * math.log(t) for t in DYADIC]
    fit = fit_decay(curve_of(values), window=(64, 8192))
    lt = np.log(DYADIC)
    oracle = np.polyfit(lt, np.log(values), 1)[0]
    assert fit.slope == pytest.approx(oracle, abs=1e-12)
    assert fit.slope == pytest.approx(PURE_SLOPE_OF_LOG_DECAY, abs=1e-8)


def test_log_coefficient_fit():
    values = [t**-0.5 * math.log(t) ** 0.7 for t in DYADIC]
    fit = fit_log_coefficient(curve_of(values), window=(64, 8192))
    assert fit.log_coefficient == pytest.approx(0.7, abs=1e-10)
    assert fit.slope == -0.5


def test_fit_is_idempotent():
    c = curve_of([t**-0.4 * (1 + 0.1 * math.sin(t)) for t in DYADIC])
    a, b = fit_decay(c, window=(64, 8192)), fit_decay(c, window=(64, 8192))
    assert a == b


def test_default_window_drops_two():
    assert default_window(DYADIC) == (256.0, 8192.0)
    fit = fit_decay(curve_of([t**-0.3 for t in DYADIC]))
    assert fit.points == 6


def test_degenerate_fits():
    with pytest.raises(DegenerateFit):
        fit_decay(curve_of([1.0, 1.0, 1.0], times=[1.0, 2.0, 4.0]))
    with pytest.raises(DegenerateFit):
        fit_decay(curve_of([0.0] * 8))
    with pytest.raises(DegenerateFit):
        fit_decay(curve_of([t**-0.3 for t in DYADIC]), window=(4096, 8192))
    with pytest.raises(DegenerateFit):
        fit_decay(curve_of([1.0] * 5, times=[0.25, 0.5, 1.0, 2.0, 4.0]), model="power_times_log",
                  window=(0.25, 4.0))
    with pytest.raises(ValueError):
        fit_decay(curve_of([1.0] * 8), model="cubic")


def test_curve_validation():
    with pytest.raises(ValueError):
        RemainderCurve(1.0, (1.0, 2.0), (1.0, -1.0), (1.0, -1.0))
    with pytest.raises(ValueError):
        RemainderCurve(1.0, (2.0, 1.0), (1.0, 1.0), (1.0, 1.0))


@pytest.mark.parametrize(
    "ratios, expected",
    [((1.2, 1.1, 1.05), True), ((1.0, 1.1, 1.3), False), ((1.0, 1.0), False), ((0.9, 0.95, 1.0), False)],
)
def test_settling(ratios, expected):
    assert settling(ratios) is expected


@pytest.fixture(scope="module")
def small_run():
    grid = GridSpec(1, 64.0, 1024)
    times = (1.0, 2.0, 4.0, 8.0, 16.0)
    cfg = SolverConfig(grid, Nonlinearity("abs_power", 2.2), (1.0,), translated_gaussian(1.0, 0.0), 16.0, times)
    return solve(cfg)


def test_profile_equal_to_solution_gives_zeros(small_run):
    curves = measure_remainder(small_run, small_run.at, [1.0, math.inf], small_run.times)
    assert all(v == 0.0 for c in curves for v in c.values)
    with pytest.raises(DegenerateFit):
        fit_decay(curves[0], window=(1.0, 16.0))


def test_verify_limit_constant_interface(small_run):
    prof = Profiles.from_trajectory(small_run)
    reports = verify_limit_constant("B.sub", small_run, prof, [1.0], small_run.times, delta=10.0)
    (rep,) = reports
    assert rep.rate.startswith("t^-")
    assert len(rep.ratios) == 5 and all(r > 0 for r in rep.ratios)
    with pytest.raises(ValueError):
        verify_limit_constant("T9", small_run, prof, [1.0], small_run.times)
    with pytest.raises(ValueError):
        verify_limit_constant("T2.4", small_run, prof, [1.0], small_run.times)


def test_strict_mode_raises_without_plateau(small_run):
    prof = Profiles.from_trajectory(small_run)
    reports = verify_limit_constant("B.sub", small_run, prof, [1.0], small_run.times[:3])
    if not reports[0].settled:
        with pytest.raises(PlateauNotReached):
            verify_limit_constant("B.sub", small_run, prof, [1.0], small_run.times[:3], strict=True)
    else:
        assert verify_limit_constant("B.sub", small_run, prof, [1.0], small_run.times[:3], strict=True)


def test_csv_round_trip_and_determinism(tmp_path):
    c = curve_of([t**-0.3 for t in DYADIC], q=math.inf)
    fit = fit_decay(c, window=(64, 8192))
    paths = []
    for name in ("a", "b"):
        paths.append(write_remainder_csv(tmp_path / name / "rem.csv", "x", [c], "t^-0.3", {math.inf: 1.0}))
        write_fits_csv(tmp_path / name / "fits.csv", "x", [("pure", math.inf, fit)])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (tmp_path / "a" / "fits.csv").read_bytes() == (tmp_path / "b" / "fits.csv").read_bytes()
    rows = read_csv(paths[0])
    assert len(rows) == 8 and rows[0]["q"] == "inf"
    assert [float(r["raw_norm"]) for r in rows] == list(c.values)
    (frow,) = read_csv(tmp_path / "a" / "fits.csv")
    assert float(frow["slope"]) == fit.slope


def test_decay_fit_is_plain_data():
    fit = DecayFit(-0.5, 1.0, (1.0, 2.0), 0.0, "pure_power")
    assert fit.log_coefficient == 0.0 and fit.points == 0


def test_free_log_fit_recovers_both_exponents():
    values = [2.0 * t**-0.45 * math.log(t) ** 0.3 for t in DYADIC]
    fit = fit_power_and_log(curve_of(values), window=(64, 8192))
    assert fit.slope == pytest.approx(-0.45, abs=1e-10)
    assert fit.log_coefficient == pytest.approx(0.3, abs=1e-9)
    assert fit.model == "power_times_log"


def test_free_log_fit_on_pure_power_has_no_log():
    fit = fit_power_and_log(curve_of([t**-0.5 for t in DYADIC]), window=(64, 8192))
    assert fit.slope == pytest.approx(-0.5, abs=1e-10)
    assert abs(fit.log_coefficient) < 1e-9
