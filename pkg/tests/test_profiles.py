import math

import numpy as np
import pytest
from scipy import integrate

from asymptolab.errors import QuadratureBudgetExceeded, RangeViolation
from asymptolab.field import Field, GridSpec, Nonlinearity, dilate, lq_norm
from asymptolab.heat import gaussian_values
from asymptolab.profiles import (
    ProfileSpec,
    Profiles,
    PsiIntegral,
    burgers_wave,
    compute_psi,
    duhamel,
    profile_A0k,
    profile_A1k,
    psi_sample_times,
    remainder_R01,
    star_shape,
)
from asymptolab.solver import SolverConfig, solve, translated_gaussian

GRID = GridSpec(1, 64.0, 2048)
F22 = Nonlinearity("abs_power", 2.2)
F3 = Nonlinearity("abs_power", 3.0)

# frozen oracles (scipy dblquad / quad, computed independently of the package)
S02_AT_ORIGIN_P22 = -0.009163116987939323
S01_AT_ONE_P22 = -0.05248597719526602
TILDE_R01_COEFF_P3 = -0.022972037309241335


@pytest.fixture(scope="module")
def sub():
    return Profiles(GRID, F22, (1.0,), 1.0)


@pytest.fixture(scope="module")
def critical():
    return Profiles(GRID, F3, (1.0,), 1.3)


def mass(phi: Field) -> float:
    return float(phi.values.sum() * phi.grid.cell_volume)


# -- duhamel ---------------------------------------------------------------------


def test_duhamel_zero_integrand():
    out = duhamel(2.0, lambda s: GRID.zeros(), (0.0, 2.0), grid=GRID, convection=(1.0,))
    assert not out.values.any()


def test_duhamel_output_has_zero_mass(sub):
    out = duhamel(3.0, lambda s: sub.A0(s + 1.0).map(F22), (0.0, 3.0), grid=GRID, convection=(1.0,))
    assert abs(mass(out)) < 1e-14
    assert lq_norm(out, 1) > 1e-3


def test_duhamel_empty_range():
    assert not duhamel(1.0, None, (0.5, 0.5), grid=GRID, convection=(1.0,)).values.any()


def test_duhamel_range_checked():
    with pytest.raises(ValueError):
        duhamel(1.0, None, (0.0, 2.0), grid=GRID, convection=(1.0,))


def test_duhamel_tolerance_refinement(sub):
    coarse = duhamel(4.0, sub.mass_flux_spectrum, (0.0, 4.0), grid=GRID, convection=(1.0,),
                     left_singularity=sub.gamma, nodes_per_panel=8, tol=1e-9)
    fine = duhamel(4.0, sub.mass_flux_spectrum, (0.0, 4.0), grid=GRID, convection=(1.0,),
                   left_singularity=sub.gamma, nodes_per_panel=64)
    assert lq_norm(coarse - fine, 1) < 1e-9


def test_duhamel_budget_exceeded(sub):
    with pytest.raises(QuadratureBudgetExceeded):
        duhamel(4.0, sub.mass_flux_spectrum, (0.0, 4.0), grid=GRID, convection=(1.0,),
                left_singularity=sub.gamma, nodes_per_panel=8, tol=0.0, max_nodes_per_panel=32)


@pytest.mark.parametrize("t", [1.0, 4.0, 16.0])
def test_R01_is_dilated_star(sub, t):
    direct = sub.R01(t)
    shape = t ** -sub.exps.sigma * dilate(t, sub.star("R01"), GRID)
    assert lq_norm(direct - shape, 1) < 1e-6


def test_R01_quadrature_converges():
    a = Profiles(GRID, F22, (1.0,), 1.0, nodes_per_panel=16).R01(8.0)
    b = Profiles(GRID, F22, (1.0,), 1.0, nodes_per_panel=32).R01(8.0)
    assert lq_norm(a - b, 1) < 1e-10


# -- recursive profiles -------------------------------------------------------------


def test_A0k_order_zero_is_mass_mode(sub):
    a0 = profile_A0k(sub, 0, 2.0)
    expected = gaussian_values(GRID, 2.0)
    assert np.max(np.abs(a0.values - expected)) < 1e-14


@pytest.mark.parametrize("k", [0, 1, 2])
def test_profile_mass_equals_M(sub, k):
    assert mass(sub.A0k(k, 4.0)) == pytest.approx(1.0, abs=1e-13)


def test_A0k_order_two_needs_late_time(sub):
    with pytest.raises(ValueError):
        sub.A0k(2, 0.5)


def test_A0k_order_two_close_to_order_one(sub):
    # the second correction is smaller than the first at late times
    first = lq_norm(sub.A0k(1, 16.0) - sub.A0k(0, 16.0), 1)
    second = lq_norm(sub.A0k(2, 16.0) - sub.A0k(1, 16.0), 1)
    assert 0 < second < first


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_R01_homogeneity(lam):
    base = Profiles(GRID, F22, (1.0,), 1.0).R01(4.0)
    scaled = Profiles(GRID, F22, (1.0,), lam).R01(4.0)
    assert lq_norm(scaled - lam**2.2 * base, 1) < 1e-12 * lam**2.2


def test_R01_is_odd(sub):
    r = sub.R01(4.0)
    assert lq_norm(r + r.reflect(), math.inf) < 1e-15
    _, moment = remainder_R01(sub, 4.0)
    assert abs(moment) < 1e-14


def test_R01_is_linear_in_convection():
    one = Profiles(GRID, F22, (1.0,), 1.0).R01(2.0)
    other = Profiles(GRID, F22, (-0.5,), 1.0).R01(2.0)
    assert lq_norm(other + 0.5 * one, 1) < 1e-14


# -- star shapes -------------------------------------------------------------------


def test_S01_negative_at_one(sub):
    star = sub.star("S01")
    i = int(np.argmin(np.abs(star.grid.coords - 1.0)))
    assert star.grid.coords[i] == 1.0
    assert star.values[i] < 0
    assert star.values[i] == pytest.approx(S01_AT_ONE_P22, rel=1e-10)


def test_S02_at_origin_matches_oracle(sub):
    star = sub.star("S02")
    assert star.at_origin() < 0
    assert star.at_origin() == pytest.approx(S02_AT_ORIGIN_P22, rel=1e-9)


def test_R02_scaling(sub):
    ratio = sub.flux_of_mass * F22.scalar_derivative(1.0)
    assert lq_norm(sub.star("R02") - ratio * sub.star("S02"), 1) == 0.0


def test_star_range_checks():
    prof = Profiles(GRID, F3, (1.0,), 1.0)
    with pytest.raises(RangeViolation):
        prof.star("S01")
    with pytest.raises(RangeViolation):
        Profiles(GRID, Nonlinearity("abs_power", 2.6), (1.0,), 1.0).star("S02")
    with pytest.raises(ValueError):
        star_shape(prof, "S03")


def test_tilde_r01_coefficient_matches_oracle(critical):
    # independent: -(1/2) f(1) times the mass of G_1^3, by adaptive quadrature
    g3, _ = integrate.quad(lambda x: ((4 * np.pi) ** -0.5 * np.exp(-x * x / 4)) ** 3, -np.inf, np.inf)
    assert -0.5 * g3 == pytest.approx(TILDE_R01_COEFF_P3, rel=1e-12)
    prof = Profiles(GRID, F3, (1.0,), 1.0)
    star = prof.star("TildeR01")
    x = star.grid.coords
    shape = x * gaussian_values(star.grid, 1.0)
    coeff = star.values[star.grid.points_per_axis // 2 + 16] / shape[star.grid.points_per_axis // 2 + 16]
    assert coeff == pytest.approx(TILDE_R01_COEFF_P3, rel=1e-12)


def test_tilde_coefficient_is_log(critical):
    base = critical.flux_of_mass / (4 * np.pi * math.sqrt(3.0))
    for t in (2.0, 16.0, 40.0):
        assert critical.tilde_coefficient(0, t) == pytest.approx(base * math.log(t), rel=1e-12)


@pytest.mark.parametrize("t", [4.0, 16.0])
def test_tildeA_is_log_corrected_mode(critical, t):
    gap = critical.tildeA(1, t) - critical.A0(t)
    shape = t**-0.5 * math.log(t) * dilate(t, critical.star("TildeR01"), GRID)
    assert lq_norm(gap - shape, 1) < 1e-9


def test_tildeA_requires_critical_exponent(sub):
    with pytest.raises(RangeViolation):
        sub.tildeA(1, 4.0)
    assert isinstance(sub.tildeA(1, 4.0, override=True), Field)


def test_odd_moment_vanishes(sub):
    assert abs(sub.odd_moment_check()) < 1e-14
    assert lq_norm(sub.tilde_r02(), math.inf) < 1e-14


# -- first-moment profiles ---------------------------------------------------------


F275 = Nonlinearity("abs_power", 2.75)


def test_A1k_difference_shape():
    prof = Profiles(GRID, F275, (1.0,), 1.0, first_moments=(0.4,))
    psi_mass = -0.3
    t = 9.0
    diff = prof.a1k_difference(t, psi_mass)
    c = 0.4 - 1.0 * psi_mass
    expected = 0.5 * c / t * GRID.coords * gaussian_values(GRID, t)
    assert np.max(np.abs(diff.values - expected)) < 1e-14


def test_A1k_stratification():
    prof = Profiles(GRID, F275, (1.0,), 1.0, first_moments=(0.2,))
    psi = PsiIntegral(1, GRID.zeros(), 64.0, 0.0, -0.1)
    for t in (4.0, 16.0):
        gap = profile_A1k(prof, 1, t, psi) - prof.A0k(1, t)
        assert lq_norm(gap - prof.a1k_difference(t, -0.1), 1) < 1e-14


def test_A1k_equals_A0k_when_coefficient_vanishes():
    prof = Profiles(GRID, F275, (2.0,), 1.0, first_moments=(0.6,))
    psi = PsiIntegral(1, GRID.zeros(), 64.0, 0.0, 0.3)
    assert prof.a1k_coefficients(0.3) == [0.0]
    assert lq_norm(prof.A1k(1, 4.0, psi) - prof.A0k(1, 4.0), 1) == 0.0


def test_A1k_order_mismatch():
    prof = Profiles(GRID, F275, (1.0,), 1.0)
    with pytest.raises(ValueError):
        prof.A1k(1, 4.0, PsiIntegral(0, GRID.zeros(), 64.0, 0.0, 0.0))


def test_A1k_range():
    prof = Profiles(GRID, Nonlinearity("abs_power", 2.2), (1.0,), 1.0)
    with pytest.raises(RangeViolation):
        prof.A1k(1, 4.0, PsiIntegral(1, GRID.zeros(), 64.0, 0.0, 0.0))


# -- spec validation ---------------------------------------------------------------


@pytest.mark.parametrize(
    "family, p, order",
    [("A0k", 1.9, 0), ("A0k", 3.0, 1), ("A1k", 2.2, 1), ("TildeA0", 2.2, 1)],
)
def test_profile_spec_ranges(family, p, order):
    with pytest.raises(RangeViolation):
        ProfileSpec(family, Nonlinearity("abs_power", p), (1.0,), 1.0, order=order)


def test_profile_spec_budget_and_family():
    with pytest.raises(ValueError):
        ProfileSpec("A0k", F22, (1.0,), 1.0, nodes_per_panel=4)
    with pytest.raises(ValueError):
        ProfileSpec("Nope", F22, (1.0,), 1.0)
    spec = ProfileSpec("TildeA0", F3, (1.0,), 1.0, order=1)
    assert Profiles.from_spec(spec, GRID).first_moments == (0.0,)


# -- Burgers wave ------------------------------------------------------------------


def test_burgers_zero_mass():
    assert not burgers_wave(GRID, 4.0, 0.0, 1.0).values.any()


@pytest.mark.parametrize("m, a", [(1.0, 1.0), (-2.0, 0.5), (3.0, -1.5)])
def test_burgers_mass(m, a):
    wide = GridSpec(1, 128.0, 4096)
    assert mass(burgers_wave(wide, 4.0, m, a)) == pytest.approx(m, rel=1e-13)


def test_burgers_dilation():
    g = GridSpec(1, 64.0, 2048)
    one = burgers_wave(g, 1.0, 1.5, 1.0)
    for t in (4.0, 16.0):
        assert lq_norm(burgers_wave(g, t, 1.5, 1.0) - dilate(t, one, g), 1) < 1e-9


def test_burgers_solves_equation():
    g = GridSpec(1, 64.0, 4096)
    m, a, t, h = 1.2, 1.0, 2.0, 1e-4
    u = burgers_wave(g, t, m, a)
    ut = (burgers_wave(g, t + h, m, a) - burgers_wave(g, t - h, m, a)) / (2 * h)
    k = g.wave_mesh[0]
    uxx = Field.from_ft(g, -k * k * u.ft())
    flux = Field.from_ft(g, 1j * k * (u * u).ft())
    residual = ut - uxx - a * flux
    assert lq_norm(residual, 1) < 1e-6


def test_burgers_one_dimensional_only():
    with pytest.raises(ValueError):
        burgers_wave(GridSpec(2, 8.0, 32), 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        burgers_wave(GRID, 1.0, 1.0, 0.0)


# -- psi ---------------------------------------------------------------------------


def test_psi_of_zero_trajectory():
    times = psi_sample_times(16.0)
    cfg = SolverConfig(GRID, F22, (1.0,), translated_gaussian(0.0, 0.0), times[-1], times)
    traj = solve(cfg)
    for k in (0, 1):
        psi = compute_psi(k, traj, 16.0)
        assert psi.mass == 0.0 and psi.mass_estimate == 0.0
        assert not psi.value.values.any()
