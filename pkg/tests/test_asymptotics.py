import math
import warnings

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate

from fragopt.asymptotics import (
    DynkinLamperti,
    Efficiency,
    Limit,
    Ordering,
    constants_F_D,
    constants_F_D_trapezoid,
    corollary_verdict,
    gamma_constants,
    growth_ordering,
    inf_efficiency,
    q_bounds,
    regular_variation_index,
    rv_index,
    small_threshold_limit,
    stationary_overshoot,
    tauberian_ratio,
    check_small_threshold_theorems,
)
from fragopt.energy import mean_energy_single
from fragopt.errors import LatticeWarning, NotRV
from fragopt.renewal import RenewalOptions

from conftest import bounded, dissipative, finite, half_split, mix, pair, power_law


def test_small_threshold_limit_is_approached():
    m = mix()
    lim = small_threshold_limit(m)
    assert lim == pytest.approx(m.C / ((m.alpha - m.beta) * m.mean_jump))
    for ell, tol in ((20.0, 0.02), (40.0, 0.005)):
        v = math.exp(-(m.alpha - m.beta) * ell) * mean_energy_single(m, math.exp(-ell)).value
        assert v == pytest.approx(lim, rel=tol)


def test_lattice_warning():
    with pytest.warns(LatticeWarning):
        small_threshold_limit(half_split())


@pytest.mark.parametrize("model", [mix(), dissipative(0.3), power_law(0.5, 0.75), bounded(0.5)],
                         ids=["mix", "dissipative", "power_law", "bounded"])
def test_stationary_overshoot_is_a_probability(model):
    M = stationary_overshoot(model)
    assert M.total_mass == pytest.approx(1.0, abs=1e-8)
    u = np.linspace(0, 5, 51)
    c = M.cdf(u)
    assert np.all(np.diff(c) >= -1e-15) and c[0] == 0.0
    # cdf is the integral of the density
    for a in (0.3, 1.7):
        val, _ = integrate.quad(lambda x: float(M.density(x)), 0, a, limit=200, points=[math.log(2)] if a > 0.7 else None)
        assert float(M.cdf(a)) == pytest.approx(val, rel=1e-6, abs=1e-9)


def test_F_D_exact_against_trapezoid():
    m1, m2 = mix(), pair()
    k = constants_F_D(m1, m2, 1.0)
    F, D, Dh = constants_F_D_trapezoid(m1, m2, 1.0, n=400_001)
    assert k.F_lambda == pytest.approx(F, rel=1e-5)
    assert k.D_lambda == pytest.approx(D, rel=1e-5)
    assert k.D_hat_lambda == pytest.approx(Dh, rel=1e-5)
    assert k.limit_one_step == pytest.approx(k.limit_one_step_literal)  # alpha = 1


def test_small_threshold_report_tags():
    m1, m2 = dissipative(0.3), finite([(0.3, 0.7)], 0.4)
    rep = check_small_threshold_theorems(m1, m2, 1.0, [math.exp(-10), math.exp(-20), math.exp(-30)])
    assert set(rep.tags()) == {"first:a", "second:a", "excess_over_first", "excess_over_second"}
    assert rep.holds_from("first:a") is not None and rep.holds_from("second:a") is not None


ROWS = {
    1: (0.75, 0.5, 1.0, 0.3),
    2: (1.0, 0.3, 0.75, 0.5),
    3: (1.0, 0.8, 0.75, 0.3),
    4: (1.0, 0.5, 0.75, 0.45),
    5: (0.75, 0.3, 1.0, 0.4),
    6: (0.75, 0.2, 1.0, 0.7),
}


@pytest.mark.parametrize("row", sorted(ROWS))
def test_decision_table_rows(row):
    v = corollary_verdict(*ROWS[row])
    assert v.status is Ordering.ORDERED and v.row == row


def test_growth_ordering_agrees_except_last_row():
    for row, q in ROWS.items():
        same = growth_ordering(*q) == corollary_verdict(*q).order
        assert same == (row != 6)


def test_undetermined_and_invalid():
    assert corollary_verdict(1.0, 0.5, 1.0, 0.3).status is Ordering.UNDETERMINED
    assert corollary_verdict(1.0, 0.5, 0.8, 0.5).status is Ordering.UNDETERMINED
    with pytest.raises(ValueError):
        corollary_verdict(0.5, 0.6, 1.0, 0.3)


def test_dynkin_lamperti_half_is_arctan_law():
    d = DynkinLamperti(0.5)
    y = np.array([0.01, 0.5, 1.0, 7.0, 1e4])
    np.testing.assert_allclose(d.cdf(y), 2 / np.pi * np.arctan(np.sqrt(y)), rtol=1e-12)
    assert d.total_mass() == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("rho", [0.2, 0.5, 0.8])
def test_dynkin_lamperti_cdf_pdf_quantile(rho):
    d = DynkinLamperti(rho)
    for y in (0.3, 2.0):
        # t = s**k with k (1 - rho) = 1 removes the t**-rho singularity
        k = 1 / (1 - rho)
        val = float(mp.sin(mp.pi * rho) / mp.pi * mp.quad(lambda s: k / (1 + s**k), [0, y ** (1 - rho)]))
        assert float(d.cdf(y)) == pytest.approx(val, rel=1e-10)
    p = np.array([0.1, 0.5, 0.9])
    np.testing.assert_allclose(d.cdf(d.quantile(p)), p, rtol=1e-10)
    assert d.total_mass() == pytest.approx(1.0, abs=1e-10)


def test_gamma_constants_closed_form_and_mpmath():
    gc = gamma_constants(0.5, 0.5, 2.0)
    assert gc.A == pytest.approx(math.sqrt(2) - 1, abs=1e-9)
    assert gc.A_hat == gc.A == gc.B
    rho, rh, g = 0.4, 0.3, 1.7

    def ref(rl, pw, sr):
        return float(mp.sin(mp.pi * sr) / mp.pi * mp.quad(lambda u: (g - 1 - u) ** pw / ((1 + u) * u**rl), [0, g - 1]))
    gc = gamma_constants(rho, rh, g)
    assert gc.A == pytest.approx(ref(rho, rh, rho), rel=1e-9)
    assert gc.A_hat == pytest.approx(ref(rh, rh, rh), rel=1e-9)
    assert gc.B == pytest.approx(ref(rho, rho, rho), rel=1e-9)
    with pytest.raises(ValueError):
        gamma_constants(0.5, 0.5, 1.0)


def test_rv_index():
    r = rv_index(power_law(0.5, 0.75))
    assert r.rho == pytest.approx(0.5, abs=0.02) and not r.not_rv
    assert rv_index(power_law(0.3, 0.75)).rho == pytest.approx(0.3, abs=0.02)
    assert rv_index(mix()).not_rv
    with pytest.raises(NotRV):
        regular_variation_index(mix())
    assert regular_variation_index(power_law(0.3, 0.75)) == 0.3


def test_q_bounds_and_efficiency():
    pl = power_law(0.5, 0.75)
    pl2 = power_law(0.5, 0.75, c=2.0, name="pl2")
    qb = q_bounds(pl, pl2)
    assert qb.flag is Limit.FINITE and qb.q_minus == pytest.approx(2.0) and qb.q_plus == pytest.approx(2.0)
    assert q_bounds(pl, power_law(0.25, 0.6)).flag is Limit.ZERO
    assert q_bounds(power_law(0.25, 0.6), pl).flag is Limit.INFINITE
    # doubling nu doubles both the exponent and C: a tie
    assert inf_efficiency(pl, pl2).verdict is Efficiency.UNDETERMINED
    assert inf_efficiency(pl, power_law(0.25, 0.6)).verdict is Efficiency.FIRST
    assert inf_efficiency(power_law(0.25, 0.6), pl).verdict is Efficiency.SECOND


def test_tauberian_ratio_near_one():
    r = tauberian_ratio(power_law(0.5, 0.75), 0.05, RenewalOptions(n_samples=4000, seed=1))
    assert r == pytest.approx(1.0, abs=0.06)
