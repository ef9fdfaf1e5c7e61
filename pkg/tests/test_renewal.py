import csv
import math

import numpy as np
import pytest
from scipy import integrate
from hypothesis import given, settings
from hypothesis import strategies as st

from fragopt.errors import NumericalError, ResolutionTooCoarse
from fragopt.levy import Subordinator
from fragopt.renewal import (
    AtomicRenewal,
    GridRenewal,
    RenewalOptions,
    psi,
    renewal_for_model,
    renewal_measure,
    to_csv,
)

from conftest import bounded, dissipative, finite, half_split, mix


def test_half_split_atoms_are_unit():
    U = renewal_measure(Subordinator(half_split()), 10 * math.log(2))
    assert isinstance(U, AtomicRenewal) and U.lattice_step == pytest.approx(math.log(2))
    np.testing.assert_allclose(U.points, math.log(2) * np.arange(11), rtol=1e-12)
    np.testing.assert_allclose(U.masses, 1.0, rtol=1e-12)


def test_lattice_and_enumeration_agree():
    m = finite([(0.25, 0.25, 0.5), (0.5, 0.5)], 0.5, weights=[1.0, 0.5])
    sub = Subordinator(m)
    a = renewal_measure(sub, 8.0, method="lattice")
    b = renewal_measure(sub, 8.0, method="exact")
    x = np.linspace(0, 8, 57)
    np.testing.assert_allclose(a.cumulative(x), b.cumulative(x), rtol=1e-12)


@pytest.mark.parametrize("model", [mix(), dissipative(0.3), finite([(0.4, 0.6), (0.25, 0.75)], 0.3)],
                         ids=["mix", "dissipative", "pair"])
def test_renewal_equation(model):
    # U([0,x]) = 1/lam + sum_j (m_j/lam) U([0, x - z_j])
    sub = Subordinator(model)
    U = renewal_measure(sub, 9.0)
    lev = sub.levy
    lam = lev.total_mass
    x = np.linspace(0.0, 9.0, 91) + 1e-9
    rhs = 1.0 / lam + sum((m / lam) * U.cumulative(x - z) for z, m in zip(lev.jumps, lev.masses))
    np.testing.assert_allclose(U.cumulative(x), rhs, rtol=1e-10)
    assert U.atom_at_zero == pytest.approx(1.0 / lam)


def test_elementary_renewal_theorem():
    m = mix()
    U = renewal_measure(Subordinator(m), 60.0)
    assert float(U.cumulative(60.0)) / 60.0 == pytest.approx(1.0 / m.mean_jump, rel=0.02)


def test_mc_backend_matches_exact_for_discrete():
    sub = Subordinator(mix())
    exact = renewal_measure(sub, 5.0)
    mc = renewal_measure(sub, 5.0, 0.05, method="mc", n_samples=40_000, seed=3)
    assert isinstance(mc, GridRenewal) and mc.n_samples == 40_000 and len(mc.batches) == 10
    x = np.array([0.0, 1.0, 2.5, 4.0, 5.0])
    # the MC measure smears atoms over one cell; compare at cell-aligned points
    np.testing.assert_allclose(mc.cumulative(x + 0.05), exact.cumulative(x + 0.05), rtol=0.03, atol=0.03)
    with pytest.raises(ResolutionTooCoarse):
        renewal_measure(sub, 5.0, 1.0, method="mc")


def test_grid_integrate_exp_is_exact():
    rng = np.random.default_rng(0)
    U = GridRenewal(0.1, rng.uniform(0.5, 2.0, 40), 0.7, 4.0)
    k = 0.8
    for x in (0.0, 0.05, 1.234, 4.0):
        ref = U.atom_at_zero
        for i, d in enumerate(U.density):
            a, b = i * U.h, min((i + 1) * U.h, x)
            if a < b:
                ref += d * integrate.quad(lambda y: math.exp(k * y), a, b, epsabs=1e-15, epsrel=1e-13)[0]
        assert float(U.integrate_exp(k, x)) == pytest.approx(ref, rel=1e-12)
    assert float(U.cumulative(4.0)) == pytest.approx(0.7 + 0.1 * U.density.sum())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 12), st.floats(0.1, 0.9))
def test_half_split_potential_closed_form(k, beta):
    # fragments of size 2**-n >= eta are broken: Psi = C * sum_{n<=k} 2**(n (1 - beta))
    m = half_split(beta)
    ref = m.C * math.fsum(2.0 ** (n * (1 - beta)) for n in range(k + 1))
    assert float(psi(m, k * math.log(2))) == pytest.approx(ref, rel=1e-12)


def test_potential_beyond_range_raises():
    m = mix()
    U = renewal_measure(Subordinator(m), 2.0)
    with pytest.raises(NumericalError):
        psi(m, 3.0, U=U)


def test_renewal_for_model_is_order_independent():
    m = bounded(0.5)
    opts = RenewalOptions(n_samples=500)
    small_first = renewal_for_model(m, 0.5, opts)
    renewal_for_model(m, 2.0, opts)
    again = renewal_for_model(m, 0.5, opts)
    assert again is small_first
    m2 = bounded(0.5)
    renewal_for_model(m2, 2.0, opts)
    np.testing.assert_array_equal(renewal_for_model(m2, 0.5, opts).density, small_first.density)


def test_csv_columns(tmp_path):
    U = renewal_measure(Subordinator(half_split()), 3.0)
    p = tmp_path / "u.csv"
    to_csv(U, p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["x", "mass_or_density", "cumulative"]
    assert float(rows[-1][2]) == pytest.approx(float(U.cumulative(3.0)))
