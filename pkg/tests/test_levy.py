import math

import mpmath as mp
import numpy as np
import pytest
from scipy import stats

from fragopt.errors import TruncationRequired
from fragopt.levy import (
    DensityLevy,
    DiscreteLevy,
    Subordinator,
    default_trunc_eps,
    lattice_step,
    overshoot_law,
    sample_passages,
    tilted_levy_measure,
    tilted_phi,
)
from fragopt.renewal import RenewalOptions, renewal_for_model
from fragopt.simulate import tagged_fragment_jumps

from conftest import bounded, dissipative, finite, half_split, mix, power_law


@pytest.mark.parametrize("model", [half_split(), mix(), dissipative(0.3), power_law(0.5, 0.75), bounded(0.5)],
                         ids=["half", "mix", "dissipative", "power_law", "bounded"])
@pytest.mark.parametrize("q", [0.5, 3.0, 1e4])
def test_exponent_from_kappa_matches_levy_measure(model, q):
    sub = Subordinator(model)
    assert sub.laplace(q) == pytest.approx(sub.laplace_from_levy(q), rel=1e-9)


def test_power_law_exponent_against_mpmath():
    m = power_law(0.5, 0.75)
    mp.mp.dps = 30
    for q in (1.0, 50.0):
        ref = mp.quad(lambda t: (1 - (1 - t**2) ** (q + 1) - t ** (2 * q + 2)) * 2 / t**2,
                      [0, mp.mpf("1e-6"), mp.mpf("1e-3"), mp.sqrt(0.5)])
        assert tilted_phi(m, q) == pytest.approx(float(ref), rel=1e-9)
    mp.mp.dps = 15


def test_discrete_levy_atoms():
    levy = tilted_levy_measure(dissipative(0.3))
    a = dissipative(0.3).alpha
    assert isinstance(levy, DiscreteLevy)
    np.testing.assert_allclose(levy.jumps, [-math.log(0.5), -math.log(0.3)])
    np.testing.assert_allclose(levy.masses, [0.5**a, 0.3**a])
    assert levy.total_mass == pytest.approx(1.0)  # kappa(alpha) = 0 and one split per unit rate


def test_lattice_detection():
    assert lattice_step(half_split()) == pytest.approx(math.log(2))
    assert lattice_step(finite([(0.25, 0.25, 0.5)], 0.5)) == pytest.approx(math.log(2))
    assert lattice_step(mix()) is None
    assert lattice_step(power_law(0.5, 0.75)) is None


def test_power_law_is_infinite_activity():
    sub = Subordinator(power_law(0.5, 0.75))
    assert sub.infinite_activity and isinstance(sub.levy, DensityLevy)
    with pytest.raises(TruncationRequired):
        sample_passages(sub, 1.0, n=10, seed=0, trunc_eps=0.0)


def test_default_truncation_meets_drift_budget():
    m = power_law(0.5, 0.75)
    sub = Subordinator(m)
    for level in (0.01, 1.0, 5.0):
        eps = default_trunc_eps(sub, level)
        # expected time below the level is at most e / phi~(1/level)
        creep = sub.levy.neglected_drift(eps) * math.e / sub.laplace(1.0 / level)
        assert creep <= 1e-3 * level * (1 + 1e-6)


def test_neglected_drift_against_mpmath():
    levy = Subordinator(power_law(0.5, 0.75)).levy
    eps = 1e-4
    a = -math.expm1(-eps)
    ref = mp.quad(lambda x: -mp.log(1 - x) * (1 - x) * x ** mp.mpf(-1.5), [0, a])
    assert levy.neglected_drift(eps) == pytest.approx(float(ref), rel=1e-8)


def test_integrated_tail_two_routes():
    levy = Subordinator(power_law(0.5, 0.75)).levy
    u = np.array([1e-5, 0.3, 0.69, 0.7, 2.0])
    direct = np.array([levy._partial_mean(x) for x in u]) + u * levy.tail(u)
    np.testing.assert_allclose(levy.integrated_tail(u), direct, rtol=1e-10)
    # I'(u) = tail(u)
    h = 1e-4 * u
    slope = (levy.integrated_tail(u + h) - levy.integrated_tail(u - h)) / (2 * h)
    np.testing.assert_allclose(slope, levy.tail(u), rtol=1e-5)


def test_sampled_jumps_follow_truncated_measure():
    levy = Subordinator(power_law(0.5, 0.75)).levy
    eps = 1e-3
    z = levy.sample(3, np.arange(40_000, dtype=np.uint64), 0, eps=eps)
    assert z.min() >= eps * (1 - 1e-12)
    grid = np.array([2e-3, 1e-2, 0.1, 0.5, 1.0, 3.0])
    emp = (z[:, None] > grid).mean(axis=0)
    exact = levy.tail(grid) / levy.tail(eps)
    assert np.max(np.abs(emp - exact)) < 4 / math.sqrt(z.size)


def test_overshoot_law_discrete_matches_sampling():
    m = mix()
    level = 4.0
    law = overshoot_law(Subordinator(m), renewal_for_model(m, level), level)
    assert law.total_mass == pytest.approx(1.0, abs=1e-12)
    b = sample_passages(Subordinator(m), level, n=50_000, seed=11)
    emp = np.searchsorted(np.sort(b.xi_at_passage), law.points + 1e-12, side="right") / b.xi_at_passage.size
    assert np.max(np.abs(emp - law.cdf(law.points))) < 0.01


def test_overshoot_law_density_mass():
    m = bounded(0.5)
    opts = RenewalOptions(n_samples=20_000)
    level = 1.0
    law = overshoot_law(Subordinator(m), renewal_for_model(m, level, opts), level, z_max=4.0)
    assert law.total_mass == pytest.approx(1.0, abs=0.02)
    b = sample_passages(Subordinator(m), level, n=20_000, seed=5)
    grid = np.linspace(1.05, 3.0, 12)
    emp = (b.xi_at_passage[:, None] <= grid).mean(axis=0)
    assert np.max(np.abs(emp - law.cdf(grid))) < 0.03


def test_passage_batch_independent_of_batching():
    sub = Subordinator(mix())
    whole = sample_passages(sub, 3.0, n=200, seed=4)
    part = sample_passages(sub, 3.0, n=50, seed=4, first_replica=100)
    np.testing.assert_array_equal(whole.xi_at_passage[100:150], part.xi_at_passage)


def test_weighted_occupation_mean_is_potential_integral():
    # E[int_0^T exp(w xi) dt] = int_[0, level] exp(w y) U(dy)
    m = mix()
    level, w = 3.0, 0.4
    b = sample_passages(Subordinator(m), level, w, n=100_000, seed=2)
    exact = float(renewal_for_model(m, level).integrate_exp(w, level))
    se = b.weighted_occupation.std(ddof=1) / math.sqrt(b.weighted_occupation.size)
    assert abs(b.weighted_occupation.mean() - exact) < 4 * se


def test_tagged_fragment_weighted_law():
    m = dissipative(0.3)
    z, wgt = tagged_fragment_jumps(m, 200_000, seed=1)
    levy = tilted_levy_measure(m)
    for jump, mass in zip(levy.jumps, levy.masses):
        p = np.mean(wgt * np.isclose(z, jump))
        assert p == pytest.approx(mass / levy.total_mass, abs=0.01)
