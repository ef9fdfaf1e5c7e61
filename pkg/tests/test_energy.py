import csv
import math
import warnings

import numpy as np
import pytest

from fragopt.energy import (
    ExponentOrderWarning,
    FirstDevice,
    TwoStepConfig,
    energy_difference_vs_first,
    energy_difference_vs_second,
    mean_energy_single,
    mean_energy_two_step,
    mean_energy_two_step_mc,
    second_stage_term,
    write_csv,
)
from fragopt.renewal import RenewalOptions

from conftest import bounded, dissipative, finite, half_split, mix, pair
from oracle import tree_energy

E = math.exp


def test_half_split_value():
    est = mean_energy_single(half_split(), 0.25)
    assert est.value == pytest.approx(2 * math.sqrt(2) - 1, abs=1e-12)
    assert est.method == "quadrature" and est.error < 1e-12


@pytest.mark.parametrize("m1,m2,eta,eta0", [
    (mix(), pair(), E(-1.0), E(-3.0)),
    (dissipative(0.3), finite([(0.3, 0.7)], 0.4), E(-1.5), E(-2.5)),
    (pair(0.6), mix(0.2), E(-0.5), E(-3.2)),
    (half_split(), mix(), 0.5, E(-2.9)),
])
def test_two_step_matches_tree_recursion(m1, m2, eta, eta0):
    cfg = TwoStepConfig(eta, eta0)
    est = mean_energy_two_step(m1, m2, cfg)
    ref = tree_energy(m1, m2, cfg.ell, cfg.ell0)
    assert est.value == pytest.approx(ref, rel=1e-11)


def test_single_matches_tree_recursion():
    m = mix()
    for ell0 in (0.5, 2.0, 3.7):
        assert mean_energy_single(m, E(-ell0)).value == pytest.approx(tree_energy(m, m, ell0, ell0), rel=1e-11)


def test_degenerate_thresholds_collapse():
    m1, m2 = mix(), pair()
    eta0 = E(-3.0)
    same = mean_energy_two_step(m1, m2, TwoStepConfig(eta0, eta0)).value
    assert same == mean_energy_single(m1, eta0).value
    skip = mean_energy_two_step(m1, m2, TwoStepConfig.skipped(eta0)).value
    assert skip == mean_energy_single(m2, eta0).value
    # eta = 1 with device 1 run: the unit fragment is split once by device 1
    one = mean_energy_two_step(m1, m2, TwoStepConfig(1.0, eta0)).value
    assert one == pytest.approx(tree_energy(m1, m2, 0.0, 3.0), rel=1e-11)
    assert second_stage_term(m1, m2, 2.0, 2.0) == (0.0, 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        TwoStepConfig(0.1, 0.2)
    with pytest.raises(ValueError):
        TwoStepConfig(1.5, 0.2)
    c = TwoStepConfig.skipped(0.1)
    assert c.first_device is FirstDevice.SKIPPED and c.eta == 1.0
    c = TwoStepConfig(E(-1), E(-3))
    assert c.gap == pytest.approx(2.0) and c.ratio == pytest.approx(3.0)


def test_energy_differences_match_direct_subtraction():
    m1, m2 = mix(), pair()
    cfg = TwoStepConfig(E(-2.0), E(-4.5))
    two = mean_energy_two_step(m1, m2, cfg).value
    vs2 = energy_difference_vs_second(m1, m2, cfg)
    vs1 = energy_difference_vs_first(m1, m2, cfg)
    assert vs2 == pytest.approx(two - mean_energy_single(m2, cfg.eta0).value, rel=1e-10, abs=1e-12)
    assert vs1 == pytest.approx(two - mean_energy_single(m1, cfg.eta0).value, rel=1e-10, abs=1e-12)


def test_first_passage_mc_agrees():
    m1, m2 = mix(), pair()
    cfg = TwoStepConfig(E(-1.5), E(-3.5))
    q = mean_energy_two_step(m1, m2, cfg)
    mc = mean_energy_two_step_mc(m1, m2, cfg, 40_000, seed=8)
    assert mc.method == "first_passage_mc"
    assert abs(mc.value - q.value) < 4 * mc.error
    with pytest.raises(ValueError):
        mean_energy_two_step_mc(m1, m2, cfg, 10, seed=0)


def test_density_model_error_bars_are_consistent():
    m = bounded(0.5)
    opts = RenewalOptions(n_samples=4000, seed=2)
    one = mean_energy_single(m, 0.2, opts)
    two = mean_energy_two_step(m, m, TwoStepConfig(0.5, 0.2), opts)
    assert one.method == two.method == "quadrature_mc_renewal"
    assert one.error > 0 and two.error > 0
    assert abs(one.value - two.value) < 3 * math.hypot(one.error, two.error)


def test_exponent_order_warning():
    with pytest.warns(ExponentOrderWarning):
        mean_energy_single(finite([(0.5, 0.3)], 0.9, beta_cost=0.3), 0.1)


def test_write_csv(tmp_path):
    p = tmp_path / "e.csv"
    write_csv([(0.5, 0.25, "quadrature", 1.0 / 3.0, 0.0)], p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["eta", "eta0", "method", "value", "error"]
    assert float(rows[1][3]) == 1.0 / 3.0  # shortest round-trip repr
