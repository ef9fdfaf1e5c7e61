import json
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fragopt.errors import DivergentIntegral, InvariantViolation, ValidationError
from fragopt.model import FiniteDiscrete, MassPartition, kappa, model_from_dict, validate

from conftest import bounded, dissipative, finite, half_split, power_law


def test_mass_partition_sorted_and_checked():
    p = MassPartition((0.2, 0.0, 0.5))
    assert p.masses == (0.5, 0.2)
    with pytest.raises(InvariantViolation):
        MassPartition((0.7, 0.6))
    with pytest.raises(InvariantViolation):
        MassPartition((-0.1, 0.5))


def test_conservative_alpha_is_one():
    assert half_split().alpha == 1.0
    assert finite([(0.3, 0.7), (0.5, 0.3, 0.2)], 0.5).alpha == 1.0


def test_dissipative_alpha_root():
    m = dissipative(0.3)
    # oracle: root of 1 - 0.5**q - 0.3**q by mpmath
    ref = float(mp.findroot(lambda q: 1 - mp.mpf("0.5") ** q - mp.mpf("0.3") ** q, 0.75))
    assert m.alpha == pytest.approx(ref, abs=1e-12)
    assert abs(kappa(m, m.alpha)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.6), st.floats(0.05, 0.6))
def test_alpha_root_property(a, b):
    if a + b > 0.99:
        b = 0.99 - a
    m = finite([(a, b)], 0.1)
    assert abs(kappa(m, m.alpha)) < 1e-10
    assert m.alpha < 1.0


def test_half_split_cost_constant():
    assert half_split().C == pytest.approx(math.sqrt(2) - 1, abs=1e-15)


def test_power_law_constants_against_mpmath():
    m = power_law(0.5, 0.75)
    mp.mp.dps = 30
    # x = t**2 removes the x**-1.5 endpoint singularity: dx x**-1.5 = 2 t**-2 dt
    C = mp.quad(lambda t: ((1 - t**2) ** mp.mpf(0.75) + t ** mp.mpf(1.5) - 1) * 2 / t**2,
                [0, mp.mpf("1e-6"), mp.mpf("1e-3"), mp.sqrt(0.5)])
    mu = mp.quad(lambda t: ((1 - t**2) * -mp.log(1 - t**2) + t**2 * -mp.log(t**2)) * 2 / t**2,
                 [0, mp.mpf("1e-6"), mp.mpf("1e-3"), mp.sqrt(0.5)])
    mp.mp.dps = 15
    assert m.alpha == 1.0
    assert m.C == pytest.approx(float(C), rel=1e-10)
    assert m.mean_jump == pytest.approx(float(mu), rel=1e-10)
    assert m.m_alpha == pytest.approx(m.mean_jump)


def test_bounded_mean_jump_against_quadrature():
    m = bounded(0.5)
    f = lambda x: np.interp(x, [0, 0.25, 0.5], [1, 2, 1])
    ref = mp.quad(lambda x: ((1 - x) * -mp.log(1 - x) + x * -mp.log(x)) * float(f(float(x))), [0, 0.25, 0.5])
    assert m.mean_jump == pytest.approx(float(ref), rel=1e-8)


def test_divergent_potential_cost():
    with pytest.raises(DivergentIntegral):
        power_law(0.5, 0.5).C


def test_identity_partition_is_a_violation():
    m = finite([(1.0,), (0.5, 0.5)], 0.5)
    rep = validate(m)
    assert not rep.ok and "identity" in rep.violations[0]


def test_validate_report_fields():
    rep = validate(half_split())
    assert rep.ok and rep.lattice and rep.lattice_step == pytest.approx(math.log(2))
    assert not validate(finite([(0.3, 0.7), (0.5, 0.3, 0.2)], 0.5)).lattice


def test_json_round_trip_and_errors():
    d = {"nu": {"type": "finite", "atoms": [{"masses": [0.5, 0.5], "weight": 2.0}]},
         "phi": {"type": "per_atom", "values": [0.25]}, "beta": 0.5}
    m = model_from_dict(json.loads(json.dumps(d)), "x")
    assert isinstance(m.nu, FiniteDiscrete) and m.C == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        model_from_dict({"nu": {"type": "nope"}, "phi": {"type": "potential", "beta_cost": 1}, "beta": 1})
    with pytest.raises(ValidationError):
        model_from_dict({"phi": {"type": "potential", "beta_cost": 1}, "beta": 1})
    with pytest.raises(InvariantViolation):
        model_from_dict({**d, "beta": 0.0})
