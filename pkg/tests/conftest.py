import math

import pytest

from fragopt.model import model_from_dict


def finite(atoms, beta, name="", weights=None, beta_cost=None):
    weights = weights or [1.0] * len(atoms)
    return model_from_dict({
        "nu": {"type": "finite", "atoms": [{"masses": list(a), "weight": w} for a, w in zip(atoms, weights)]},
        "phi": {"type": "potential", "beta_cost": beta if beta_cost is None else beta_cost},
        "beta": beta,
    }, name)


def power_law(rho, beta, c=1.0, name="pl"):
    return model_from_dict({
        "nu": {"type": "binary_density", "family": "power_law", "c": c, "rho": rho},
        "phi": {"type": "potential", "beta_cost": beta},
        "beta": beta,
    }, name)


def bounded(beta, name="bd"):
    return model_from_dict({
        "nu": {"type": "binary_density", "family": "bounded", "x": [0.0, 0.25, 0.5], "f": [1.0, 2.0, 1.0]},
        "phi": {"type": "potential", "beta_cost": beta},
        "beta": beta,
    }, name)


def half_split(beta=0.5):
    return finite([(0.5, 0.5)], beta, "half")


def mix(beta=0.5):
    """Two non-commensurate conservative splits (non-lattice)."""
    return finite([(0.3, 0.7), (0.5, 0.3, 0.2)], beta, f"mix{beta}")


def pair(beta=0.3):
    return finite([(0.4, 0.6), (0.25, 0.75)], beta, f"pair{beta}")


def dissipative(beta, masses=(0.5, 0.3)):
    """Single dissipative split: alpha < 1."""
    return finite([masses], beta, f"A{beta}")


def conservative(beta, masses=(0.3, 0.7)):
    return finite([masses], beta, f"B{beta}")


ETA = math.exp


@pytest.fixture
def half():
    return half_split()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
