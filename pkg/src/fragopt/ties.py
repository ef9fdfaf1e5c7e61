"""The single tie convention shared by every code path.

A fragment of size exactly the threshold is still broken (``size >= eta``),
and first passage of the log-size is strict (``xi > level``). Both are
evaluated in log-size with the same relative slack so that a lattice walk
landing on ``log(1/eta)`` by repeated addition is treated as *at* the level.
"""
from __future__ import annotations

import numpy as np

TIE_RTOL = 1e-12


def slack(level):
    return TIE_RTOL * np.maximum(1.0, np.abs(level))


def not_passed(xi, level):
    """True where log-size ``xi`` has not yet strictly exceeded ``level``."""
    return xi <= level + slack(level)


def still_broken(size, threshold):
    """True where a fragment of ``size`` is still processed at ``threshold``."""
    size = np.asarray(size, dtype=float)
    with np.errstate(divide="ignore"):
        return not_passed(-np.log(size), -np.log(threshold))
