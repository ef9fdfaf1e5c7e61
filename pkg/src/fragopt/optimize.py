"""Choice of the intermediate threshold ``eta`` in ``[eta0, 1]``.

The objective is the two-step mean energy as a function of ``ell(eta)``.
The endpoint ``eta = 1`` uses the "1+" convention (device 2 alone) and
``eta = eta0`` is device 1 alone. No unimodality is assumed: the result is the
best point found and always carries the sweep table.
"""
from __future__ import annotations

import csv
import enum
import json
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .energy import TwoStepConfig, mean_energy_two_step
from .model import FragmentationModel
from .renewal import RenewalOptions

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
TIE_RTOL = 1e-9


def worker_count() -> int:
    """Size of the worker pool, bounded by ``FRAGOPT_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("FRAGOPT_THREADS", "1")))
    except ValueError:
        return 1


class Boundary(enum.Enum):
    INTERIOR = "Interior"
    AT_ETA0 = "AtEta0"  # device 1 only
    AT_ONE = "AtOne"  # device 2 only


@dataclass
class OptimizationResult:
    eta_star: float
    energy_star: float
    boundary_flag: Boundary
    sweep_table: list[tuple[float, float]] = field(default_factory=list)
    energy_first_only: float = math.nan
    energy_second_only: float = math.nan
    tolerance: float = 0.0
    n_evaluations: int = 0

    def to_json(self) -> str:
        rec = {
            "eta_star": self.eta_star,
            "energy_star": self.energy_star,
            "boundary_flag": self.boundary_flag.value,
            "energy_first_only": self.energy_first_only,
            "energy_second_only": self.energy_second_only,
            "tolerance": self.tolerance,
            "n_evaluations": self.n_evaluations,
        }
        return json.dumps(rec, indent=2, sort_keys=True)


class _Objective:
    """Energy as a function of ``ell(eta)``, with the quadrature error bound."""

    def __init__(self, model1, model2, eta0, options):
        self.m1, self.m2, self.eta0, self.options = model1, model2, eta0, options
        self.ell0 = -math.log(eta0)
        self.calls = 0
        self.max_err = 0.0
        self._lock = threading.Lock()

    def at(self, ell: float) -> float:
        ell = min(max(ell, 0.0), self.ell0)
        eta = self.eta0 if ell >= self.ell0 else math.exp(-ell)
        est = mean_energy_two_step(self.m1, self.m2, TwoStepConfig(eta, self.eta0), self.options)
        with self._lock:
            self.calls += 1
            self.max_err = max(self.max_err, est.error)
        return est.value

    def second_only(self) -> float:
        est = mean_energy_two_step(self.m1, self.m2, TwoStepConfig.skipped(self.eta0), self.options)
        self.max_err = max(self.max_err, est.error)
        return est.value


def _ell_grid(ell0: float, n_points: int, decades: float = 6.0) -> np.ndarray:
    """Geometric grid on ``(0, ell0]`` reaching down to ``ell0 * 10**-decades``."""
    return ell0 * np.geomspace(10.0**-decades, 1.0, n_points)


def sweep(model1: FragmentationModel, model2: FragmentationModel, eta0: float, n_points: int = 41,
          options: RenewalOptions | None = None) -> list[tuple[float, float]]:
    """``(eta, energy)`` rows from ``eta = 1`` (device 2 only) down to ``eta = eta0`` (device 1 only)."""
    return _sweep(_Objective(model1, model2, eta0, options), n_points)[0]


def _sweep(obj: _Objective, n_points: int):
    if n_points < 3:
        raise ValueError("n_points must be at least 3")
    ells = _ell_grid(obj.ell0, n_points - 1)
    etas = [obj.eta0 if e == ells[-1] else math.exp(-e) for e in ells]
    n_workers = worker_count()
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:  # map keeps the grid order
            values = list(pool.map(obj.at, ells))
    else:
        values = [obj.at(e) for e in ells]
    rows = [(1.0, obj.second_only())] + list(zip(etas, values))
    return rows, np.concatenate([[0.0], ells])


def _tie_tol(values, obj: _Objective) -> float:
    scale = max(abs(v) for v in values)
    return max(TIE_RTOL * scale, 10 * obj.max_err)


def minimize_eta(model1: FragmentationModel, model2: FragmentationModel, eta0: float, tol: float = 1e-6,
                 n_points: int = 41, options: RenewalOptions | None = None) -> OptimizationResult:
    """Best ``eta`` found by a sweep followed by golden-section search in ``ell(eta)``.

    ``tol`` is the bracket width in ``ell`` at which the search stops. Energies
    within the tie tolerance of the device-1-only energy are reported as
    ``AtEta0``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    obj = _Objective(model1, model2, eta0, options)
    rows, ells = _sweep(obj, n_points)
    vals = np.array([v for _, v in rows])
    e_first, e_second = vals[-1], vals[0]
    tie = _tie_tol(vals, obj)
    i = int(np.argmin(vals))
    best_l, best_v = ells[i], vals[i]
    last = len(vals) - 1
    endpoint_wins = (i == last and vals[last - 1] > best_v) or (i == 0 and vals[1] > best_v)
    if not endpoint_wins:
        a, b = ells[max(i - 1, 0)], ells[min(i + 1, last)]
        c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
        fc, fd = obj.at(c), obj.at(d)
        while b - a > tol:
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - GOLDEN * (b - a)
                fc = obj.at(c)
            else:
                a, c, fc = c, d, fd
                d = a + GOLDEN * (b - a)
                fd = obj.at(d)
        for l_try, v_try in ((c, fc), (d, fd)):
            if v_try < best_v and 0.0 < l_try:
                best_l, best_v = l_try, v_try
    tie = max(tie, 10 * obj.max_err)
    if e_first <= best_v + tie:
        flag, eta_star, best_v = Boundary.AT_ETA0, eta0, e_first
    elif e_second <= best_v + tie:
        flag, eta_star, best_v = Boundary.AT_ONE, 1.0, e_second
    else:
        flag = Boundary.INTERIOR
        eta_star = math.exp(-best_l)
    return OptimizationResult(eta_star, float(best_v), flag, rows, float(e_first), float(e_second), tie, obj.calls)


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eta", "ell_eta", "energy"])
        for eta, energy in rows:
            w.writerow([repr(float(eta)), repr(float(-math.log(eta))), repr(float(energy))])
