"""Mean energies of one-step and two-step reduction procedures.

With ``ell = log(1/eta)`` and ``ell0 = log(1/eta0)``, the two-step mean is
``Psi(ell) + E~[1{X <= ell0} exp((alpha - beta2) X) Psi2(ell0 - X)]`` where
``X`` is the first-passage position of the first device's subordinator above
``ell``. The expectation is computed from the exact overshoot law
(quadrature) or from sampled passages (Monte Carlo).
"""
from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import ties
from .levy import AtomicLaw, GridLaw, Subordinator, overshoot_law, sample_passages
from .model import FragmentationModel, cost_constant
from .renewal import AtomicRenewal, GridRenewal, Potential, RenewalOptions, renewal_for_model


class FirstDevice(enum.Enum):
    RUN = "run"
    SKIPPED = "skipped"  # the "1+" convention: device 2 starts on the unit fragment


class ExponentOrderWarning(UserWarning):
    """``beta >= alpha``: the energy grows without bound as the threshold shrinks."""


def ell(eta: float) -> float:
    return -math.log(eta)


@dataclass(frozen=True)
class TwoStepConfig:
    eta: float
    eta0: float
    first_device: FirstDevice = FirstDevice.RUN

    def __post_init__(self):
        if not (0.0 < self.eta0 <= self.eta <= 1.0):
            raise ValueError(f"need 0 < eta0 <= eta <= 1, got eta={self.eta}, eta0={self.eta0}")

    @classmethod
    def skipped(cls, eta0: float) -> "TwoStepConfig":
        return cls(1.0, eta0, FirstDevice.SKIPPED)

    @property
    def ell(self) -> float:
        return ell(self.eta)

    @property
    def ell0(self) -> float:
        return ell(self.eta0)

    @property
    def gap(self) -> float:
        return self.ell0 - self.ell

    @property
    def ratio(self) -> float:
        return self.ell0 / self.ell if self.ell > 0 else math.inf


@dataclass(frozen=True)
class EnergyEstimate:
    value: float
    error: float
    method: str

    def __post_init__(self):
        if not self.error >= 0:
            raise ValueError("error must be nonnegative")


def _warn_order(model: FragmentationModel) -> None:
    if model.beta >= model.alpha:
        warnings.warn(f"beta={model.beta} >= alpha={model.alpha} for {model.name or 'model'}",
                      ExponentOrderWarning, stacklevel=3)


def potential(model: FragmentationModel, x_max: float, options: RenewalOptions | None = None) -> Potential:
    cost_constant(model)  # fail fast on a divergent cost before any renewal work
    return Potential(model, renewal_for_model(model, x_max, options))


def _rounding(terms) -> float:
    return 64 * float(np.finfo(float).eps) * math.fsum(np.abs(np.asarray(terms, dtype=float)))


def _batches(U) -> tuple:
    return U.batches if isinstance(U, GridRenewal) else ()


def _batch_error(values) -> float:
    """Standard error of a mean over independent renewal sub-estimates."""
    if len(values) < 2:
        return 0.0
    v = np.asarray(values, dtype=float)
    return float(v.std(ddof=1) / math.sqrt(v.size))


def mean_energy_single(model: FragmentationModel, eta0: float,
                       options: RenewalOptions | None = None) -> EnergyEstimate:
    """``Psi(ell(eta0))``: reduce the unit fragment below ``eta0`` with one device.

    With a Monte Carlo renewal measure the error adds the batch-means
    standard error of the renewal estimate.
    """
    _warn_order(model)
    x = ell(eta0)
    P = potential(model, x, options)
    v = float(P(x))
    mc = _batch_error([float(Potential(model, Ub)(x)) for Ub in _batches(P.U)])
    return EnergyEstimate(v, _rounding([v]) + mc, _method(P))


def _method(P: Potential) -> str:
    return "quadrature" if isinstance(P.U, AtomicRenewal) else "quadrature_mc_renewal"


def _passage_term(law, weight: float, P2: Potential, level0: float) -> tuple[float, float]:
    """``int 1{z <= level0} exp(weight z) P2(level0 - z) law(dz)`` and a rounding bound."""
    if isinstance(law, AtomicLaw):
        z, m = law.points, law.masses
    elif isinstance(law, GridLaw):
        z, m = law.centers, law.masses
    else:
        raise TypeError(type(law))
    keep = ties.not_passed(z, level0)
    z, m = z[keep], m[keep]
    terms = m * np.exp(weight * z) * P2(np.maximum(level0 - z, 0.0))
    return math.fsum(terms), _rounding(terms)


def _overshoot(model: FragmentationModel, U, level: float, level0: float):
    cells = None
    if level0 > level and isinstance(U, GridRenewal):
        cells = max(1, int(round((level0 - level) / U.h)))
    top = level0 if level0 > level else level + 1.0
    return overshoot_law(Subordinator(model), U, level, z_max=top, n_cells=cells)


def _second_stage(model1, model2, U1, U2, level: float, level0: float) -> tuple[float, float]:
    if level0 == level:
        return 0.0, 0.0
    law = _overshoot(model1, U1, level, level0)
    return _passage_term(law, model1.alpha - model2.beta, Potential(model2, U2), level0)


def second_stage_term(model1: FragmentationModel, model2: FragmentationModel, level: float,
                      level0: float, options: RenewalOptions | None = None) -> tuple[float, float]:
    """Mean energy of device 2 applied to what device 1 leaves at ``level``."""
    if level0 < level:
        raise ValueError("level0 must be at least level")
    U1 = renewal_for_model(model1, level, options)
    U2 = renewal_for_model(model2, level0, options)
    return _second_stage(model1, model2, U1, U2, level, level0)


def _two_step_value(model1, model2, cfg: TwoStepConfig, U1, U2) -> tuple[float, float]:
    first = float(Potential(model1, U1)(cfg.ell))
    second, err = _second_stage(model1, model2, U1, U2, cfg.ell, cfg.ell0)
    return first + second, err + _rounding([first])


def mean_energy_two_step(model1: FragmentationModel, model2: FragmentationModel, cfg: TwoStepConfig,
                         options: RenewalOptions | None = None) -> EnergyEstimate:
    _warn_order(model1)
    _warn_order(model2)
    P2 = potential(model2, cfg.ell0, options)
    if cfg.first_device is FirstDevice.SKIPPED:
        v = float(P2(cfg.ell0))
        mc = _batch_error([float(Potential(model2, Ub)(cfg.ell0)) for Ub in _batches(P2.U)])
        return EnergyEstimate(v, _rounding([v]) + mc, _method(P2))
    P1 = potential(model1, cfg.ell, options)
    value, err = _two_step_value(model1, model2, cfg, P1.U, P2.U)
    b1, b2 = _batches(P1.U), _batches(P2.U)
    if b1 or b2:
        n = max(len(b1), len(b2))
        pairs = zip(b1 or (P1.U,) * n, b2 or (P2.U,) * n)
        err += _batch_error([_two_step_value(model1, model2, cfg, u1, u2)[0] for u1, u2 in pairs])
    method = "quadrature" if _method(P1) == _method(P2) == "quadrature" else "quadrature_mc_renewal"
    return EnergyEstimate(value, err, method)


def mean_energy_two_step_mc(model1: FragmentationModel, model2: FragmentationModel, cfg: TwoStepConfig,
                            n_replicas: int, seed: int, options: RenewalOptions | None = None,
                            trunc_eps: float | None = None) -> EnergyEstimate:
    """Same formula with the passage position ``X`` sampled; error is the MC standard error."""
    if n_replicas < 100:
        raise ValueError("n_replicas must be at least 100")
    P2 = potential(model2, cfg.ell0, options)
    if cfg.first_device is FirstDevice.SKIPPED:
        return EnergyEstimate(float(P2(cfg.ell0)), 0.0, "first_passage_mc")
    first = float(potential(model1, cfg.ell, options)(cfg.ell))
    batch = sample_passages(Subordinator(model1), cfg.ell, n=n_replicas, seed=seed, trunc_eps=trunc_eps)
    z = batch.xi_at_passage
    keep = ties.not_passed(z, cfg.ell0)
    vals = np.zeros(n_replicas)
    if np.any(keep):
        zk = z[keep]
        vals[keep] = np.exp((model1.alpha - model2.beta) * zk) * P2(np.maximum(cfg.ell0 - zk, 0.0))
    return EnergyEstimate(first + float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_replicas)),
                          "first_passage_mc")


def energy_difference_vs_second(model1: FragmentationModel, model2: FragmentationModel, cfg: TwoStepConfig,
                                options: RenewalOptions | None = None) -> float:
    """``E(E(eta, eta0)) - E(E(1+, eta0))`` from the three-term decomposition.

    Device 2 alone splits into its own run to ``eta`` and a continuation from
    its frozen sizes, so only the pieces that differ are evaluated.
    """
    ell1, ell0 = cfg.ell, cfg.ell0
    P1 = potential(model1, ell1, options)
    P2 = potential(model2, ell0, options)
    head = float(P1(ell1)) - float(P2(ell1))
    t1, _ = second_stage_term(model1, model2, ell1, ell0, options)
    t2, _ = second_stage_term(model2, model2, ell1, ell0, options)
    return head + t1 - t2


def energy_difference_vs_first(model1: FragmentationModel, model2: FragmentationModel, cfg: TwoStepConfig,
                               options: RenewalOptions | None = None) -> float:
    """``E(E(eta, eta0)) - E(E(eta0, eta0))``: both continue from device 1's frozen sizes."""
    t_second, _ = second_stage_term(model1, model2, cfg.ell, cfg.ell0, options)
    t_first, _ = second_stage_term(model1, model1, cfg.ell, cfg.ell0, options)
    return t_second - t_first


def write_csv(rows, path) -> None:
    """Rows of ``(eta, eta0, method, value, error)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eta", "eta0", "method", "value", "error"])
        for eta, eta0, method, value, error in rows:
            w.writerow([repr(float(eta)), repr(float(eta0)), method, repr(float(value)), repr(float(error))])
