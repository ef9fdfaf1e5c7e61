"""Limit constants for small and close-to-unit thresholds, and the comparison tables.

Small thresholds: ``eta**(alpha-beta) Psi(ell(eta)) -> C / ((alpha-beta) mu1)``
and the overshoot converges to ``M(du) = Pi((u, inf)) du / mu1``.

Close to unit size: under regular variation of the tilted exponent with
index ``rho``, the overshoot scaled by ``ell(eta)`` converges to the law with
density ``sin(pi rho)/pi / ((1+y) y**rho)``.
"""
from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .energy import TwoStepConfig, mean_energy_single, mean_energy_two_step
from .errors import LatticeWarning, NotRV
from .levy import DiscreteLevy, Subordinator
from .model import FragmentationModel, PowerLaw
from .renewal import AtomicRenewal, RenewalOptions, renewal_for_model

ZERO_RATIO = 1e-6
INF_RATIO = 1e6
RV_SLOPE_MIN = 0.02


# --- small thresholds ----------------------------------------------------


def small_threshold_limit(model: FragmentationModel) -> float:
    """``C / ((alpha - beta) * mu1)``; warns when the jumps live on a lattice."""
    if not model.beta < model.alpha:
        raise ValueError("the small-threshold limit needs beta < alpha")
    sub = Subordinator(model)
    if sub.lattice_step is not None:
        warnings.warn(f"lattice jumps (span {sub.lattice_step:.6g}): the limit does not exist",
                      LatticeWarning, stacklevel=2)
    return model.C / ((model.alpha - model.beta) * model.mean_jump)


class StationaryOvershoot:
    """``M(du) = Pi((u, inf)) du / mu1`` for one model."""

    def __init__(self, model: FragmentationModel):
        self.model = model
        self.sub = Subordinator(model)
        self.mu1 = model.mean_jump

    def density(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u >= 0, self.sub.levy.tail(np.maximum(u, 0.0)), 0.0) / self.mu1

    def _integrated_tail(self, u):
        levy = self.sub.levy
        u = np.maximum(np.asarray(u, dtype=float), 0.0)
        if isinstance(levy, DiscreteLevy):
            return (levy.masses * np.minimum(levy.jumps, u[..., None])).sum(axis=-1)
        return levy.integrated_tail(u)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u < 0, 0.0, self._integrated_tail(u) / self.mu1)

    @property
    def total_mass(self) -> float:
        levy = self.sub.levy
        if isinstance(levy, DiscreteLevy):
            return math.fsum(levy.masses * levy.jumps) / self.mu1
        return float(levy.integrated_tail(1e3)) / self.mu1


def stationary_overshoot(model: FragmentationModel) -> StationaryOvershoot:
    return StationaryOvershoot(model)


@dataclass(frozen=True)
class SmallThresholdConstants:
    limit_one_step: float
    limit_one_step_literal: float
    F_lambda: float
    D_lambda: float
    D_hat_lambda: float
    lambda_gap: float


def _step_breaks(model: FragmentationModel, U, lam: float):
    """Points in ``[0, lam]`` where ``u -> Pi~((u,inf))`` or ``u -> Psi(lam - u)`` jump."""
    pts = [0.0, lam]
    levy = Subordinator(model).levy
    if isinstance(levy, DiscreteLevy):
        pts.extend(levy.jumps[levy.jumps < lam])
    return pts


def _fd_integral(tail_model: FragmentationModel, weight: float, pot_model: FragmentationModel,
                 lam: float, options: RenewalOptions | None) -> float:
    """``int_0^lam exp(weight u) Psi_pot(lam - u) Pi_tail((u, inf)) du``.

    When both the tail and the renewal measure are purely atomic the
    integrand is ``exp(weight u)`` times a step function and is integrated
    exactly piece by piece.
    """
    U = renewal_for_model(pot_model, lam, options)
    pot_C, pot_k = pot_model.C, pot_model.alpha - pot_model.beta
    levy = Subordinator(tail_model).levy

    def psi(x):
        return pot_C * U.integrate_exp(pot_k, x)

    if isinstance(levy, DiscreteLevy) and isinstance(U, AtomicRenewal):
        brk = np.array(_step_breaks(tail_model, U, lam) + list(lam - U.points[U.points <= lam]))
        brk = np.unique(np.clip(brk, 0.0, lam))
        a, b = brk[:-1], brk[1:]
        mid = 0.5 * (a + b)
        height = psi(lam - mid) * levy.tail(mid)
        if weight == 0.0:
            piece = b - a
        else:
            piece = (np.exp(weight * b) - np.exp(weight * a)) / weight
        return math.fsum(height * piece)
    pts = sorted(set(p for p in _step_breaks(tail_model, U, lam) if 0 < p < lam))
    val, _ = integrate.quad(lambda u: math.exp(weight * u) * float(psi(lam - u)) * float(levy.tail(u)),
                            0.0, lam, points=pts or None, limit=500, epsabs=1e-12, epsrel=1e-10)
    return val


def constants_F_D(model1: FragmentationModel, model2: FragmentationModel, lambda_gap: float,
                  options: RenewalOptions | None = None) -> SmallThresholdConstants:
    """``F``, ``D`` and ``D^`` at gap ``lambda_gap``; the ``mu1`` normalizer of ``M`` cancels."""
    if lambda_gap <= 0:
        raise ValueError("lambda_gap must be positive")
    lam = lambda_gap
    F = _fd_integral(model1, model1.alpha - model2.beta, model2, lam, options)
    D = _fd_integral(model1, model1.alpha - model1.beta, model1, lam, options)
    Dh = _fd_integral(model2, model2.alpha - model2.beta, model2, lam, options)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LatticeWarning)
        lim = small_threshold_limit(model1)
    literal = model1.C / ((model1.alpha - model1.beta) * model1.m_alpha)
    return SmallThresholdConstants(lim, literal, F, D, Dh, lam)


def constants_F_D_trapezoid(model1: FragmentationModel, model2: FragmentationModel, lambda_gap: float,
                            n: int = 4_000_001, options: RenewalOptions | None = None) -> tuple[float, float, float]:
    """The same three integrals by the composite trapezoid rule on ``n`` points."""
    u = np.linspace(0.0, lambda_gap, n)

    def one(tail_model, weight, pot_model):
        U = renewal_for_model(pot_model, lambda_gap, options)
        psi = pot_model.C * U.integrate_exp(pot_model.alpha - pot_model.beta, lambda_gap - u)
        return float(integrate.trapezoid(np.exp(weight * u) * psi * Subordinator(tail_model).levy.tail(u), u))

    return (one(model1, model1.alpha - model2.beta, model2),
            one(model1, model1.alpha - model1.beta, model1),
            one(model2, model2.alpha - model2.beta, model2))


# --- reports -------------------------------------------------------------


@dataclass
class ReportRow:
    eta: float
    lhs: float
    rhs: float
    margin: float
    case_tag: str


@dataclass
class Report:
    rows: list[ReportRow] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def add(self, eta, lhs, rhs, margin, tag):
        self.rows.append(ReportRow(float(eta), float(lhs), float(rhs), float(margin), tag))

    def tags(self) -> list[str]:
        return sorted({r.case_tag for r in self.rows})

    def select(self, tag: str) -> list[ReportRow]:
        return [r for r in self.rows if r.case_tag == tag]

    def holds_from(self, tag: str, toward_zero: bool = True) -> float | None:
        """Largest grid ``eta`` (or smallest, approaching 1) from which the margin stays >= 0."""
        rows = sorted(self.select(tag), key=lambda r: r.eta, reverse=not toward_zero)
        edge = None
        for r in rows:
            if r.margin >= 0:
                edge = r.eta
            else:
                break
        return edge

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eta", "lhs", "rhs", "margin", "case_tag"])
            for r in self.rows:
                w.writerow([repr(r.eta), repr(r.lhs), repr(r.rhs), repr(r.margin), r.case_tag])


def check_small_threshold_theorems(model1: FragmentationModel, model2: FragmentationModel, lambda_gap: float,
                                   eta_grid, eps_fraction: float = 0.5, big_M: float = 1.0,
                                   options: RenewalOptions | None = None) -> Report:
    """Both sides of the small-threshold comparisons on a grid of ``eta``.

    ``margin >= 0`` means the inequality holds at that ``eta``. Case tags are
    ``first:a|b|c`` (against device 1 alone, by the sign of ``beta2 - beta``) and
    ``second:a|b|c`` (against device 2 alone, by the sign of ``alpha2 - alpha``);
    sandwiches give ``:lower`` and ``:upper`` rows.
    """
    a1, b1, C1 = model1.alpha, model1.beta, model1.C
    a2, b2, C2 = model2.alpha, model2.beta, model2.C
    k = constants_F_D(model1, model2, lambda_gap, options)
    rep = Report(notes={"F": k.F_lambda, "D": k.D_lambda, "D_hat": k.D_hat_lambda})
    for eta in np.sort(np.asarray(eta_grid, dtype=float))[::-1]:
        eta0 = eta * math.exp(-lambda_gap)
        two = mean_energy_two_step(model1, model2, TwoStepConfig(eta, eta0), options).value
        e1, e1_0 = (mean_energy_single(model1, x, options).value for x in (eta, eta0))
        e2, e2_0 = (mean_energy_single(model2, x, options).value for x in (eta, eta0))
        # against device 1 alone
        if b2 > b1:
            s = (a1 - b1) * k.D_lambda / C1
            rhs = (eps_fraction * s - s) * e1 + e1_0
            rep.add(eta, two, rhs, rhs - two, "first:a")
        elif b2 < b1:
            rhs = big_M * e1 + e1_0
            rep.add(eta, two, rhs, two - rhs, "first:b")
        else:
            s = (a1 - b1) * (k.F_lambda - k.D_lambda) / C1
            eps = eps_fraction
            lo, hi = (s - eps) * e1 + e1_0, (s + eps) * e1 + e1_0
            rep.add(eta, two, lo, two - lo, "first:c:lower")
            rep.add(eta, two, hi, hi - two, "first:c:upper")
        # against device 2 alone
        if a2 > a1:
            s = (a2 - b2) * k.D_hat_lambda / C2
            rhs = (eps_fraction * s - s) * e2 + e2_0
            rep.add(eta, two, rhs, rhs - two, "second:a")
        elif a2 < a1:
            rhs = big_M * e2 + e2_0
            rep.add(eta, two, rhs, two - rhs, "second:b")
        else:
            s = (a2 - b2) * (k.F_lambda - k.D_hat_lambda) / C2
            eps = eps_fraction
            lo, hi = (s - eps) * e2 + e2_0, (s + eps) * e2 + e2_0
            rep.add(eta, two, lo, two - lo, "second:c:lower")
            rep.add(eta, two, hi, hi - two, "second:c:upper")
        rep.add(eta, two - e1_0, e1, (two - e1_0) / e1, "excess_over_first")
        rep.add(eta, two - e2_0, e2, (two - e2_0) / e2, "excess_over_second")
    return rep


# --- decision table ------------------------------------------------------


class Ordering(enum.Enum):
    ORDERED = "ordered"
    UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class ComparisonVerdict:
    status: Ordering
    order: tuple[str, ...] | None  # best first
    row: int | None
    rationale: str

    def better(self, x: str, y: str) -> bool:
        return self.order.index(x) < self.order.index(y)


_ROWS = {
    1: ("F1", "F12", "F2"),
    2: ("F2", "F12", "F1"),
    3: ("F1", "F2", "F12"),
    4: ("F2", "F1", "F12"),
    5: ("F12", "F1", "F2"),
    6: ("F12", "F2", "F1"),
}


def corollary_verdict(alpha: float, beta: float, alpha_hat: float, beta_hat: float) -> ComparisonVerdict:
    """Ordering of device 1 alone, device 2 alone and the two-step procedure for small thresholds."""
    if min(alpha, beta, alpha_hat, beta_hat) <= 0 or not (beta < alpha and beta_hat < alpha_hat):
        raise ValueError("need positive exponents with beta < alpha and beta_hat < alpha_hat")
    if alpha_hat == alpha or beta_hat == beta:
        return ComparisonVerdict(Ordering.UNDETERMINED, None, None,
                                 "equal alpha or beta: the ordering also depends on eta0/eta")
    g1, g2 = alpha - beta, alpha_hat - beta_hat
    if alpha_hat > alpha and beta_hat < beta:
        row = 1
    elif alpha_hat < alpha and beta_hat > beta:
        row = 2
    elif g1 == g2:
        return ComparisonVerdict(Ordering.UNDETERMINED, None, None, "equal growth exponents alpha - beta")
    elif alpha_hat < alpha:  # and beta_hat < beta
        row = 3 if g1 < g2 else 4
    else:  # alpha_hat > alpha and beta_hat > beta
        row = 5 if g1 < g2 else 6
    return ComparisonVerdict(Ordering.ORDERED, _ROWS[row], row, f"row {row}")


def growth_ordering(alpha: float, beta: float, alpha_hat: float, beta_hat: float) -> tuple[str, ...]:
    """Ordering (best first) read off the leading growth exponents as ``eta -> 0``.

    Device 1 alone grows like ``eta**-(alpha - beta)``, device 2 alone like
    ``eta**-(alpha_hat - beta_hat)`` and the two-step procedure like
    ``eta**-max(alpha - beta, alpha - beta_hat)``, its first stage alone
    contributing ``alpha - beta``. On equal exponents the two-step procedure is
    cheaper than device 1 alone (it stops device 1 a factor ``e**lambda`` earlier).
    """
    e12 = max(alpha - beta, alpha - beta_hat)
    key = {"F1": (alpha - beta, 1), "F2": (alpha_hat - beta_hat, 1), "F12": (e12, 0)}
    return tuple(sorted(key, key=lambda k: key[k]))


# --- close-to-unit thresholds --------------------------------------------


@dataclass(frozen=True)
class RVIndex:
    rho: float
    residual: float
    not_rv: bool


def default_q_grid() -> np.ndarray:
    return np.logspace(0.0, 8.0, 33)


def rv_index(model: FragmentationModel, q_grid=None) -> RVIndex:
    """Log-log slope of the tilted exponent over the top decade of ``q_grid``.

    ``residual`` is the largest deviation of the local slopes in that decade
    from the fit. Bounded exponents (compound Poisson) give a slope near 0 and
    ``not_rv = True``.
    """
    q = np.asarray(default_q_grid() if q_grid is None else q_grid, dtype=float)
    if np.log10(q.max() / q.min()) < 4 - 1e-9:
        raise ValueError("q_grid must span at least four decades")
    sub = Subordinator(model)
    top = q[q >= q.max() / 10.0]
    lq = np.log(top)
    lp = np.log([sub.laplace(x) for x in top])
    slope, icpt = np.polyfit(lq, lp, 1)
    local = np.diff(lp) / np.diff(lq) if top.size > 1 else np.array([slope])
    resid = float(np.max(np.abs(local - slope)))
    rho = float(slope)
    return RVIndex(rho, resid, not (RV_SLOPE_MIN < rho < 1.0 - RV_SLOPE_MIN))


def regular_variation_index(model: FragmentationModel) -> float:
    """Exact index for power-law splits, otherwise the fitted slope (raises NotRV)."""
    if isinstance(model.nu, PowerLaw):
        return model.nu.rho
    r = rv_index(model)
    if r.not_rv:
        raise NotRV(f"tilted exponent is not regularly varying with index in (0,1) (slope {r.rho:.4g})")
    return r.rho


class DynkinLamperti:
    """Law with density ``sin(pi rho)/pi / ((1+y) y**rho)`` on ``(0, inf)``.

    It is the law of ``V/(1-V)`` with ``V ~ Beta(1-rho, rho)``.
    """

    def __init__(self, rho: float):
        if not 0 < rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        self.rho = rho

    def pdf(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = math.sin(math.pi * self.rho) / math.pi / ((1.0 + y) * y**self.rho)
        return np.where(y > 0, out, 0.0)

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        v = np.where(y > 0, y / (1.0 + np.maximum(y, 0.0)), 0.0)
        return special.betainc(1.0 - self.rho, self.rho, v)

    def quantile(self, p):
        v = special.betaincinv(1.0 - self.rho, self.rho, np.asarray(p, dtype=float))
        return v / (1.0 - v)

    def total_mass(self) -> float:
        """Mass by quadrature: ``y = t**(1/(1-rho))`` on ``(0, 1)`` and ``y = 1/s`` beyond."""
        r = self.rho
        c = math.sin(math.pi * r) / math.pi
        p = 1.0 / (1.0 - r)
        # y^{-rho} dy = p t^{p-1-rho p} dt = p dt  since p (1 - rho) = 1
        head, _ = integrate.quad(lambda t: p / (1.0 + t**p), 0.0, 1.0, epsabs=1e-14, epsrel=1e-12)
        # y = s^{-1/rho}: y^{-rho} dy / (1+y) = (1/rho) ds / (1 + s^{1/rho})
        tail, _ = integrate.quad(lambda s: (1.0 / r) / (1.0 + s ** (1.0 / r)), 0.0, 1.0,
                                 epsabs=1e-14, epsrel=1e-12)
        return c * (head + tail)


def dynkin_lamperti_density(rho: float) -> DynkinLamperti:
    return DynkinLamperti(rho)


@dataclass(frozen=True)
class GammaConstants:
    A: float
    A_hat: float
    B: float


def _jacobi(rho_left: float, power_right: float, sin_rho: float, g: float) -> float:
    """``sin(pi sin_rho)/pi * int_0^g (g-u)^power_right u^{-rho_left} / (1+u) du``."""
    if g <= 0:
        return 0.0
    val, _ = integrate.quad(lambda u: 1.0 / (1.0 + u), 0.0, g, weight="alg", wvar=(-rho_left, power_right),
                            epsabs=1e-13, epsrel=1e-12)
    return math.sin(math.pi * sin_rho) / math.pi * val


def gamma_constants(rho: float, rho_hat: float, gamma_exp: float) -> GammaConstants:
    if gamma_exp <= 1:
        raise ValueError("gamma_exp must exceed 1")
    if not (0 < rho < 1 and 0 < rho_hat < 1):
        raise ValueError("indices must lie in (0, 1)")
    g = gamma_exp - 1.0
    return GammaConstants(
        A=_jacobi(rho, rho_hat, rho, g),
        A_hat=_jacobi(rho_hat, rho_hat, rho_hat, g),
        B=_jacobi(rho, rho, rho, g),
    )


class Limit(enum.Enum):
    FINITE = "finite"
    ZERO = "zero"
    INFINITE = "infinite"


@dataclass(frozen=True)
class QBounds:
    q_minus: float
    q_plus: float
    flag: Limit
    slope: float


def q_bounds(model1: FragmentationModel, model2: FragmentationModel, q_grid=None,
             slope_tol: float = 0.02) -> QBounds:
    """Lower and upper limits of ``phi2~(q) / phi1~(q)`` as ``q -> inf``.

    Over the top two decades of ``q_grid`` the ratio's log-log slope is
    fitted; a clearly nonzero slope, or a ratio beyond ``1e6`` / below ``1e-6``,
    is declared ``INFINITE`` / ``ZERO``. Otherwise the bounds are the ratio's
    extremes over the top decade.
    """
    q = np.asarray(default_q_grid() if q_grid is None else q_grid, dtype=float)
    s1, s2 = Subordinator(model1), Subordinator(model2)
    top = q[q >= q.max() / 100.0]
    r = np.array([s2.laplace(x) / s1.laplace(x) for x in top])
    slope = float(np.polyfit(np.log(top), np.log(r), 1)[0])
    last = top >= q.max() / 10.0
    if r[-1] > INF_RATIO or slope > slope_tol:
        return QBounds(math.inf, math.inf, Limit.INFINITE, slope)
    if r[-1] < ZERO_RATIO or slope < -slope_tol:
        return QBounds(0.0, 0.0, Limit.ZERO, slope)
    return QBounds(float(r[last].min()), float(r[last].max()), Limit.FINITE, slope)


class Efficiency(enum.Enum):
    FIRST = "FirstInfEff"
    SECOND = "SecondInfEff"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class EfficiencyVerdict:
    verdict: Efficiency
    q_minus: float
    q_plus: float
    cost_ratio: float  # C2 / C1


def inf_efficiency(model1: FragmentationModel, model2: FragmentationModel, q_grid=None,
                   rtol: float = 1e-9) -> EfficiencyVerdict:
    for m in (model1, model2):
        regular_variation_index(m)
    qb = q_bounds(model1, model2, q_grid)
    ratio = model2.C / model1.C
    if qb.q_plus < ratio * (1 - rtol):
        v = Efficiency.FIRST
    elif qb.q_minus > ratio * (1 + rtol):
        v = Efficiency.SECOND
    else:
        v = Efficiency.UNDETERMINED
    return EfficiencyVerdict(v, qb.q_minus, qb.q_plus, ratio)


def tauberian_ratio(model: FragmentationModel, x: float, options: RenewalOptions | None = None) -> float:
    """``U([0, x]) * phi~(1/x) * Gamma(1 + rho)``; tends to 1 as ``x -> 0``."""
    rho = regular_variation_index(model)
    U = renewal_for_model(model, x, options)
    return float(U.cumulative(x)) * Subordinator(model).laplace(1.0 / x) * math.gamma(1.0 + rho)


def check_large_threshold_theorems(model1: FragmentationModel, model2: FragmentationModel, gamma_exp: float,
                                   eta_grid, eps_fraction: float = 0.5, big_M: float = 1.0,
                                   options: RenewalOptions | None = None) -> Report:
    """Both sides of the close-to-unit comparisons with ``eta0 = eta**gamma_exp``.

    Tags ``second:a..d`` compare against device 2 alone, ``first:a..c`` against
    device 1 alone, following the regime of ``Q = (C1/C2) lim phi2~/phi1~``.
    ``second:d:beats`` reports ``E(E2(eta0)) - E(E(eta, eta0))`` (positive when
    the two-step procedure is cheaper) and ``two_step_ratio`` the ratio
    ``E(E(eta, eta0)) / E(E2(eta0))`` for ``Q = 1``.
    """
    rho, rho_h = regular_variation_index(model1), regular_variation_index(model2)
    qb = q_bounds(model1, model2)
    C1, C2 = model1.C, model2.C
    scale = C1 / C2  # energy ratio Q = (C1/C2) * Q_phi
    Qm, Qp = qb.q_minus * scale, qb.q_plus * scale
    gc = gamma_constants(rho, rho_h, gamma_exp)
    eff = inf_efficiency(model1, model2)
    rep = Report(notes={"rho": rho, "rho_hat": rho_h, "Q_minus": Qm, "Q_plus": Qp, "A": gc.A,
                        "A_hat": gc.A_hat, "B": gc.B, "efficiency": eff.verdict.value})
    for eta in np.sort(np.asarray(eta_grid, dtype=float)):
        eta0 = eta**gamma_exp
        two = mean_energy_two_step(model1, model2, TwoStepConfig(eta, eta0), options).value
        e1, e1_0 = (mean_energy_single(model1, x, options).value for x in (eta, eta0))
        e2, e2_0 = (mean_energy_single(model2, x, options).value for x in (eta, eta0))
        if eff.verdict is Efficiency.SECOND:
            if math.isinf(Qm):
                rhs = e2_0 + big_M * e2
                rep.add(eta, two, rhs, two - rhs, "second:a")
            else:
                eps = eps_fraction * (Qm - 1.0)
                rhs = e2_0 + (Qm - 1.0 - eps) * e2
                rep.add(eta, two, rhs, two - rhs, "second:b")
            inv = 0.0 if math.isinf(Qm) else 1.0 / Qm
            eps = eps_fraction * (1.0 - inv)
            rhs = e1_0 + (inv - 1.0 + eps) * gc.B * e1
            rep.add(eta, two, rhs, rhs - two, "first:a")
        elif eff.verdict is Efficiency.FIRST:
            if Qp > 0:
                eps = eps_fraction * (1.0 - Qp)
                rhs = e2_0 + (Qp - 1.0 + eps) * e2
                rep.add(eta, two, rhs, rhs - two, "second:c")
                eps = eps_fraction * (1.0 / Qp - 1.0)
                rhs = e1_0 + (1.0 / Qp - 1.0 - eps) * gc.B * e1
                rep.add(eta, two, rhs, two - rhs, "first:b")
            else:
                d = gc.A - gc.A_hat - 1.0
                eps = eps_fraction
                lo, hi = e2_0 + (d - eps) * e2, e2_0 + (d + eps) * e2
                rep.add(eta, two, lo, two - lo, "second:d:lower")
                rep.add(eta, two, hi, hi - two, "second:d:upper")
                rep.add(eta, two, e2_0, e2_0 - two, "second:d:beats")
                rhs = e1_0 + big_M * e1
                rep.add(eta, two, rhs, two - rhs, "first:c")
        if qb.flag is Limit.FINITE and abs(Qm - 1.0) < 0.05 and abs(Qp - 1.0) < 0.05:
            rep.add(eta, two, e2_0, two / e2_0 - 1.0, "two_step_ratio")
    return rep
