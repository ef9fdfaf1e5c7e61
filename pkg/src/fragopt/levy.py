"""The tagged-fragment subordinator under the tilted law.

Its Laplace exponent is ``kappa(q + alpha)`` and its Levy measure is the
push-forward of ``sum_j s_j**alpha nu(ds)`` by ``s_j -> -log s_j``.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, reduce

import numpy as np
from scipy import integrate, optimize

from . import ties
from .errors import ExplosionGuard, InconsistentSupport, TruncationRequired
from .model import (
    BinaryDensity,
    FiniteDiscrete,
    FragmentationModel,
    PowerLaw,
    _finite_children,
    _require_valid,
    kappa,
)
from .rng import Stream, uniform_pair

MERGE_RTOL = 1e-12
LATTICE_MAX_DENOM = 10_000
LATTICE_RTOL = 1e-9
MAX_STEPS = 10_000_000


def phi(model: FragmentationModel, q: float) -> float:
    """Laplace exponent of the tagged fragment's log-size under the original law."""
    return kappa(model, q + 1.0)


def tilted_phi(model: FragmentationModel, q: float) -> float:
    if q < 0:
        raise ValueError("the tilted exponent is evaluated at q >= 0")
    if q == 0:
        return 0.0
    return kappa(model, q + model.alpha)


# --- Levy measures --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteLevy:
    """Finitely many jump sizes with positive rates."""

    jumps: np.ndarray
    masses: np.ndarray

    activity = "finite"

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses)

    @cached_property
    def _cum_prob(self) -> np.ndarray:
        c = np.cumsum(self.masses) / self.total_mass
        c[-1] = 1.0
        return c

    def mean(self) -> float:
        return math.fsum(self.jumps * self.masses)

    def tail(self, u):
        """``Pi((u, inf))``."""
        u = np.asarray(u, dtype=float)
        cum_from_top = np.concatenate([np.cumsum(self.masses[::-1])[::-1], [0.0]])
        return cum_from_top[np.searchsorted(self.jumps, u, side="right")]

    def laplace(self, q: float) -> float:
        return math.fsum(self.masses * -np.expm1(-q * self.jumps))

    def rate(self, eps: float = 0.0) -> float:
        return self.total_mass

    def neglected_drift(self, eps: float) -> float:
        return 0.0

    def sample(self, seed, replica, event, eps=0.0, u=None):
        if u is None:
            u, _ = uniform_pair(seed, replica, event, stream=1)
        return self.jumps[np.searchsorted(self._cum_prob, u, side="left")]


class DensityLevy:
    """Levy measure of a binary split density (always conservative, alpha = 1).

    A split ``(1-x, x)`` gives a small jump ``-log(1-x)`` at rate ``(1-x) f(x)``
    and a large jump ``-log x`` at rate ``x f(x)``.
    """

    _TABLE_N = 200_001

    def __init__(self, nu: BinaryDensity):
        self.nu = nu
        self.activity = "infinite" if nu.infinite_activity else "finite"

    # tabulated cumulative integrals for densities without closed forms
    @cached_property
    def _table(self):
        x = np.linspace(0.0, 0.5, self._TABLE_N)
        f = self.nu.f(x)
        small = integrate.cumulative_trapezoid((1.0 - x) * f, x, initial=0.0)
        big = integrate.cumulative_trapezoid(x * f, x, initial=0.0)
        return x, small, big

    def _big_upto(self, a):
        """``int_0^a x f(x) dx``."""
        a = np.asarray(a, dtype=float)
        nu = self.nu
        if isinstance(nu, PowerLaw):
            return nu.c * a ** (1.0 - nu.rho) / (1.0 - nu.rho)
        x, _, big = self._table
        return np.interp(a, x, big)

    def _small_above(self, a):
        """``int_a^{1/2} (1-x) f(x) dx``."""
        a = np.asarray(a, dtype=float)
        nu = self.nu
        if isinstance(nu, PowerLaw):
            r = nu.rho
            with np.errstate(divide="ignore"):
                up = (a ** (-r) - 2.0**r) / r
            return nu.c * (up - (2.0 ** (r - 1.0) - a ** (1.0 - r)) / (1.0 - r))
        x, small, _ = self._table
        return small[-1] - np.interp(a, x, small)

    @property
    def total_mass(self) -> float:
        if self.activity == "infinite":
            return math.inf
        return float(self._small_above(0.0) + self._big_upto(0.5))

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        lo = (z > 0) & (z <= math.log(2.0))
        x = -np.expm1(-z[lo])
        out[lo] = (1.0 - x) * self.nu.f(x) * np.exp(-z[lo])
        hi = z >= math.log(2.0)
        x = np.exp(-z[hi])
        out[hi] += x * self.nu.f(x) * x
        return out

    def tail(self, u):
        u = np.asarray(u, dtype=float)
        big = self._big_upto(np.minimum(np.exp(-np.maximum(u, 0.0)), 0.5))
        small = np.where(u < math.log(2.0), self._small_above(np.clip(-np.expm1(-u), 0.0, 0.5)), 0.0)
        return big + small

    def rate(self, eps: float = 0.0) -> float:
        if eps <= 0:
            if self.activity == "infinite":
                raise TruncationRequired("infinite-activity Levy measure needs trunc_eps > 0")
            return self.total_mass
        return float(self.tail(eps))

    def mean(self) -> float:
        from .model import _binary_quad

        return _binary_quad(self.nu, lambda x: (1.0 - x) * -np.log1p(-x) + x * -np.log(x))

    def laplace(self, q: float) -> float:
        """``int (1 - e^{-qz}) Pi(dz)`` by quadrature over the split variable."""
        from .model import _binary_quad

        return _binary_quad(
            self.nu,
            lambda x: (1.0 - x) * -np.expm1(q * np.log1p(-x)) + x * -np.expm1(q * np.log(x)),
            scales=(1.0 / max(q, 1.0),),
        )

    def neglected_drift(self, eps: float) -> float:
        """``int_0^eps z Pi(dz)``: mean speed of the jumps dropped by truncation."""
        if eps <= 0:
            return 0.0
        if eps >= math.log(2.0):
            raise ValueError("truncation level must stay below log 2")
        a = -math.expm1(-eps)
        nu = self.nu
        if isinstance(nu, PowerLaw):
            # z (1-x) f(x) = c x^{-rho} * (1-x) (-log(1-x)) / x, weighted by x^{-rho}
            val, _ = integrate.quad(lambda x: nu.c * (1.0 - x) * _log1m_over_x(x), 0.0, a,
                                    weight="alg", wvar=(-nu.rho, 0.0), epsabs=1e-15, epsrel=1e-10)
        else:
            val, _ = integrate.quad(lambda x: -math.log1p(-x) * (1.0 - x) * float(nu.f(np.float64(x))),
                                    0.0, a, epsabs=1e-15, epsrel=1e-10, limit=200)
        return val

    def _partial_mean(self, u: float) -> float:
        """``int_{(0, u]} z Pi(dz)``."""
        if u <= 0:
            return 0.0
        nu = self.nu
        total = self.neglected_drift(min(u, math.log(2.0) * (1 - 1e-15)))
        if u > math.log(2.0):
            # large jumps z = -log x, rate density x f(x) * x in z
            def g(z):
                x = math.exp(-z)
                return z * x * float(nu.xf(np.float64(x)))

            # exp(-z) underflows past ~745; the integrand is zero there
            top = min(u, 700.0)
            total += integrate.quad(g, math.log(2.0), top, epsabs=1e-15, epsrel=1e-10, limit=200)[0]
        return total

    def integrated_tail(self, u):
        """``I(u) = int_0^u Pi((v, inf)) dv = int min(z, u) Pi(dz)``."""
        u = np.asarray(u, dtype=float)
        flat = np.maximum(u.ravel(), 0.0)
        vals, inv = np.unique(flat, return_inverse=True)
        with np.errstate(invalid="ignore"):
            edge = np.where(vals > 0, vals * self.tail(vals), 0.0)
        out = self._partial_means(vals) + edge
        return out[inv].reshape(u.shape)

    def _partial_means(self, vals: np.ndarray) -> np.ndarray:
        """``int_{(0, v]} z Pi(dz)`` for sorted unique ``vals``.

        Accumulated over consecutive values: Gauss-Legendre on short intervals,
        adaptive quadrature from 0 and across wide gaps (the density of
        ``z Pi(dz)`` may be singular at 0 and has a kink at ``log 2``).
        """
        out = np.zeros(vals.size)
        pos = vals > 0
        v = vals[pos]
        if v.size == 0:
            return out
        ln2 = math.log(2.0)
        acc = np.empty(v.size)
        acc[0] = _partial_mean_cached(self, float(v[0]))
        lo, hi = v[:-1], v[1:]
        wide = (hi > 2.0 * lo) | ((lo < ln2) & (hi > ln2))
        inc = np.zeros(lo.size)
        short = np.flatnonzero(~wide)
        if short.size:
            a, b = lo[short], hi[short]
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            z = mid[:, None] + half[:, None] * _GL_X[None, :]
            g = z * self.pdf(z.ravel()).reshape(z.shape)
            inc[short] = half * (g @ _GL_W)
        for k in np.flatnonzero(wide):
            inc[k] = _partial_mean_cached(self, float(hi[k])) - _partial_mean_cached(self, float(lo[k]))
        acc[1:] = acc[0] + np.cumsum(inc)
        out[pos] = acc
        return out

    def sample(self, seed, replica, event, eps=0.0, u=None):
        """Jump sizes ``>= eps`` drawn from the normalized truncated measure.

        ``u`` selects between the small-jump and large-jump branches; the
        jump size itself uses stream 1 (and 2, 3, ... for rejected proposals).
        """
        if eps <= 0 and self.activity == "infinite":
            raise TruncationRequired("infinite-activity Levy measure needs trunc_eps > 0")
        replica = np.atleast_1d(np.asarray(replica, dtype=np.uint64))
        event = np.broadcast_to(np.asarray(event, dtype=np.uint64), replica.shape)
        a_eps = -math.expm1(-eps) if eps > 0 else 0.0
        small_rate = float(self._small_above(a_eps))
        big_rate = float(self._big_upto(0.5))
        if u is None:
            u, _ = uniform_pair(seed, replica, event, stream=0)
        u_x, u_acc = uniform_pair(seed, replica, event, stream=1)
        out = np.empty(replica.shape)
        big = u * (small_rate + big_rate) < big_rate
        out[big] = -np.log(self._sample_big(u_x[big]))
        small = ~big
        x = self._sample_small(seed, replica[small], event[small], a_eps, u_x[small], u_acc[small])
        out[small] = -np.log1p(-x)
        return out

    def _sample_big(self, u):
        nu = self.nu
        if isinstance(nu, PowerLaw):
            return 0.5 * u ** (1.0 / (1.0 - nu.rho))
        x, _, big = self._table
        return np.interp(u * big[-1], big, x)

    def _sample_small(self, seed, replica, event, a_eps, u, u_acc):
        nu = self.nu
        if not isinstance(nu, PowerLaw):
            x, small, _ = self._table
            lo = np.interp(a_eps, x, small)
            return np.interp(lo + u * (small[-1] - lo), small, x)
        # Pareto proposal on [a_eps, 1/2], accepted with probability 1 - x
        r = nu.rho
        top, bot = a_eps ** (-r), 2.0**r
        out = np.empty(u.shape)
        todo = np.arange(u.size)
        prop_u, acc_u = u, u_acc
        attempt = 0
        while todo.size:
            x = (top - prop_u * (top - bot)) ** (-1.0 / r)
            ok = acc_u <= 1.0 - x
            out[todo[ok]] = x[ok]
            todo = todo[~ok]
            attempt += 1
            prop_u, acc_u = uniform_pair(seed, replica[todo], event[todo], stream=1 + attempt)
        return out


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_PM_CACHE: "weakref.WeakKeyDictionary[BinaryDensity, dict]" = weakref.WeakKeyDictionary()


def _partial_mean_cached(levy: "DensityLevy", u: float) -> float:
    # cell edges repeat across renewal batches and thresholds; each value is one quadrature
    per = _PM_CACHE.setdefault(levy.nu, {})
    if u not in per:
        per[u] = levy._partial_mean(u)
    return per[u]


def _log1m_over_x(x: float) -> float:
    return 1.0 if x == 0.0 else -math.log1p(-x) / x


def tilted_levy_measure(model: FragmentationModel) -> DiscreteLevy | DensityLevy:
    nu = model.nu
    _require_valid(nu)
    if isinstance(nu, FiniteDiscrete):
        s, w, _ = _finite_children(nu)
        z = -np.log(s)
        m = w * s**model.alpha
        order = np.argsort(z, kind="stable")
        z, m = z[order], m[order]
        jumps, masses = [z[0]], [m[0]]
        for zi, mi in zip(z[1:], m[1:]):
            if abs(zi - jumps[-1]) <= MERGE_RTOL * max(1.0, zi):
                masses[-1] += mi
            else:
                jumps.append(zi)
                masses.append(mi)
        return DiscreteLevy(np.array(jumps), np.array(masses))
    return DensityLevy(nu)


def lattice_step(model_or_levy) -> float | None:
    """Span ``h`` if every jump is an integer multiple of ``h``, else ``None``."""
    levy = model_or_levy
    if isinstance(model_or_levy, FragmentationModel):
        levy = tilted_levy_measure(model_or_levy)
    if not isinstance(levy, DiscreteLevy):
        return None
    x = levy.jumps
    x0 = x[0]
    fracs = []
    for xi in x:
        r = xi / x0
        fr = Fraction(r).limit_denominator(LATTICE_MAX_DENOM)
        if abs(r - fr.numerator / fr.denominator) > LATTICE_RTOL * r:
            return None
        fracs.append(fr)
    lcm = reduce(lambda a, b: a * b // math.gcd(a, b), (f.denominator for f in fracs), 1)
    ints = [f.numerator * (lcm // f.denominator) for f in fracs]
    g = reduce(math.gcd, ints)
    return float(x0 / lcm * g)


# --- the subordinator -----------------------------------------------------


class Subordinator:
    """Pure-jump subordinator without drift or killing; immutable."""

    def __init__(self, model: FragmentationModel):
        self.model = model
        self.alpha = model.alpha
        self.levy = tilted_levy_measure(model)
        self.mean_jump = model.mean_jump

    @property
    def infinite_activity(self) -> bool:
        return self.levy.activity == "infinite"

    def laplace(self, q: float) -> float:
        return tilted_phi(self.model, q)

    def laplace_from_levy(self, q: float) -> float:
        return self.levy.laplace(q)

    @cached_property
    def lattice_step(self) -> float | None:
        return lattice_step(self.levy)


def subordinator(model: FragmentationModel) -> Subordinator:
    return Subordinator(model)


def default_trunc_eps(sub: Subordinator, level: float, drift_budget: float = 1e-3) -> float:
    """Largest truncation keeping the neglected mean creep below ``drift_budget * level``.

    The expected time spent below ``level`` is bounded by ``e / phi~(1/level)``.
    """
    if not sub.infinite_activity:
        return 0.0
    level = max(level, 1e-6)
    time_bound = math.e / sub.laplace(1.0 / level)
    target = drift_budget * level / time_bound
    hi = min(level, math.log(2.0)) / 2.0
    if sub.levy.neglected_drift(hi) <= target:
        return hi

    def excess(log_eps):
        return math.log(sub.levy.neglected_drift(math.exp(log_eps))) - math.log(target)

    lo = math.log(hi) - 1.0
    while excess(lo) > 0:
        lo -= 5.0
        if lo < -700:
            raise ValueError("no truncation level meets the drift budget")
    return math.exp(optimize.brentq(excess, lo, math.log(hi), xtol=1e-6))


# --- first passage --------------------------------------------------------


@dataclass(frozen=True)
class PassageSample:
    level: float
    xi_at_passage: float
    weighted_occupation: float


@dataclass(frozen=True)
class PassageBatch:
    level: float
    xi_at_passage: np.ndarray
    weighted_occupation: np.ndarray
    n_jumps: np.ndarray
    trunc_eps: float
    neglected_drift: float
    occupation_hist: np.ndarray | None = None
    first_hold_sum: float = 0.0

    @property
    def overshoot(self) -> np.ndarray:
        return self.xi_at_passage - self.level


def sample_passages(sub: Subordinator, level: float, weight_exponent: float = 0.0, *,
                    n: int, seed: int, trunc_eps: float | None = None,
                    first_replica: int = 0, hist_step: float | None = None) -> PassageBatch:
    """Run replicas ``first_replica .. first_replica+n-1`` to first passage above ``level``.

    Holding times are exponential with the (truncated) total rate; the
    weighted occupation accumulates ``exp(w * xi) * holding_time`` over every
    state visited before passage. With ``hist_step`` the summed holding time
    is also binned by state on ``[0, level]`` (cells of width ``hist_step``).
    """
    if level < 0:
        raise ValueError("level must be nonnegative")
    if trunc_eps is None:
        trunc_eps = default_trunc_eps(sub, level)
    if sub.infinite_activity and trunc_eps <= 0:
        raise TruncationRequired("infinite-activity subordinator needs trunc_eps > 0")
    levy = sub.levy
    rate = levy.rate(trunc_eps)
    replica = np.arange(first_replica, first_replica + n, dtype=np.uint64)
    xi = np.zeros(n)
    occ = np.zeros(n)
    jumps = np.zeros(n, dtype=np.int64)
    hist = None
    if hist_step is not None:
        n_cells = int(math.ceil(level / hist_step * (1 - 1e-12)))
        hist = np.zeros(n_cells + 1)
    todo = np.arange(n)
    step = 0
    first_hold = 0.0
    while todo.size:
        if step > MAX_STEPS:
            raise ExplosionGuard(f"more than {MAX_STEPS} jumps before passage")
        u_hold, u_jump = uniform_pair(seed, replica[todo], step, stream=0)
        hold = -np.log(u_hold) / rate
        if step == 0:
            first_hold = math.fsum(hold)
        here = xi[todo]
        occ[todo] += np.exp(weight_exponent * here) * hold
        if hist is not None:
            cell = np.minimum((here / hist_step).astype(np.int64), len(hist) - 1)
            hist += np.bincount(cell, weights=hold, minlength=len(hist))
        xi[todo] = here + levy.sample(seed, replica[todo], step, eps=trunc_eps, u=u_jump)
        jumps[todo] += 1
        todo = todo[ties.not_passed(xi[todo], level)]
        step += 1
    return PassageBatch(level, xi, occ, jumps, trunc_eps, levy.neglected_drift(trunc_eps), hist,
                       first_hold)


def sample_passage(sub: Subordinator, level: float, weight_exponent: float, rng: Stream,
                   trunc_eps: float | None = None) -> PassageSample:
    b = sample_passages(sub, level, weight_exponent, n=1, seed=rng.seed, trunc_eps=trunc_eps,
                        first_replica=rng.replica)
    return PassageSample(level, float(b.xi_at_passage[0]), float(b.weighted_occupation[0]))


# --- exact overshoot law --------------------------------------------------


@dataclass(frozen=True)
class AtomicLaw:
    """Finite measure with atoms ``points`` (sorted) of size ``masses``."""

    points: np.ndarray
    masses: np.ndarray

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses)

    def cdf(self, z):
        c = np.cumsum(self.masses)
        idx = np.searchsorted(self.points, np.asarray(z, dtype=float), side="right")
        return np.where(idx > 0, c[np.maximum(idx - 1, 0)], 0.0)

    def expect(self, g) -> float:
        return math.fsum(self.masses * g(self.points))

    def shifted(self, by: float) -> "AtomicLaw":
        return AtomicLaw(self.points + by, self.masses)


@dataclass(frozen=True)
class GridLaw:
    """Measure on ``[z0, z0 + h*len(masses)]`` with mass per cell; ``beyond`` sits above."""

    z0: float
    h: float
    masses: np.ndarray
    beyond: float

    @property
    def centers(self) -> np.ndarray:
        return self.z0 + self.h * (np.arange(len(self.masses)) + 0.5)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses) + self.beyond

    def cdf(self, z):
        edges = self.z0 + self.h * np.arange(len(self.masses) + 1)
        c = np.concatenate([[0.0], np.cumsum(self.masses)])
        return np.interp(z, edges, c, left=0.0, right=c[-1])

    def expect(self, g) -> float:
        return math.fsum(self.masses * g(self.centers))


def _merge_atoms(points, masses):
    order = np.argsort(points, kind="stable")
    points, masses = points[order], masses[order]
    if points.size == 0:
        return points, masses
    gap = np.diff(points) > MERGE_RTOL * np.maximum(1.0, np.abs(points[1:]))
    starts = np.concatenate([[0], np.flatnonzero(gap) + 1])
    return points[starts], np.add.reduceat(masses, starts)


def overshoot_law(sub: Subordinator, U, level: float, z_max: float | None = None,
                  n_cells: int | None = None):
    """Law of the position at first passage strictly above ``level``.

    ``P(xi_T in dz) = int_{[0, level]} 1{z > level} Pi(dz - y) U(dy)``.
    For a density Levy measure the law is binned on the renewal grid up to
    ``z_max`` (default ``2 * level``) in ``n_cells`` equal cells (default: about
    the renewal grid step), with the remaining mass in ``beyond``.
    """
    from .renewal import AtomicRenewal, GridRenewal

    if U.x_max < level * (1 - 1e-12):
        raise InconsistentSupport(f"renewal measure known up to {U.x_max}, level is {level}")
    levy = sub.levy
    if isinstance(levy, DiscreteLevy) and isinstance(U, AtomicRenewal):
        keep = ties.not_passed(U.points, level)
        y, u = U.points[keep], U.masses[keep]
        z = (y[:, None] + levy.jumps[None, :]).ravel()
        m = (u[:, None] * levy.masses[None, :]).ravel()
        passed = ~ties.not_passed(z, level)
        return AtomicLaw(*_merge_atoms(z[passed], m[passed]))
    if not isinstance(U, GridRenewal):
        raise TypeError("density Levy measures need a gridded renewal measure")
    z_max = 2.0 * level if z_max is None else z_max
    if n_cells is None:
        n_cells = max(1, int(math.ceil((z_max - level) / U.h)))
    h = (z_max - level) / n_cells
    edges = level + h * np.arange(n_cells + 1)
    # with U(dy) = d dy on [a, b], the mass landing in (e, e'] is
    # d * [I(e - a) - I(e - b) - I(e' - a) + I(e' - b)],  I = integrated tail
    a_cells, b_cells, dens = U.cell_bounds_upto(level)
    I = levy.integrated_tail
    ia = I(edges[None, :] - a_cells[:, None])
    ib = I(edges[None, :] - b_cells[:, None])
    span = dens[:, None] * (ia - ib)
    cell = (span[:, :-1] - span[:, 1:]).sum(axis=0)
    t_last = dens * (I(edges[-1] - a_cells) - I(edges[-1] - b_cells))
    beyond = math.fsum(t_last)
    if U.atom_at_zero > 0:
        t0 = levy.tail(edges)
        cell = cell + U.atom_at_zero * (t0[:-1] - t0[1:])
        beyond += U.atom_at_zero * float(t0[-1])
    return GridLaw(level, h, cell, beyond)
