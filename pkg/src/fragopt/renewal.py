"""Renewal measure ``U`` of the tilted subordinator and the energy potentials.

``U(dy)`` is the expected occupation time of ``dy``. For a compound Poisson
subordinator with rate ``lam`` and jump law ``F`` it equals
``(1/lam) * sum_n F^{*n}``; the potential is
``Psi(x) = C * int_{[0, x]} exp((alpha - beta) y) U(dy)``.
"""
from __future__ import annotations

import csv
import math
import threading
import weakref
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import ties
from .errors import NumericalError, ResolutionTooCoarse
from .levy import DensityLevy, DiscreteLevy, Subordinator, _merge_atoms, default_trunc_eps, sample_passages
from .model import FragmentationModel

MAX_SUPPORT = 5_000_000


@dataclass(frozen=True, eq=False)
class AtomicRenewal:
    """Purely atomic renewal measure; ``lattice_step`` is set for lattice walks."""

    points: np.ndarray
    masses: np.ndarray
    x_max: float
    lattice_step: float | None = None

    @property
    def atom_at_zero(self) -> float:
        return float(self.masses[0]) if self.points[0] == 0.0 else 0.0

    def _count(self, x):
        x = np.asarray(x, dtype=float)
        return np.searchsorted(self.points, x + ties.slack(x), side="right")

    def cumulative(self, x):
        """``U([0, x])`` (closed)."""
        c = np.concatenate([[0.0], np.cumsum(self.masses)])
        return c[self._count(x)]

    def integrate_exp(self, k: float, x):
        """``int_{[0, x]} exp(k y) U(dy)``; exact up to rounding."""
        c = np.concatenate([[0.0], np.cumsum(self.masses * np.exp(k * self.points))])
        x = np.asarray(x, dtype=float)
        return np.where(x < 0, 0.0, c[self._count(x)])

    def rows(self):
        cum = np.cumsum(self.masses)
        return zip(self.points, self.masses, cum)


@dataclass(frozen=True, eq=False)
class GridRenewal:
    """Atom at zero plus a piecewise-constant density on cells of width ``h``."""

    h: float
    density: np.ndarray
    atom_at_zero: float
    x_max: float
    n_samples: int = 0
    batches: tuple["GridRenewal", ...] = ()  # independent sub-estimates, for error bars

    @property
    def edges(self) -> np.ndarray:
        return self.h * np.arange(len(self.density) + 1)

    def cumulative(self, x):
        x = np.asarray(x, dtype=float)
        cell_mass = np.concatenate([[0.0], np.cumsum(self.density * self.h)])
        pos = np.clip(x / self.h, 0.0, len(self.density))
        i = np.minimum(pos.astype(np.int64), len(self.density) - 1)
        part = cell_mass[i] + (pos - i) * self.density[i] * self.h
        return np.where(x < 0, 0.0, self.atom_at_zero + part)

    def integrate_exp(self, k: float, x):
        """Exact integral of ``exp(k y)`` against the cellwise-constant density."""
        x = np.asarray(x, dtype=float)
        a = self.edges[:-1]
        if k == 0.0:
            per_cell = self.density * self.h
        else:
            per_cell = self.density * np.exp(k * a) * np.expm1(k * self.h) / k
        cum = np.concatenate([[0.0], np.cumsum(per_cell)])
        pos = np.clip(x / self.h, 0.0, len(self.density))
        i = np.minimum(pos.astype(np.int64), len(self.density) - 1)
        frac = (pos - i) * self.h
        if k == 0.0:
            part = self.density[i] * frac
        else:
            part = self.density[i] * np.exp(k * a[i]) * np.expm1(k * frac) / k
        return np.where(x < 0, 0.0, self.atom_at_zero + cum[i] + part)

    def cells_upto(self, level: float):
        """Representative points and masses of ``U`` restricted to ``[0, level]``."""
        n_full = int(level // self.h)
        n_full = min(n_full, len(self.density))
        y = list(self.h * (np.arange(n_full) + 0.5))
        m = list(self.density[:n_full] * self.h)
        rest = level - n_full * self.h
        if rest > 0 and n_full < len(self.density):
            y.append(n_full * self.h + rest / 2)
            m.append(self.density[n_full] * rest)
        if self.atom_at_zero > 0:
            y.insert(0, 0.0)
            m.insert(0, self.atom_at_zero)
        return np.array(y), np.array(m)

    def cell_bounds_upto(self, level: float):
        """Cells ``[a, b]`` of the density part clipped to ``[0, level]``."""
        e = self.edges
        a = e[:-1]
        keep = a < level
        a = a[keep]
        b = np.minimum(e[1:][keep], level)
        return a, b, self.density[keep]

    def rows(self):
        cum = self.cumulative(self.edges[1:])
        return zip(self.edges[:-1], self.density, cum)


RenewalMeasure = AtomicRenewal | GridRenewal


def to_csv(U: RenewalMeasure, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "mass_or_density", "cumulative"])
        for x, m, c in U.rows():
            w.writerow([repr(float(x)), repr(float(m)), repr(float(c))])


def _lattice_renewal(levy: DiscreteLevy, h: float, x_max: float) -> AtomicRenewal:
    lam = levy.total_mass
    p = levy.masses / lam
    steps = np.rint(levy.jumps / h).astype(np.int64)
    n = int(math.floor(x_max / h * (1 + 1e-12) + 1e-9))
    u = np.zeros(n + 1)
    u[0] = 1.0 / lam
    m_min = int(steps.min())
    j = 1
    while j <= n:
        stop = min(j + m_min, n + 1)
        block = np.zeros(stop - j)
        for pk, mk in zip(p, steps):
            lo = j - mk
            src = np.arange(lo, lo + (stop - j))
            ok = src >= 0
            block[ok] += pk * u[src[ok]]
        u[j:stop] = block
        j = stop
    return AtomicRenewal(h * np.arange(n + 1), u, x_max, lattice_step=h)


def _enumerated_renewal(levy: DiscreteLevy, x_max: float) -> AtomicRenewal:
    """Mass of each multi-index ``n`` is ``multinomial(n) * prod p_k**n_k / lam``."""
    x = levy.jumps
    lam = levy.total_mass
    logp = np.log(levy.masses / lam)
    reach = x_max * (1 + 1e-12)
    counts = np.zeros((1, 0), dtype=np.int64)
    sums = np.zeros(1)
    for xk in x:
        room = np.floor((reach - sums) / xk + 1e-9).astype(np.int64)
        room = np.maximum(room, 0)
        total = int(room.sum() + room.size)
        if total > MAX_SUPPORT:
            raise NumericalError(
                f"renewal support up to {x_max} has more than {MAX_SUPPORT} points; "
                "use the Monte Carlo backend")
        rep = np.repeat(np.arange(room.size), room + 1)
        nk = np.arange(total) - np.repeat(np.cumsum(room + 1) - (room + 1), room + 1)
        counts = np.hstack([counts[rep], nk[:, None]])
        sums = sums[rep] + nk * xk
    points = counts @ x
    n_tot = counts.sum(axis=1)
    logm = gammaln(n_tot + 1) - gammaln(counts + 1).sum(axis=1) + counts @ logp
    masses = np.exp(logm) / lam
    keep = points <= reach
    pts, ms = _merge_atoms(points[keep], masses[keep])
    return AtomicRenewal(pts, ms, x_max)


MC_BATCHES = 10


def _mc_renewal(sub: Subordinator, x_max: float, h: float, n_samples: int, seed: int,
                trunc_eps: float | None) -> GridRenewal:
    if trunc_eps is None:
        trunc_eps = default_trunc_eps(sub, x_max)
    n_batches = MC_BATCHES if n_samples >= 10 * MC_BATCHES else 1
    bounds = np.linspace(0, n_samples, n_batches + 1).astype(int)
    atom = 1.0 / sub.levy.rate(trunc_eps) if not sub.infinite_activity else 0.0
    n_cells = int(math.ceil(x_max / h * (1 - 1e-12)))

    def grid(hist, first_hold, n):
        hist = hist / n
        if not sub.infinite_activity:
            # the first holding time at 0 is binned into cell 0; replace its
            # empirical mean by the exact atom
            hist[0] = max(hist[0] - first_hold / n, 0.0)
        dens = hist[:n_cells] / h
        dens[-1] += hist[n_cells:].sum() / h
        return dens

    hists, holds, parts = [], [], []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        b = sample_passages(sub, x_max, 0.0, n=int(hi - lo), seed=seed, trunc_eps=trunc_eps,
                            first_replica=int(lo), hist_step=h)
        hists.append(b.occupation_hist)
        holds.append(b.first_hold_sum)
        parts.append(GridRenewal(h, grid(b.occupation_hist.copy(), b.first_hold_sum, int(hi - lo)),
                                 atom, x_max, int(hi - lo)))
    total = grid(np.sum(hists, axis=0), math.fsum(holds), n_samples)
    return GridRenewal(h, total, atom, x_max, n_samples, tuple(parts) if n_batches > 1 else ())


_CACHE: "weakref.WeakKeyDictionary[FragmentationModel, AtomicRenewal]" = weakref.WeakKeyDictionary()


def renewal_measure(sub: Subordinator, x_max: float, resolution: float | None = None, *,
                    method: str = "auto", n_samples: int = 20_000, seed: int = 0,
                    trunc_eps: float | None = None) -> RenewalMeasure:
    """Renewal measure on ``[0, x_max]``.

    ``method``: ``"lattice"`` (exact convolution on the span), ``"exact"``
    (exact atoms of a non-lattice discrete measure), ``"mc"`` (binned
    occupation time from simulated paths) or ``"auto"``.
    """
    if x_max <= 0:
        raise ValueError("x_max must be positive")
    levy = sub.levy
    if method == "auto":
        if isinstance(levy, DiscreteLevy):
            method = "lattice" if sub.lattice_step is not None else "exact"
        else:
            method = "mc"
    if method == "lattice":
        h = sub.lattice_step if resolution is None else resolution
        if h is None:
            raise ValueError("lattice backend needs a lattice Levy measure or an explicit span")
        return _lattice_renewal(levy, h, x_max)
    if method == "exact":
        return _enumerated_renewal(levy, x_max)
    if method == "mc":
        h = resolution if resolution is not None else x_max / 200.0
        if isinstance(levy, DiscreteLevy) and h > levy.jumps.min() / 4:
            raise ResolutionTooCoarse(f"cell width {h} exceeds a quarter of the smallest jump")
        return _mc_renewal(sub, x_max, h, n_samples, seed, trunc_eps)
    raise ValueError(f"unknown renewal backend {method!r}")


@dataclass(frozen=True)
class RenewalOptions:
    """Monte Carlo settings for density Levy measures."""

    n_samples: int = 20_000
    seed: int = 0
    cells: int = 400
    trunc_eps: float | None = None
    range_factor: float = 1.5


_MC_CACHE: "weakref.WeakKeyDictionary[FragmentationModel, dict]" = weakref.WeakKeyDictionary()
_LOCK = threading.RLock()  # the caches are shared by worker threads


def renewal_for_model(model: FragmentationModel, x_max: float,
                      options: RenewalOptions | None = None) -> RenewalMeasure:
    """Renewal measure covering ``[0, x_max]``, reused across calls.

    Discrete Levy measures get the exact measure; density measures get the
    Monte Carlo estimate on ``[0, range_factor * x_max]``.
    """
    x_max = max(float(x_max), 1e-12)
    sub = Subordinator(model)
    if not isinstance(sub.levy, DensityLevy):
        with _LOCK:
            U = _CACHE.get(model)
            if U is None or U.x_max < x_max:
                U = renewal_measure(sub, x_max)
                _CACHE[model] = U
        return U
    opts = options or RenewalOptions()
    span = opts.range_factor * x_max
    # exact key only: a grid built for a wider span is too coarse near small levels,
    # and reusing it would make results depend on call order
    with _LOCK:
        U = _MC_CACHE.setdefault(model, {}).get((span, opts))
    if U is None:
        U = renewal_measure(sub, span, span / opts.cells, method="mc", n_samples=opts.n_samples,
                            seed=opts.seed, trunc_eps=opts.trunc_eps)
        with _LOCK:
            U = _MC_CACHE[model].setdefault((span, opts), U)
    return U


class Potential:
    """``x -> Psi(x)`` for one model, backed by a renewal measure."""

    def __init__(self, model: FragmentationModel, U: RenewalMeasure):
        self.model = model
        self.U = U
        self.k = model.alpha - model.beta
        self.C = model.C

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x > self.U.x_max * (1 + 1e-12) + 1e-12):
            raise NumericalError(f"Psi requested beyond the renewal range {self.U.x_max}")
        return self.C * self.U.integrate_exp(self.k, x)


def psi(model: FragmentationModel, x, U: RenewalMeasure | None = None,
        options: RenewalOptions | None = None):
    """``Psi(x) = C * int_{[0, x]} exp((alpha - beta) y) U(dy)``."""
    if U is None:
        U = renewal_for_model(model, float(np.max(x)), options)
    return Potential(model, U)(x)
