"""Dislocation measures, cost functions and the scalar characteristics of a
homogeneous fragmentation: kappa, the Malthusian exponent, the cost
constant and the mean log-size jump of the tagged fragment.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from .errors import (
    CostSignWarning,
    DivergentIntegral,
    InvariantViolation,
    NoRoot,
    QuadratureFailure,
    ValidationError,
)

TOL_MASS = 1e-12
TOL_ROOT = 1e-10
QUAD_RTOL = 1e-10
QUAD_ATOL = 1e-13
ALPHA_QMAX = 64.0


@dataclass(frozen=True)
class MassPartition:
    """Finite nonincreasing sequence of child mass fractions (zeros dropped)."""

    masses: tuple[float, ...]

    def __post_init__(self):
        m = [float(x) for x in self.masses]
        if any(not math.isfinite(x) or x < 0 for x in m):
            raise InvariantViolation(f"masses must be finite and nonnegative: {m}")
        if sum(m) > 1.0 + TOL_MASS:
            raise InvariantViolation(f"mass partition sums to {sum(m)} > 1")
        m = sorted((x for x in m if x > 0), reverse=True)
        object.__setattr__(self, "masses", tuple(m))

    @property
    def total(self) -> float:
        return math.fsum(self.masses)

    def is_identity(self) -> bool:
        return len(self.masses) == 1 and abs(self.masses[0] - 1.0) <= TOL_MASS

    def __len__(self):
        return len(self.masses)


# --- dislocation measures -------------------------------------------------


@dataclass(frozen=True)
class FiniteDiscrete:
    """Finitely many atoms ``(partition, rate)``."""

    atoms: tuple[tuple[MassPartition, float], ...]

    def __post_init__(self):
        atoms = []
        for part, w in self.atoms:
            if not isinstance(part, MassPartition):
                part = MassPartition(tuple(part))
            w = float(w)
            if not (w > 0 and math.isfinite(w)):
                raise InvariantViolation(f"atom weight must be positive and finite, got {w}")
            atoms.append((part, w))
        if not atoms:
            raise InvariantViolation("a dislocation measure needs at least one atom")
        object.__setattr__(self, "atoms", tuple(atoms))

    @classmethod
    def single(cls, masses: Sequence[float], weight: float = 1.0) -> "FiniteDiscrete":
        return cls(((MassPartition(tuple(masses)), weight),))

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms])

    @property
    def total_mass(self) -> float:
        return math.fsum(w for _, w in self.atoms)

    @property
    def p_lower(self) -> float:
        return -math.inf

    @property
    def infinite_activity(self) -> bool:
        return False

    @property
    def conservative(self) -> bool:
        return all(abs(p.total - 1.0) <= TOL_MASS for p, _ in self.atoms)

    def violations(self) -> list[str]:
        out = []
        for i, (p, _) in enumerate(self.atoms):
            if p.is_identity():
                out.append(f"atom {i} is the identity partition (1,0,...)")
        return out


class BinaryDensity:
    """Binary splits ``(1-x, x)``, ``x in (0, 1/2]``, with rate density ``f(x)``.

    ``singular_exponent`` is ``r`` such that ``f(x) ~ x**(-1-r)`` at 0, or
    ``None`` for densities of finite total mass.
    """

    family = "binary_density"
    singular_exponent: float | None = None

    def f(self, x):
        raise NotImplementedError

    def xf(self, x):
        """``x * f(x)``, finite down to the smallest positive doubles."""
        return x * self.f(x)

    @property
    def p_lower(self) -> float:
        return self.singular_exponent if self.singular_exponent is not None else -1.0

    @property
    def infinite_activity(self) -> bool:
        return self.singular_exponent is not None and self.singular_exponent >= 0

    @property
    def conservative(self) -> bool:
        return True

    @cached_property
    def total_mass(self) -> float:
        if self.infinite_activity:
            return math.inf
        return _binary_quad(self, lambda x: np.ones_like(x))

    def violations(self) -> list[str]:
        out = []
        try:
            _binary_quad(self, lambda x: x)
        except (DivergentIntegral, QuadratureFailure) as exc:
            out.append(f"integral of (1 - s1) diverges: {exc}")
        return out


@dataclass(frozen=True, eq=False)
class PowerLaw(BinaryDensity):
    """``f(x) = c * x**(-1-rho)`` on ``(0, 1/2]``."""

    c: float
    rho: float
    family = "power_law"

    def __post_init__(self):
        if not self.c > 0:
            raise InvariantViolation("power-law prefactor c must be positive")
        if not 0 < self.rho < 1:
            raise InvariantViolation("power-law exponent rho must lie in (0, 1)")

    @property
    def singular_exponent(self) -> float:
        return self.rho

    def f(self, x):
        return self.c * np.power(x, -1.0 - self.rho)

    def xf(self, x):
        return self.c * np.power(x, -self.rho)


@dataclass(frozen=True, eq=False)
class Bounded(BinaryDensity):
    """Finite-mass split density given by a vectorized callable."""

    density: Callable[[np.ndarray], np.ndarray]
    label: str = "bounded"
    family = "bounded"

    @classmethod
    def from_table(cls, x: Sequence[float], f: Sequence[float]) -> "Bounded":
        xs = np.asarray(x, dtype=float)
        fs = np.asarray(f, dtype=float)
        if xs.ndim != 1 or xs.shape != fs.shape or len(xs) < 2:
            raise InvariantViolation("tabulated density needs matching 1-D x and f of length >= 2")
        if np.any(np.diff(xs) <= 0) or xs[0] < 0 or xs[-1] > 0.5 + 1e-15:
            raise InvariantViolation("tabulated x must increase within [0, 1/2]")
        if np.any(fs < 0):
            raise InvariantViolation("tabulated density must be nonnegative")
        return cls(lambda t: np.interp(t, xs, fs, left=fs[0], right=0.0), label="table")

    def f(self, x):
        return np.asarray(self.density(np.asarray(x, dtype=float)), dtype=float)


DislocationMeasure = FiniteDiscrete | BinaryDensity


def _binary_quad(nu: BinaryDensity, g, scales: Sequence[float] = ()) -> float:
    """``int_0^{1/2} g(x) f(x) dx`` in the variable ``s = log x``.

    ``scales`` are x-values near which ``g`` changes character; they become
    quadrature breakpoints.
    """
    def h(s):
        x = np.float64(math.exp(s))
        if x == 0.0:
            return 0.0
        return float(g(x) * nu.xf(x))

    top = math.log(0.5)
    cuts = sorted({math.log(t) for t in scales if 0 < t < 0.5} | {top - 8.0})
    cuts = [c for c in cuts if c < top]
    s_lo = min(cuts[0] - 4.0, top - 12.0)
    edges = [s_lo] + [c for c in cuts if c > s_lo] + [top]
    total, err = 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            v, e = integrate.quad(h, -np.inf, s_lo, epsabs=QUAD_ATOL, epsrel=QUAD_RTOL, limit=400)
            total += v
            err += e
            for a, b in zip(edges[:-1], edges[1:]):
                v, e = integrate.quad(h, a, b, epsabs=QUAD_ATOL, epsrel=QUAD_RTOL, limit=400)
                total += v
                err += e
        except integrate.IntegrationWarning as exc:
            raise QuadratureFailure(str(exc).splitlines()[0]) from None
    if not math.isfinite(total):
        raise DivergentIntegral("split-density integral is not finite")
    if err > max(100 * QUAD_RTOL * abs(total), 10 * QUAD_ATOL):
        raise QuadratureFailure(f"estimated error {err:.3g} too large for value {total:.6g}")
    return total


# --- cost functions -------------------------------------------------------


@dataclass(frozen=True)
class Potential:
    """``phi(s) = sum_n s_n**beta_cost - 1``."""

    beta_cost: float

    def __post_init__(self):
        if not self.beta_cost >= 0:
            raise InvariantViolation("beta_cost must be nonnegative")

    def __call__(self, part: MassPartition) -> float:
        return math.fsum(s**self.beta_cost for s in part.masses) - 1.0


@dataclass(frozen=True)
class PerAtomTable:
    values: tuple[float, ...]

    def __call__(self, part: MassPartition) -> float:
        raise TypeError("per-atom costs are only defined on the atoms of a finite measure")


@dataclass(frozen=True, eq=False)
class Custom:
    evaluator: Callable[[MassPartition], float]

    def __call__(self, part: MassPartition) -> float:
        return float(self.evaluator(part))


CostFunction = Potential | PerAtomTable | Custom


# --- the model ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FragmentationModel:
    nu: DislocationMeasure
    phi: CostFunction
    beta: float
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.beta > 0:
            raise InvariantViolation("beta must be positive")
        if isinstance(self.phi, PerAtomTable):
            if not isinstance(self.nu, FiniteDiscrete):
                raise InvariantViolation("per-atom cost table needs a finite dislocation measure")
            if len(self.phi.values) != len(self.nu.atoms):
                raise InvariantViolation("cost table length differs from number of atoms")

    @cached_property
    def alpha(self) -> float:
        return malthusian_alpha(self)

    @cached_property
    def C(self) -> float:
        return cost_constant(self)

    @cached_property
    def mean_jump(self) -> float:
        """``int x Pi(dx)`` for the tilted tagged-fragment subordinator."""
        return _mean_jump(self)

    @cached_property
    def m_alpha(self) -> float:
        return m_alpha(self)

    @property
    def p_lower(self) -> float:
        return self.nu.p_lower

    def atom_costs(self) -> np.ndarray:
        if not isinstance(self.nu, FiniteDiscrete):
            raise TypeError("atom costs need a finite dislocation measure")
        if isinstance(self.phi, PerAtomTable):
            return np.array(self.phi.values, dtype=float)
        return np.array([self.phi(p) for p, _ in self.nu.atoms])


def _require_valid(nu) -> None:
    bad = nu.violations()
    if bad:
        raise InvariantViolation("; ".join(bad))


def _finite_children(nu: FiniteDiscrete):
    """Flattened children masses, their atom's weight and atom index."""
    s, w, idx = [], [], []
    for i, (p, wt) in enumerate(nu.atoms):
        for x in p.masses:
            s.append(x)
            w.append(wt)
            idx.append(i)
    return np.array(s), np.array(w), np.array(idx, dtype=int)


def kappa(model: FragmentationModel | DislocationMeasure, q: float) -> float:
    """``kappa(q) = int (1 - sum_j s_j**q) nu(ds)``."""
    nu = model.nu if isinstance(model, FragmentationModel) else model
    q = float(q)
    if q <= nu.p_lower:
        raise DivergentIntegral(f"kappa({q}) diverges: q must exceed {nu.p_lower}")
    if isinstance(nu, FiniteDiscrete):
        terms = [w * (1.0 - math.fsum(x**q for x in p.masses)) for p, w in nu.atoms]
        return math.fsum(terms)

    def g(x):
        return -np.expm1(q * np.log1p(-x)) - x**q

    return _binary_quad(nu, g, scales=(1.0 / max(q, 1.0),))


def malthusian_alpha(model: FragmentationModel | DislocationMeasure) -> float:
    """Unique root of kappa, found by bracketed Brent iteration."""
    nu = model.nu if isinstance(model, FragmentationModel) else model
    _require_valid(nu)
    if nu.conservative and abs(kappa(nu, 1.0)) <= TOL_ROOT:
        return 1.0
    if math.isfinite(nu.p_lower):
        lo = nu.p_lower + 1e-6
    else:
        lo = 0.0
        while kappa(nu, lo) > 0 and lo > -ALPHA_QMAX:
            lo -= 1.0
    hi = ALPHA_QMAX
    k_lo, k_hi = kappa(nu, lo), kappa(nu, hi)
    if k_lo == 0.0:
        return lo
    if np.sign(k_lo) == np.sign(k_hi):
        raise NoRoot("kappa has constant sign", bracket=(lo, hi))
    alpha = optimize.brentq(lambda q: kappa(nu, q), lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    if abs(kappa(nu, alpha)) > TOL_ROOT:
        raise NoRoot(f"|kappa(alpha)| = {abs(kappa(nu, alpha)):.3g} exceeds tolerance", bracket=(lo, hi))
    return float(alpha)


def cost_constant(model: FragmentationModel) -> float:
    """``C = int phi(s) nu(ds)``; warns when the result is not positive."""
    nu, phi = model.nu, model.phi
    if isinstance(nu, FiniteDiscrete):
        c = math.fsum(nu.weights * model.atom_costs())
    elif isinstance(phi, Potential):
        b = phi.beta_cost
        if b <= nu.p_lower:
            raise DivergentIntegral(f"potential cost with beta_cost={b} is not nu-integrable")
        c = _binary_quad(nu, lambda x: np.expm1(b * np.log1p(-x)) + x**b, scales=(1.0 / max(b, 1.0),))
    elif isinstance(phi, Custom):
        c = _binary_quad(nu, lambda x: phi(MassPartition((1.0 - float(x), float(x)))))
    else:
        raise ValidationError("per-atom costs need a finite dislocation measure")
    if c <= 0:
        warnings.warn(f"cost constant C = {c:.6g} is not positive", CostSignWarning, stacklevel=2)
    return float(c)


def _mean_jump(model: FragmentationModel) -> float:
    nu, a = model.nu, model.alpha
    _require_valid(nu)
    if isinstance(nu, FiniteDiscrete):
        s, w, _ = _finite_children(nu)
        return math.fsum(w * s**a * -np.log(s))

    def g(x):
        return (1.0 - x) ** a * -np.log1p(-x) + x**a * -np.log(x)

    return _binary_quad(nu, g)


def m_alpha(model: FragmentationModel) -> float:
    """``int sum_n s_n**alpha log(1/s_n**alpha) nu(ds)``, i.e. alpha times the mean jump.

    Only the mean jump itself normalizes the stationary overshoot to a
    probability; both are exposed and they coincide when alpha = 1.
    """
    val = model.alpha * model.mean_jump
    if not math.isfinite(val):
        raise DivergentIntegral("m(alpha) is infinite")
    return val


# --- diagnostics ----------------------------------------------------------


@dataclass
class DiagnosticsReport:
    ok: bool
    violations: list[str]
    alpha: float | None = None
    C: float | None = None
    m_alpha: float | None = None
    mean_jump: float | None = None
    p_lower: float | None = None
    lattice: bool | None = None
    lattice_step: float | None = None
    infinite_activity: bool | None = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def validate(model: FragmentationModel) -> DiagnosticsReport:
    from .levy import lattice_step

    report = DiagnosticsReport(ok=True, violations=list(model.nu.violations()))
    report.p_lower = model.p_lower
    report.infinite_activity = model.nu.infinite_activity
    if report.violations:
        report.ok = False
        return report
    try:
        report.alpha = model.alpha
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CostSignWarning)
            report.C = model.C
        report.mean_jump = model.mean_jump
        report.m_alpha = model.m_alpha
        h = lattice_step(model)
        report.lattice = h is not None
        report.lattice_step = h
    except Exception as exc:  # the report carries failures instead of raising
        report.ok = False
        report.violations.append(f"{type(exc).__name__}: {exc}")
        return report
    if abs(kappa(model, report.alpha)) > TOL_ROOT:
        report.ok = False
        report.violations.append("kappa(alpha) is not zero")
    if report.C is not None and report.C <= 0:
        report.violations.append(f"cost constant C = {report.C:.6g} is not positive (warning)")
    return report


# --- JSON catalog ---------------------------------------------------------


def nu_from_dict(d: dict) -> DislocationMeasure:
    kind = d.get("type")
    if kind == "finite":
        atoms = d.get("atoms")
        if not atoms:
            raise ValidationError("finite measure needs a nonempty 'atoms' list")
        return FiniteDiscrete(tuple((MassPartition(tuple(a["masses"])), a.get("weight", 1.0)) for a in atoms))
    if kind == "binary_density":
        fam = d.get("family")
        if fam == "power_law":
            return PowerLaw(float(d["c"]), float(d["rho"]))
        if fam == "bounded":
            return Bounded.from_table(d["x"], d["f"])
        raise ValidationError(f"unknown binary density family {fam!r}")
    raise ValidationError(f"unknown dislocation measure type {kind!r}")


def phi_from_dict(d: dict) -> CostFunction:
    kind = d.get("type")
    if kind == "potential":
        return Potential(float(d["beta_cost"]))
    if kind == "per_atom":
        return PerAtomTable(tuple(float(v) for v in d["values"]))
    raise ValidationError(f"unknown cost function type {kind!r}")


def model_from_dict(d: dict, name: str = "") -> FragmentationModel:
    try:
        return FragmentationModel(nu_from_dict(d["nu"]), phi_from_dict(d["phi"]), float(d["beta"]), name=name)
    except KeyError as exc:
        raise ValidationError(f"model {name!r} is missing field {exc}") from None
