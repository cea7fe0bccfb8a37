"""Driving measures of Lambda-coalescents.

A measure is stored through nu(dx) = x**-2 Lambda(dx) on (0, 1). The built-in
densities are finite sums of terms ``c * x**(-1-theta) * (1-x)**(beta-1)``,
which covers Beta(2-alpha, alpha) and the synthetic test families, and gives
closed forms for every rate and tail integral. Arbitrary callables are
accepted too, in which case everything goes through quadrature.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import special

from .specfun import DomainError, QuadratureSpec, integrate_singular, log_beta

__all__ = [
    "CaseId",
    "PowerTerm",
    "MixtureDensity",
    "CoalescentMeasure",
    "ExpansionConstants",
    "EstimationError",
    "beta_density",
    "beta_ab_density",
    "power_pair_density",
    "power_density",
    "BUILTIN_DENSITIES",
    "beta_measure",
    "general_measure",
    "measure_from_config",
    "nu_density",
    "rho",
    "rho_integral",
    "nu_integral",
    "expansion_constants",
    "c2_profile",
    "ALPHA_SAFE_RANGE",
]

ALPHA_SAFE_RANGE = (1.05, 1.95)

_ACCURATE = QuadratureSpec(rel_tol=1e-11, abs_tol=1e-15, max_subdivisions=2000)


class EstimationError(RuntimeError):
    """An extrapolated constant failed its convergence test."""


class CaseId(str, enum.Enum):
    CASE_I = "CaseI"
    CASE_II = "CaseII"
    CASE_III = "CaseIII"


@dataclass(frozen=True)
class PowerTerm:
    """One term c * x**(-1-theta) * (1-x)**(beta-1) of a density."""

    coef: float
    theta: float
    beta: float

    def __post_init__(self):
        if not self.coef > 0:
            raise DomainError("term coefficients must be positive")
        if not self.theta < 2:
            raise DomainError("theta must be below 2 so that x**2 nu(dx) is finite")
        if not self.beta > 0:
            raise DomainError("beta must be positive")


def _upper_beta_integral(p: float, q: float, t: float) -> float:
    """J(p, q; t) = int_t^1 x**(p-1) (1-x)**(q-1) dx with q > 0, any real p."""
    if t >= 1.0:
        return 0.0
    if p > 0:
        return math.exp(log_beta(p, q)) * float(special.betaincc(p, q, t))
    if p == 0:
        # -ln t plus a regular remainder
        def g(x):
            return math.expm1((q - 1.0) * math.log1p(-x)) / x if x > 0 else 1.0 - q

        spec = _ACCURATE.with_exponents(0.0, min(q - 1.0, 0.0) if q < 1 else 0.0)
        rest = 0.0 if q == 1.0 else integrate_singular(g, spec, lower=t)
        return -math.log(t) + rest
    # integration by parts moves p up by one
    return ((p + q) * _upper_beta_integral(p + 1.0, q, t) - t**p * (1.0 - t) ** q) / p


@dataclass(frozen=True)
class MixtureDensity:
    """A named density built from :class:`PowerTerm` pieces."""

    name: str
    terms: tuple[PowerTerm, ...]
    params: Mapping[str, float] = field(default_factory=dict)

    def __call__(self, x: float, s: int = 0) -> float:
        if not 0.0 < x < 1.0:
            return 0.0
        lx = math.log(x)
        l1 = math.log1p(-x)
        return math.fsum(
            t.coef * math.exp((-1.0 - t.theta) * lx + (t.beta - 1.0 + s) * l1) for t in self.terms
        )

    def excess(self, x: float, s: int, lead: float) -> float:
        """nu^(s)(x) - lead * x**(-1-theta_max), without cancellation at small x."""
        if not 0.0 < x < 1.0:
            return 0.0
        top = self.leading_theta
        lx = math.log(x)
        l1 = math.log1p(-x)
        parts = []
        for t in self.terms:
            if t.theta == top:
                bump = math.expm1((t.beta - 1.0 + s) * l1)
                parts.append((t.coef * bump + (t.coef - lead)) * math.exp((-1.0 - top) * lx))
                lead = 0.0
            else:
                parts.append(t.coef * math.exp((-1.0 - t.theta) * lx + (t.beta - 1.0 + s) * l1))
        return math.fsum(parts)

    @property
    def leading_theta(self) -> float:
        return max(t.theta for t in self.terms)

    def omega(self, s: int) -> float:
        return min(t.beta for t in self.terms) + s

    def exponents(self, s: int = 0) -> tuple[float, float]:
        return (-1.0 - self.leading_theta, self.omega(s) - 1.0)

    def rho(self, t: float, s: int = 0) -> float:
        if t >= 1.0:
            return 0.0
        return math.fsum(
            term.coef * _upper_beta_integral(-term.theta, term.beta + s, t) for term in self.terms
        )

    def rho_integral(self, t: float, s: int = 0) -> float:
        """int_t^1 rho^(s)(r) dr = int_t^1 (x - t) nu^(s)(dx)."""
        if t >= 1.0:
            return 0.0
        parts = []
        for term in self.terms:
            q = term.beta + s
            parts.append(term.coef * _upper_beta_integral(1.0 - term.theta, q, t))
            parts.append(-t * term.coef * _upper_beta_integral(-term.theta, q, t))
        return math.fsum(parts)

    def log_rate_pieces(self, n_max: int, s: int = 0):
        """Per-index log arrays giving C(b,a) lambda^(s)_{b,a} in O(n_max) memory.

        For each term the log weight is ``head[a] + body[b - a + 1] + foot[b]``.
        """
        from .specfun import log_gamma_ratio

        idx = np.arange(n_max + 1, dtype=float)
        pieces = []
        for term in self.terms:
            beta = term.beta + s
            head = np.full(n_max + 1, -np.inf)
            body = np.full(n_max + 1, -np.inf)
            foot = np.full(n_max + 1, -np.inf)
            a = idx[2:]
            # C(b, a) B(a - theta, b - a + beta) splits into three gamma ratios
            head[2:] = log_gamma_ratio(a + 1.0, -1.0 - term.theta)
            body[1:] = log_gamma_ratio(idx[1:], beta - 1.0)
            foot[2:] = math.log(term.coef) - log_gamma_ratio(idx[2:] + 1.0, beta - 1.0 - term.theta)
            pieces.append((head, body, foot))
        return pieces


def beta_density(alpha: float) -> MixtureDensity:
    """nu for Lambda = Beta(2 - alpha, alpha)."""
    coef = math.exp(-log_beta(2.0 - alpha, alpha))
    return MixtureDensity("beta", (PowerTerm(coef, alpha, alpha),), {"alpha": alpha})


def beta_ab_density(alpha: float, b: float) -> MixtureDensity:
    """nu for Lambda = Beta(2 - alpha, b)."""
    coef = math.exp(-log_beta(2.0 - alpha, b))
    return MixtureDensity("beta_ab", (PowerTerm(coef, alpha, b),), {"alpha": alpha, "b": b})


def power_pair_density(alpha: float, zeta: float, c0: float, c1: float) -> MixtureDensity:
    """nu = c0 x**(-1-alpha) + c1 x**(-1-alpha+zeta) on (0, 1)."""
    if not 0 < zeta < alpha:
        raise DomainError("power_pair needs 0 < zeta < alpha")
    terms = (PowerTerm(c0, alpha, 1.0), PowerTerm(c1, alpha - zeta, 1.0))
    return MixtureDensity("power_pair", terms, {"alpha": alpha, "zeta": zeta, "c0": c0, "c1": c1})


def power_density(theta: float, c: float = 1.0) -> MixtureDensity:
    """nu = c x**(-1-theta) on (0, 1)."""
    return MixtureDensity("power", (PowerTerm(c, theta, 1.0),), {"theta": theta, "c": c})


def _expansion_of(density: MixtureDensity) -> dict:
    """Declared (C0, zeta, C1, omega) of the built-in families."""
    p = dict(density.params)
    term = density.terms[0]
    if density.name in ("beta", "beta_ab"):
        alpha, b = term.theta, term.beta
        return {"C0": term.coef / alpha, "zeta": 1.0, "C1": -term.coef * (b - 1.0) / (alpha - 1.0),
                "omega": {1: b + 1.0}}
    if density.name == "power_pair":
        return {"C0": p["c0"] / p["alpha"], "zeta": p["zeta"], "C1": p["c1"] / (p["alpha"] - p["zeta"]),
                "omega": {1: 2.0}}
    raise DomainError(f"no declared expansion for density {density.name!r}")


BUILTIN_DENSITIES: dict[str, Callable[..., MixtureDensity]] = {
    "beta": lambda alpha: beta_density(alpha),
    "beta_ab": lambda alpha, b: beta_ab_density(alpha, b),
    "power_pair": lambda alpha, zeta, c0, c1: power_pair_density(alpha, zeta, c0, c1),
}


@dataclass(frozen=True)
class CoalescentMeasure:
    """A driving measure together with its declared small-x expansion.

    rho(t) = C0 t**-alpha + C1 t**(-alpha+zeta) + o(t**(-alpha+zeta)) as t -> 0,
    and ``omega`` maps s to the regularity exponent of (1-x)**s nu(dx) at 1.
    """

    kind: str
    alpha: float
    zeta: float
    C0: float
    C1: float
    density: Callable[..., float]
    omega_values: Mapping[int, float]
    allow_extreme_alpha: bool = False

    def __post_init__(self):
        if self.kind not in ("beta", "general"):
            raise DomainError(f"unknown measure kind {self.kind!r}")
        _check_alpha(self.alpha)
        lo, hi = ALPHA_SAFE_RANGE
        if not self.allow_extreme_alpha and not lo <= self.alpha <= hi:
            raise DomainError(
                f"alpha={self.alpha} outside the safe range [{lo}, {hi}]; pass allow_extreme_alpha to override"
            )
        if not self.zeta > 0:
            raise DomainError("zeta must be positive")
        if not self.C0 > 0:
            raise DomainError("C0 must be positive")
        if not self.omega_values:
            raise DomainError("omega must be declared for at least one s")
        if isinstance(self.density, MixtureDensity) and abs(self.density.leading_theta - self.alpha) > 1e-12:
            raise DomainError("density's leading exponent does not match alpha")

    @property
    def closed_form(self) -> bool:
        return isinstance(self.density, MixtureDensity)

    @property
    def case_id(self) -> CaseId:
        gap = self.zeta - (self.alpha - 1.0)
        if abs(gap) <= 1e-12:
            return CaseId.CASE_II
        return CaseId.CASE_III if gap > 0 else CaseId.CASE_I

    def omega(self, s: int) -> float:
        """Declared omega^(s); undeclared s are shifted from the nearest declared one."""
        if s in self.omega_values:
            return float(self.omega_values[s])
        s0 = min(self.omega_values, key=lambda k: (abs(k - s), k))
        return float(self.omega_values[s0]) + (s - s0)

    def exponents(self, s: int = 0) -> tuple[float, float]:
        """Power behaviour of the nu^(s) density at 0 and at 1."""
        return (-1.0 - self.alpha, self.omega(s) - 1.0)


def _check_alpha(alpha: float):
    if not 1.0 < alpha < 2.0:
        raise DomainError(f"alpha out of (1,2): {alpha}")


def beta_measure(alpha: float, allow_extreme_alpha: bool = False) -> CoalescentMeasure:
    _check_alpha(alpha)
    density = beta_density(alpha)
    C0 = 1.0 / math.exp(special.gammaln(alpha + 1.0) + special.gammaln(2.0 - alpha))
    C1 = -density.terms[0].coef
    return CoalescentMeasure("beta", alpha, 1.0, C0, C1, density, {1: alpha + 1.0}, allow_extreme_alpha)


def general_measure(
    density: Callable[..., float],
    alpha: float,
    zeta: float | None = None,
    C0: float | None = None,
    C1: float | None = None,
    omega: Mapping[int, float] | None = None,
    allow_extreme_alpha: bool = False,
) -> CoalescentMeasure:
    """Wrap a density; built-in densities may omit the values they already declare."""
    declared = _expansion_of(density) if isinstance(density, MixtureDensity) else {}
    values = {"zeta": zeta, "C0": C0, "C1": C1, "omega": omega}
    for key in values:
        if values[key] is None:
            if key not in declared:
                raise DomainError(f"{key} must be declared for a general density")
            values[key] = declared[key]
    omega_map = {int(k): float(v) for k, v in values["omega"].items()}
    return CoalescentMeasure(
        "general", alpha, float(values["zeta"]), float(values["C0"]), float(values["C1"]),
        density, omega_map, allow_extreme_alpha,
    )


def measure_from_config(cfg: Mapping, allow_extreme_alpha: bool = False) -> CoalescentMeasure:
    """Build a measure from its JSON form.

    ``{"kind": "beta", "alpha": 1.5}`` or ``{"kind": "general", "alpha": ..,
    "zeta": .., "C0": .., "C1": .., "omega": {"1": ..}, "density": {"name":
    "beta_ab", "b": 2.0}}``.
    """
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    allow = bool(cfg.pop("allow_extreme_alpha", allow_extreme_alpha))
    if "alpha" not in cfg:
        raise DomainError("measure.alpha: missing")
    try:
        alpha = float(cfg.pop("alpha"))
        _check_alpha(alpha)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"measure.alpha: {exc}") from None
    if kind == "beta":
        if cfg:
            raise DomainError(f"measure: unknown keys {sorted(cfg)}")
        return beta_measure(alpha, allow)
    if kind != "general":
        raise DomainError(f"measure.kind: expected 'beta' or 'general', got {kind!r}")
    required = ["zeta", "C0", "C1", "omega", "density"]
    missing = [k for k in required if k not in cfg]
    if missing:
        raise DomainError(f"measure: missing keys {missing}")
    extra = set(cfg) - set(required)
    if extra:
        raise DomainError(f"measure: unknown keys {sorted(extra)}")
    dens_cfg = dict(cfg["density"])
    name = dens_cfg.pop("name", None)
    if name not in BUILTIN_DENSITIES:
        raise DomainError(f"measure.density.name: unknown built-in {name!r}")
    args = {"alpha": alpha}
    if name == "power_pair":
        args["zeta"] = float(cfg["zeta"])
    try:
        density = BUILTIN_DENSITIES[name](**args, **{k: float(v) for k, v in dens_cfg.items()})
    except TypeError as exc:
        raise DomainError(f"measure.density: bad parameters for {name!r}: {exc}") from None
    omega = {int(k): float(v) for k, v in dict(cfg["omega"]).items()}
    return general_measure(density, alpha, float(cfg["zeta"]), float(cfg["C0"]), float(cfg["C1"]), omega, allow)


def nu_density(measure: CoalescentMeasure, x: float, s: int = 0) -> float:
    """Density of nu^(s)(dx) = (1-x)**s nu(dx)."""
    if isinstance(measure.density, MixtureDensity):
        return measure.density(x, s)
    return measure.density(x) * (1.0 - x) ** s


def _as_measure_like(obj):
    if isinstance(obj, CoalescentMeasure):
        return obj.density, obj.exponents
    if isinstance(obj, MixtureDensity):
        return obj, obj.exponents
    raise DomainError("expected a CoalescentMeasure or MixtureDensity")


def rho(measure, t: float, s: int = 0, method: str = "auto") -> float:
    """rho^(s)(t) = int_t^1 (1-x)**s nu(dx).

    ``method`` is ``"closed"`` (incomplete beta relation, built-in densities
    only), ``"quadrature"`` or ``"auto"``.
    """
    if not t > 0:
        raise DomainError("rho is singular at t <= 0")
    if t > 1:
        raise DomainError("rho is defined on (0, 1]")
    density, exps = _as_measure_like(measure)
    closed = isinstance(density, MixtureDensity)
    if method == "closed" or (method == "auto" and closed):
        if not closed:
            raise DomainError("closed-form rho needs a built-in density")
        return density.rho(t, s)
    if t == 1.0:
        return 0.0
    p, q = exps(s)

    def f(x):
        return density(x, s) if closed else density(x) * (1.0 - x) ** s

    return integrate_singular(f, _ACCURATE.with_exponents(0.0, max(q, -0.999)), lower=t)


def rho_integral(measure, t: float, s: int = 0, method: str = "auto") -> float:
    """int_t^1 rho^(s)(r) dr."""
    if not 0 < t <= 1:
        raise DomainError("t must lie in (0, 1]")
    density, exps = _as_measure_like(measure)
    closed = isinstance(density, MixtureDensity)
    if method == "closed" or (method == "auto" and closed):
        return density.rho_integral(t, s)
    if t == 1.0:
        return 0.0
    p, q = exps(s)

    def f(x):
        d = density(x, s) if closed else density(x) * (1.0 - x) ** s
        return (x - t) * d

    return integrate_singular(f, _ACCURATE.with_exponents(0.0, max(q, -0.999)), lower=t)


def nu_integral(
    measure: CoalescentMeasure,
    h: Callable[[float], float],
    s: int = 0,
    h_exponents: tuple[float, float] = (2.0, 0.0),
    spec: QuadratureSpec = _ACCURATE,
) -> float:
    """int_0^1 h(x) nu^(s)(dx); ``h_exponents`` give h's power behaviour at 0 and 1."""
    p, q = measure.exponents(s)
    ep, eq = p + h_exponents[0], q + h_exponents[1]
    return integrate_singular(lambda x: h(x) * nu_density(measure, x, s), spec.with_exponents(ep, max(eq, -0.999)))


@dataclass(frozen=True)
class ExpansionConstants:
    """C2 = lim (int_t^1 rho - C0 t**(1-alpha)/(alpha-1)) and its tilted versions."""

    C2: float | None
    C2_l: Mapping[int, float | None]
    case_id: CaseId


def c2_profile(measure: CoalescentMeasure, t: float, l: int = 0) -> float:
    """int_t^1 rho^(l)(r) dr - C0 t**(1-alpha)/(alpha-1).

    The leading singular part of nu is integrated analytically, so the value
    does not cancel large t**(1-alpha) terms at tiny t.
    """
    a, C0 = measure.alpha, measure.C0
    lead = a * C0

    if isinstance(measure.density, MixtureDensity):
        def diff(x):
            return (x - t) * measure.density.excess(x, l, lead)
    else:
        def diff(x):
            return (x - t) * (nu_density(measure, x, l) - lead * x ** (-1.0 - a))

    q = measure.omega(l) - 1.0
    body = integrate_singular(diff, _ACCURATE.with_exponents(0.0, max(q, -0.999)), lower=t)
    return body - lead / (a - 1.0) + C0 * t


def _richardson(values: np.ndarray, exponents: list[float]) -> np.ndarray:
    table = np.asarray(values, dtype=float)
    for e in exponents:
        f = 2.0**e
        table = (f * table[1:] - table[:-1]) / (f - 1.0)
    return table


def _extrapolate_c2(measure: CoalescentMeasure, l: int, agree: float = 1e-6) -> float:
    js = range(10, 31)
    values = np.array([c2_profile(measure, 2.0 ** (-j), l) for j in js])
    # error terms: the declared correction, the tilt (1-x)**l, and the linear C0*t piece
    a = measure.alpha
    e1 = 1.0 - a + measure.zeta
    exponents = []
    for e in sorted((e1, 2.0 - a, 1.0, e1 + 1.0, 3.0 - a, 2.0)):
        if all(abs(e - f) > 1e-9 for f in exponents):
            exponents.append(e)
    final = _richardson(values, exponents)
    last = final[-3:]
    if np.max(last) - np.min(last) > agree * max(1.0, abs(last[-1])):
        raise EstimationError(f"C2^({l}) extrapolation not Cauchy: {last.tolist()}")
    return float(last[-1])


def expansion_constants(measure: CoalescentMeasure, method: str = "auto") -> ExpansionConstants:
    """C2, C2^(1), C2^(2) and the theorem case of a measure.

    Beta measures use closed forms unless ``method="extrapolate"``. The C2 family
    only exists in CaseIII; other cases report None.
    """
    case = measure.case_id
    if measure.kind == "beta" and method != "extrapolate":
        a = measure.alpha
        return ExpansionConstants(1.0 / (1.0 - a), {1: a / (1.0 - a), 2: (a * a + a) / (2.0 * (1.0 - a))}, case)
    if case is not CaseId.CASE_III:
        return ExpansionConstants(None, {1: None, 2: None}, case)
    return ExpansionConstants(
        _extrapolate_c2(measure, 0), {1: _extrapolate_c2(measure, 1), 2: _extrapolate_c2(measure, 2)}, case
    )
