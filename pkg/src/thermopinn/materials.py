"""Functionally graded property fields and the derived Lame/thermal moduli.

A property is a product of one factor per spatial axis,

    phi(x) = phi0 * prod_i g_i(x_i) ** e_i,   e_i in {1, 2}

with ``g_i`` one of

* ``quadratic``      p + q x
* ``exponential``    p exp(alpha x)
* ``trigonometric``  p cos(alpha x) + q sin(alpha x)

Families are named by formula.  A spec whose axes use different kinds is
``mixed``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, MaterialValidityError, SingularMaterialError

FACTOR_KINDS = ("quadratic", "exponential", "trigonometric")
PROPERTY_NAMES = ("kappa", "rho", "c", "E")
UNITS = {"kappa": "W/(m*degC)", "rho": "kg/m^3", "c": "J/(kg*degC)", "E": "Pa"}


@dataclass(frozen=True)
class AxisFactor:
    kind: str
    p: float = 1.0
    q: float = 0.0
    alpha: float = 0.0
    squared: bool = False

    def __post_init__(self):
        if self.kind not in FACTOR_KINDS:
            raise ConfigurationError(f"unknown factor kind {self.kind!r}")
        if not np.isfinite([self.p, self.q, self.alpha]).all():
            raise ConfigurationError("material coefficients must be finite")

    def base(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unsquared factor ``g(x)`` and ``g'(x)``."""
        if self.kind == "quadratic":
            return self.p + self.q * x, np.full_like(x, self.q)
        if self.kind == "exponential":
            g = self.p * np.exp(self.alpha * x)
            return g, self.alpha * g
        ca, sa = np.cos(self.alpha * x), np.sin(self.alpha * x)
        return self.p * ca + self.q * sa, self.alpha * (self.q * ca - self.p * sa)

    def __call__(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g, dg = self.base(x)
        if self.squared:
            return g * g, 2.0 * g * dg
        return g, dg

    def roots(self, lo: float, hi: float) -> list[float]:
        """Zeros of the unsquared factor inside ``[lo, hi]``."""
        if self.kind == "exponential":
            return [] if self.p != 0.0 else [lo]
        if self.kind == "quadratic":
            if self.q == 0.0:
                return [] if self.p != 0.0 else [lo]
            r = -self.p / self.q
            return [r] if lo <= r <= hi else []
        if self.alpha == 0.0:
            return [] if self.p != 0.0 else [lo]
        # p cos(ax) + q sin(ax) = R cos(ax - phi), zero at ax = phi + pi/2 + k pi
        phi = np.arctan2(self.q, self.p)
        a_lo, a_hi = sorted((self.alpha * lo, self.alpha * hi))
        k0 = int(np.ceil((a_lo - phi - np.pi / 2) / np.pi))
        out = []
        k = k0
        while phi + np.pi / 2 + k * np.pi <= a_hi:
            out.append((phi + np.pi / 2 + k * np.pi) / self.alpha)
            k += 1
        return sorted(out)


@dataclass(frozen=True)
class PropertySpec:
    """One graded field.  ``domain`` (lo, hi corners) enables a positivity check."""

    name: str
    phi0: float
    factors: tuple[AxisFactor, AxisFactor, AxisFactor]
    units: str = ""
    domain: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.factors) != 3:
            raise ConfigurationError("property fields are three-dimensional (one factor per axis)")
        if not np.isfinite(self.phi0):
            raise ConfigurationError("phi0 must be finite")
        if self.domain is not None:
            lo, hi = (np.asarray(c, dtype=np.float64) for c in self.domain)
            check_positive(self, lo, hi)

    @property
    def family(self) -> str:
        kinds = {f.kind for f in self.factors}
        if len(kinds) == 1:
            return f"product-{kinds.pop()}"
        return "per-axis-mixed"

    def with_domain(self, lo, hi) -> "PropertySpec":
        return PropertySpec(self.name, self.phi0, self.factors, self.units, (tuple(lo), tuple(hi)))


def eval_property(spec: PropertySpec, x, *, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Value and spatial gradient of ``spec`` at points ``x`` (``(3,)`` or ``(N, 3)``)."""
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)[:, :3]
    vals, ders = zip(*(f(pts[:, i]) for i, f in enumerate(spec.factors)))
    value = spec.phi0 * vals[0] * vals[1] * vals[2]
    grad = np.stack([
        spec.phi0 * ders[0] * vals[1] * vals[2],
        spec.phi0 * vals[0] * ders[1] * vals[2],
        spec.phi0 * vals[0] * vals[1] * ders[2],
    ], axis=-1)
    if check and np.any(value <= 0.0):
        bad = pts[np.argmax(value <= 0.0)]
        raise MaterialValidityError(
            f"{spec.name} is non-positive at x={bad.tolist()}; configuration is outside the family's valid region")
    if single:
        return value[0], grad[0]
    return value, grad


def check_positive(spec: PropertySpec, lo, hi, samples: int = 9) -> None:
    """Sample a lattice (corners included) and the factor roots over the box."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    axes = []
    for i, f in enumerate(spec.factors):
        pts = list(np.linspace(lo[i], hi[i], samples)) + f.roots(lo[i], hi[i])
        axes.append(np.array(sorted(pts)))
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    eval_property(spec, grid, check=True)


def sign_changes(spec: PropertySpec, lo, hi) -> dict[int, list[float]]:
    """Axes whose *unsquared* factors cross zero inside the box, with the crossings."""
    out = {}
    for i, f in enumerate(spec.factors):
        if f.squared:
            continue
        r = f.roots(float(lo[i]), float(hi[i]))
        if r:
            out[i] = r
    return out


@dataclass(frozen=True)
class PhysicalConstants:
    kappa0: float = 60.0
    rho0: float = 2555.0
    c0: float = 500.0
    E0: float = 1.25e11
    T0: float = 100.0
    nu: float = 0.28
    alpha: float = 0.02

    def __post_init__(self):
        if self.nu >= 0.5:
            raise SingularMaterialError(f"Poisson ratio {self.nu} makes the Lame relations singular")
        if not self.nu > 0.0:
            raise ConfigurationError("Poisson ratio must lie in (0, 0.5)")
        for name in ("kappa0", "rho0", "c0", "E0", "T0", "alpha"):
            if not getattr(self, name) > 0.0:
                raise ConfigurationError(f"{name} must be positive")


@dataclass
class LameFields:
    lam: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    lam_grad: np.ndarray
    mu_grad: np.ndarray
    beta_grad: np.ndarray


def lame_factors(nu: float, alpha: float) -> tuple[float, float, float]:
    if nu == 0.5:
        raise SingularMaterialError("nu = 0.5")
    return nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), 1.0 / (2.0 * (1.0 + nu)), alpha / (1.0 - 2.0 * nu)


def derive_lame(E_value, E_grad, constants: PhysicalConstants) -> LameFields:
    """lambda, mu, beta are fixed multiples of E; so are their gradients."""
    fl, fm, fb = lame_factors(constants.nu, constants.alpha)
    E_value = np.asarray(E_value, dtype=np.float64)
    E_grad = np.asarray(E_grad, dtype=np.float64)
    return LameFields(fl * E_value, fm * E_value, fb * E_value, fl * E_grad, fm * E_grad, fb * E_grad)


@dataclass
class MaterialPoint:
    """All property values (and spatial gradients) at a batch of points."""

    kappa: np.ndarray
    rho: np.ndarray
    c: np.ndarray
    E: np.ndarray
    kappa_grad: np.ndarray
    rho_grad: np.ndarray
    c_grad: np.ndarray
    E_grad: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    lam_grad: np.ndarray
    mu_grad: np.ndarray
    beta_grad: np.ndarray

    def subset(self, idx) -> "MaterialPoint":
        return MaterialPoint(**{k: v[idx] for k, v in self.__dict__.items()})


def material_point(specs: Mapping[str, PropertySpec], constants: PhysicalConstants, x, *,
                   check: bool = True) -> MaterialPoint:
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    values = {name: eval_property(specs[name], pts, check=check) for name in PROPERTY_NAMES}
    lame = derive_lame(*values["E"], constants)
    return MaterialPoint(
        kappa=values["kappa"][0], rho=values["rho"][0], c=values["c"][0], E=values["E"][0],
        kappa_grad=values["kappa"][1], rho_grad=values["rho"][1], c_grad=values["c"][1], E_grad=values["E"][1],
        lam=lame.lam, mu=lame.mu, beta=lame.beta,
        lam_grad=lame.lam_grad, mu_grad=lame.mu_grad, beta_grad=lame.beta_grad,
    )


def _exp(rates, phi0, name):
    return PropertySpec(name, phi0, tuple(AxisFactor("exponential", 1.0, 0.0, a) for a in rates), UNITS[name])


def _trig(rates, phi0, name, squared):
    return PropertySpec(name, phi0, tuple(AxisFactor("trigonometric", 1.0, 1.0, a, squared) for a in rates),
                        UNITS[name])


def _mixed(quad, exp_rate, trig_rate, phi0, name, squared):
    return PropertySpec(name, phi0, (
        AxisFactor("quadratic", quad[0], quad[1], 0.0, squared),
        AxisFactor("exponential", 1.0, 0.0, exp_rate, False),
        AxisFactor("trigonometric", 1.0, 1.0, trig_rate, squared),
    ), UNITS[name])


CASES = ("case1", "case2", "case3")


def builtin_case_materials(case: str, constants: PhysicalConstants | None = None) -> dict[str, PropertySpec]:
    """The kappa, rho, c, E fields of the three benchmark material cases."""
    k = constants or PhysicalConstants()
    if case == "case1":
        return {
            "kappa": _exp((0.4, 0.3, 0.2), k.kappa0, "kappa"),
            "rho": _exp((0.2, 0.2, 0.1), k.rho0, "rho"),
            "c": _exp((0.2, 0.1, 0.1), k.c0, "c"),
            "E": _exp((0.3, 0.2, 0.1), k.E0, "E"),
        }
    if case == "case2":
        return {
            "kappa": _trig((4.0, 3.0, 2.0), k.kappa0, "kappa", squared=True),
            "rho": _trig((4.0, 3.0, 2.0), k.rho0, "rho", squared=False),
            "c": _trig((4.0, 3.0, 2.0), k.c0, "c", squared=False),
            "E": _trig((3.0, 2.0, 1.0), k.E0, "E", squared=False),
        }
    if case == "case3":
        return {
            "kappa": _mixed((0.5, 0.004), 0.003, 0.02, k.kappa0, "kappa", squared=True),
            "rho": _mixed((0.5, 0.004), 0.002, 0.02, k.rho0, "rho", squared=False),
            "c": _mixed((0.5, 0.004), 0.001, 0.02, k.c0, "c", squared=False),
            "E": _mixed((0.8, 0.005), 0.004, 0.03, k.E0, "E", squared=False),
        }
    raise ConfigurationError(f"unknown material case {case!r}; expected one of {CASES}")


def homogeneous_materials(constants: PhysicalConstants | None = None) -> dict[str, PropertySpec]:
    """Spatially constant fields at the base values (useful for hand checks)."""
    k = constants or PhysicalConstants()
    base = {"kappa": k.kappa0, "rho": k.rho0, "c": k.c0, "E": k.E0}
    return {name: _exp((0.0, 0.0, 0.0), value, name) for name, value in base.items()}


def spec_from_dict(name: str, d: Mapping) -> PropertySpec:
    """Build a spec from config data: ``phi0`` plus per-axis coefficient arrays.

    ``family`` selects the factor kind for all axes; ``kinds`` (list of three)
    overrides it per axis.
    """
    family = d.get("family", "exponential").replace("product-", "")
    kinds = d.get("kinds") or [family] * 3
    p = d.get("p", [1.0] * 3)
    q = d.get("q", [0.0] * 3)
    alpha = d.get("alpha", [0.0] * 3)
    squared = d.get("squared", [False] * 3)
    if isinstance(squared, bool):
        squared = [squared] * 3
    factors = tuple(AxisFactor(kinds[i], float(p[i]), float(q[i]), float(alpha[i]), bool(squared[i]))
                    for i in range(3))
    return PropertySpec(name, float(d["phi0"]), factors, UNITS.get(name, ""))
