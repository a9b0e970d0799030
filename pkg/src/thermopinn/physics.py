"""Residuals, constitutive relations and loss terms.

Everything here is written with plain arithmetic on "jet-like" objects
exposing ``value``, ``d(a)`` and ``dd(a, b)`` (input index 0..2 space,
3 time).  The same code therefore evaluates exact analytic fields
(ndarrays) and network outputs recorded on a tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import JetLayout
from .errors import BalancingError, ConfigurationError, GeometryError
from .materials import MaterialPoint, PhysicalConstants

T_AXIS = ad.TIME

TERM_NAMES = (
    "PDE1", "PDE2", "PDE3", "PDE4",
    "IC1", "IC2", "IC3", "IC4",
    "ICv1", "ICv2", "ICv3",
    "NBC1", "NBC2", "NBC3", "NBC4",
    "DBC1", "DBC2", "DBC3", "DBC4",
)
N_TERMS = len(TERM_NAMES)
TERM_INDEX = {name: k for k, name in enumerate(TERM_NAMES)}
TERM_GROUP = {name: name.rstrip("1234") for name in TERM_NAMES}


@dataclass
class FieldJets:
    """Jets of u1, u2, u3 and T at one set of space-time points."""

    u1: object
    u2: object
    u3: object
    T: object

    @property
    def u(self):
        return (self.u1, self.u2, self.u3)


@dataclass
class SourceSample:
    f: np.ndarray  # (N, 3)
    s: np.ndarray  # (N,)


# ---------------------------------------------------------------------------
# pointwise operators


def mechanical_residual(i: int, jets: FieldJets, mat: MaterialPoint, src: SourceSample | None = None):
    """Momentum balance residual for displacement component ``i`` (1..3).

    rho u_i,tt + beta T_,i - (lambda + mu) sum_j u_j,ij - mu sum_j u_i,jj - f_i
    """
    if i not in (1, 2, 3):
        raise ConfigurationError(f"mechanical residual index must be 1..3, got {i}")
    a = i - 1
    u = jets.u
    r = mat.rho * u[a].dd(T_AXIS, T_AXIS) + mat.beta * jets.T.d(a)
    r = r - (mat.lam + mat.mu) * (u[0].dd(a, 0) + u[1].dd(a, 1) + u[2].dd(a, 2))
    r = r - mat.mu * (u[a].dd(0, 0) + u[a].dd(1, 1) + u[a].dd(2, 2))
    if src is not None:
        r = r - src.f[..., a]
    return r


def thermal_residual(jets: FieldJets, mat: MaterialPoint, src: SourceSample | None,
                     constants: PhysicalConstants):
    """Energy balance residual with the conduction term in product-rule form."""
    u, T = jets.u, jets.T
    r = mat.rho * mat.c * T.d(T_AXIS)
    r = r + mat.beta * constants.T0 * (u[0].dd(0, T_AXIS) + u[1].dd(1, T_AXIS) + u[2].dd(2, T_AXIS))
    for a in range(3):
        r = r - (mat.kappa_grad[..., a] * T.d(a) + mat.kappa * T.dd(a, a))
    if src is not None:
        r = r - src.s
    return r


def strain_components(jets: FieldJets) -> list[list]:
    u = jets.u
    return [[0.5 * (u[i].d(j) + u[j].d(i)) if i != j else u[i].d(i) for j in range(3)] for i in range(3)]


def stress_components(jets: FieldJets, mat: MaterialPoint) -> list[list]:
    """sigma_ij = lambda eps_kk delta_ij + 2 mu eps_ij - beta T delta_ij"""
    eps = strain_components(jets)
    trace = eps[0][0] + eps[1][1] + eps[2][2]
    iso = mat.lam * trace - mat.beta * jets.T.value
    sig = [[None] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(i, 3):
            s = 2.0 * mat.mu * eps[i][j]
            if i == j:
                s = s + iso
            sig[i][j] = sig[j][i] = s
    return sig


@dataclass
class StressState:
    strain: np.ndarray  # (..., 3, 3)
    stress: np.ndarray  # (..., 3, 3)


def stress(jets: FieldJets, mat: MaterialPoint) -> StressState:
    eps = strain_components(jets)
    sig = stress_components(jets, mat)
    to_arr = lambda m: np.stack([np.stack([np.asarray(m[i][j], dtype=np.float64) for j in range(3)], axis=-1)
                                 for i in range(3)], axis=-2)
    return StressState(to_arr(eps), to_arr(sig))


def check_unit_normals(n, tol: float = 1e-9) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    norms = np.linalg.norm(np.atleast_2d(n), axis=-1)
    if n.shape[-1] != 3 or np.any(np.abs(norms - 1.0) > tol):
        raise GeometryError("normals must be unit 3-vectors (tolerance 1e-9)")
    return n


def traction(sigma, n) -> np.ndarray:
    """p_i = sigma_ij n_j"""
    n = check_unit_normals(n)
    s = sigma.stress if isinstance(sigma, StressState) else np.asarray(sigma, dtype=np.float64)
    return np.einsum("...ij,...j->...i", s, n)


def traction_components(sig: list[list], n: np.ndarray) -> list:
    return [sig[i][0] * n[..., 0] + sig[i][1] * n[..., 1] + sig[i][2] * n[..., 2] for i in range(3)]


def heat_flux(jets: FieldJets, mat: MaterialPoint, n):
    """q = -kappa T_,j n_j"""
    n = check_unit_normals(n)
    T = jets.T
    return -mat.kappa * (T.d(0) * n[..., 0] + T.d(1) * n[..., 1] + T.d(2) * n[..., 2])


# ---------------------------------------------------------------------------
# loss assembly

_ALL = (0, 1, 2, 3)
_SPACE = (0, 1, 2)


def _pde_displacement_layout(k: int) -> JetLayout:
    # u_k enters through its Laplacian, u_{k,kj}, u_{k,tt} and u_{k,kt}
    pairs = {(0, 0), (1, 1), (2, 2), (3, 3), (k, T_AXIS)} | {(min(k, j), max(k, j)) for j in _SPACE}
    return JetLayout(dirs=_ALL, pairs=tuple(pairs))


PDE_LAYOUTS = (
    _pde_displacement_layout(0), _pde_displacement_layout(1), _pde_displacement_layout(2),
    JetLayout(dirs=_ALL, pairs=((0, 0), (1, 1), (2, 2))),
)
IC_LAYOUTS = (JetLayout(dirs=(T_AXIS,)),) * 3 + (ad.VALUE_LAYOUT,)
DBC_LAYOUTS = (ad.VALUE_LAYOUT,) * 4
NBC_LAYOUTS = (JetLayout(dirs=_SPACE),) * 4


@dataclass
class LossInputs:
    """Collocation points with every target and material value precomputed."""

    interior: np.ndarray
    interior_mat: MaterialPoint | None
    sources: SourceSample | None
    initial: np.ndarray
    u_hat: np.ndarray
    v_hat: np.ndarray
    T_hat: np.ndarray
    dirichlet: np.ndarray
    u_bar: np.ndarray
    T_bar: np.ndarray
    neumann: np.ndarray
    normals: np.ndarray
    neumann_mat: MaterialPoint | None
    p_bar: np.ndarray
    q_bar: np.ndarray
    constants: PhysicalConstants

    @property
    def counts(self) -> dict[str, int]:
        return {"PDE": len(self.interior), "IC": len(self.initial), "ICv": len(self.initial),
                "NBC": len(self.neumann), "DBC": len(self.dirichlet)}

    def active(self) -> np.ndarray:
        counts = self.counts
        return np.array([counts[TERM_GROUP[name]] > 0 for name in TERM_NAMES])


def prepare_loss_inputs(colloc, problem) -> LossInputs:
    """Evaluate sources, targets and materials once for a collocation set.

    ``problem`` provides ``materials``, ``sources``, ``initial_data``,
    ``dirichlet_data`` and ``neumann_data`` (see :class:`mms.ProblemData`).
    """
    empty3 = np.zeros((0, 3))
    interior = np.asarray(colloc.interior, dtype=np.float64).reshape(-1, 4)
    initial = np.asarray(colloc.initial, dtype=np.float64).reshape(-1, 4)
    dirichlet = np.asarray(colloc.dirichlet, dtype=np.float64).reshape(-1, 4)
    neumann = np.asarray(colloc.neumann, dtype=np.float64).reshape(-1, 4)
    normals = np.asarray(colloc.neumann_normals, dtype=np.float64).reshape(-1, 3)
    if len(neumann):
        check_unit_normals(normals)
    u_hat, v_hat, T_hat = problem.initial_data(initial) if len(initial) else (empty3, empty3, np.zeros(0))
    u_bar, T_bar = problem.dirichlet_data(dirichlet) if len(dirichlet) else (empty3, np.zeros(0))
    p_bar, q_bar = problem.neumann_data(neumann, normals) if len(neumann) else (empty3, np.zeros(0))
    return LossInputs(
        interior=interior,
        interior_mat=problem.materials(interior) if len(interior) else None,
        sources=problem.sources(interior) if len(interior) else None,
        initial=initial, u_hat=u_hat, v_hat=v_hat, T_hat=T_hat,
        dirichlet=dirichlet, u_bar=u_bar, T_bar=T_bar,
        neumann=neumann, normals=normals,
        neumann_mat=problem.materials(neumann) if len(neumann) else None,
        p_bar=p_bar, q_bar=q_bar, constants=problem.constants,
    )


Evaluator = Callable[[np.ndarray, Sequence[JetLayout], Sequence[int]], Sequence]


def _mse(r):
    return ad.mean(ad.square(r))


def term_expressions(evaluate: Evaluator, inputs: LossInputs, terms: Sequence[str] | None = None) -> dict:
    """Unweighted loss terms as scalars (or tape nodes).

    ``evaluate(points, layouts, nets)`` returns four jet-like objects (entries
    for networks outside ``nets`` may be ``None``).  Requesting a term whose
    point set is empty raises a configuration error naming it.
    """
    counts = inputs.counts
    if terms is None:
        terms = [n for n in TERM_NAMES if counts[TERM_GROUP[n]] > 0]
        for group in ("PDE", "IC"):
            if counts[group] == 0:
                raise ConfigurationError(f"term L_{group} requires collocation points but the set is empty")
        if counts["NBC"] == 0 and counts["DBC"] == 0:
            raise ConfigurationError("terms L_NBC/L_DBC: no boundary points at all")
    else:
        for name in terms:
            if name not in TERM_INDEX:
                raise ConfigurationError(f"unknown loss term {name!r}")
            if counts[TERM_GROUP[name]] == 0:
                raise ConfigurationError(f"term {name} requires collocation points but its set is empty")
    wanted = set(terms)
    out: dict = {}

    if wanted & {"PDE1", "PDE2", "PDE3", "PDE4"}:
        jets = FieldJets(*evaluate(inputs.interior, PDE_LAYOUTS, _ALL))
        mat, src = inputs.interior_mat, inputs.sources
        for i in (1, 2, 3):
            if f"PDE{i}" in wanted:
                out[f"PDE{i}"] = _mse(mechanical_residual(i, jets, mat, src))
        if "PDE4" in wanted:
            out["PDE4"] = _mse(thermal_residual(jets, mat, src, inputs.constants))

    ic_nets = [k for k in range(4) if {f"IC{k + 1}", f"ICv{k + 1}"} & wanted]
    if ic_nets:
        jets = evaluate(inputs.initial, IC_LAYOUTS, ic_nets)
        for k in ic_nets:
            if f"IC{k + 1}" in wanted:
                target = inputs.T_hat if k == 3 else inputs.u_hat[:, k]
                out[f"IC{k + 1}"] = _mse(jets[k].value - target)
            if k < 3 and f"ICv{k + 1}" in wanted:
                out[f"ICv{k + 1}"] = _mse(jets[k].d(T_AXIS) - inputs.v_hat[:, k])

    nbc_mech = [i for i in (1, 2, 3) if f"NBC{i}" in wanted]
    if nbc_mech or "NBC4" in wanted:
        nets = _ALL if nbc_mech else (3,)
        jets = FieldJets(*evaluate(inputs.neumann, NBC_LAYOUTS, nets))
        n = inputs.normals
        if nbc_mech:
            p = traction_components(stress_components(jets, inputs.neumann_mat), n)
            for i in nbc_mech:
                out[f"NBC{i}"] = _mse(p[i - 1] - inputs.p_bar[:, i - 1])
        if "NBC4" in wanted:
            out["NBC4"] = _mse(heat_flux(jets, inputs.neumann_mat, n) - inputs.q_bar)

    dbc_nets = [k for k in range(4) if f"DBC{k + 1}" in wanted]
    if dbc_nets:
        jets = evaluate(inputs.dirichlet, DBC_LAYOUTS, dbc_nets)
        for k in dbc_nets:
            target = inputs.T_bar if k == 3 else inputs.u_bar[:, k]
            out[f"DBC{k + 1}"] = _mse(jets[k].value - target)

    return {name: out[name] for name in TERM_NAMES if name in out}


@dataclass
class LossBreakdown:
    """The 18 unweighted loss terms, their weights, and which are active."""

    losses: np.ndarray
    weights: np.ndarray = field(default_factory=lambda: np.ones(N_TERMS))
    active: np.ndarray = field(default_factory=lambda: np.ones(N_TERMS, dtype=bool))

    def __post_init__(self):
        self.losses = np.asarray(self.losses, dtype=np.float64).reshape(N_TERMS)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(N_TERMS)
        self.active = np.asarray(self.active, dtype=bool).reshape(N_TERMS)
        if np.any(self.losses < 0.0):
            raise ConfigurationError("loss terms must be nonnegative")

    @classmethod
    def from_terms(cls, terms: Mapping[str, float], weights=None) -> "LossBreakdown":
        losses = np.zeros(N_TERMS)
        active = np.zeros(N_TERMS, dtype=bool)
        for name, value in terms.items():
            losses[TERM_INDEX[name]] = float(ad._val(value))
            active[TERM_INDEX[name]] = True
        return cls(losses, np.ones(N_TERMS) if weights is None else weights, active)

    def __getitem__(self, name: str) -> float:
        return float(self.losses[TERM_INDEX[name]])

    def group(self, prefix: str) -> np.ndarray:
        return np.array([self.losses[k] for k, n in enumerate(TERM_NAMES) if TERM_GROUP[n] == prefix])

    L_PDE = property(lambda self: self.group("PDE"))
    L_IC = property(lambda self: self.group("IC"))
    L_ICv = property(lambda self: self.group("ICv"))
    L_NBC = property(lambda self: self.group("NBC"))
    L_DBC = property(lambda self: self.group("DBC"))

    @property
    def total(self) -> float:
        return composite_loss(self, self.weights)

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(TERM_NAMES, self.losses)}


def composite_loss(breakdown: LossBreakdown, weights) -> float:
    """Weighted sum of all 18 terms in fixed order."""
    w = np.asarray(weights, dtype=np.float64).reshape(N_TERMS)
    if np.any(~(w > 0.0)):
        raise BalancingError("loss weights must be positive")
    total = 0.0
    for wk, lk in zip(w, breakdown.losses):
        total += wk * lk
    return float(total)


def loss_terms(evaluate: Evaluator, colloc, problem) -> LossBreakdown:
    """Numeric loss breakdown for any field evaluator (network or exact)."""
    inputs = prepare_loss_inputs(colloc, problem)
    return LossBreakdown.from_terms(term_expressions(evaluate, inputs))
