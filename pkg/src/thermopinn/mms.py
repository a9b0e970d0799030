"""Manufactured solutions: exact fields, consistent sources and boundary data,
and the error metrics used to score trained models.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import physics
from .autodiff import Jet4, JetLayout
from .errors import ConfigurationError
from .materials import (MaterialPoint, PhysicalConstants, PropertySpec, builtin_case_materials,
                        homogeneous_materials, material_point)
from .physics import FieldJets, SourceSample


@dataclass(frozen=True)
class ExactFields:
    """u_k = a [sin(x1+x2+x3) e^{-r_k t} + (sum of the other two coords) + c],
    T = cos x1 cos x2 cos x3 cos t + g (x1+x2+x3) + T_base."""

    amplitude: float = 0.001
    offset: float = 1e-4
    rates: tuple[float, float, float] = (1.0, 2.0, 3.0)
    slope: float = 18.0
    T_base: float = 200.0

    def displacement(self, k: int, points: np.ndarray) -> Jet4:
        x = np.atleast_2d(points)
        S = x[:, 0] + x[:, 1] + x[:, 2]
        r = self.rates[k]
        e = np.exp(-r * x[:, 3])
        A = self.amplitude
        sn, cs = np.sin(S), np.cos(S)
        n = len(x)
        value = A * (sn * e + S - x[:, k] + self.offset)
        grad = np.empty((n, 4))
        for a in range(3):
            grad[:, a] = A * (cs * e + (a != k))
        grad[:, 3] = -r * A * sn * e
        hess = np.empty((n, 4, 4))
        hess[:, :3, :3] = (-A * sn * e)[:, None, None]
        hess[:, :3, 3] = hess[:, 3, :3] = (-r * A * cs * e)[:, None]
        hess[:, 3, 3] = r * r * A * sn * e
        return Jet4(value, grad, hess)

    def temperature(self, points: np.ndarray) -> Jet4:
        x = np.atleast_2d(points)
        c = np.cos(x[:, :3])
        s = np.sin(x[:, :3])
        ct, st = np.cos(x[:, 3]), np.sin(x[:, 3])
        C = c[:, 0] * c[:, 1] * c[:, 2]
        n = len(x)
        value = C * ct + self.slope * (x[:, 0] + x[:, 1] + x[:, 2]) + self.T_base
        grad = np.empty((n, 4))
        hess = np.empty((n, 4, 4))
        for a in range(3):
            others = np.prod(np.delete(c, a, axis=1), axis=1)
            grad[:, a] = -s[:, a] * others * ct + self.slope
            hess[:, a, a] = -C * ct
            hess[:, a, 3] = hess[:, 3, a] = s[:, a] * others * st
            for b in range(a + 1, 3):
                third = c[:, 3 - a - b]
                hess[:, a, b] = hess[:, b, a] = s[:, a] * s[:, b] * third * ct
        grad[:, 3] = -C * st
        hess[:, 3, 3] = -C * ct
        return Jet4(value, grad, hess)

    def jets(self, points) -> FieldJets:
        pts = np.asarray(points, dtype=np.float64)
        return FieldJets(*(self.displacement(k, pts) for k in range(3)), self.temperature(pts))


def exact_jets(point, exact: ExactFields | None = None) -> FieldJets:
    """Analytic jets of the manufactured fields at ``(x1, x2, x3, t)`` rows."""
    return (exact or ExactFields()).jets(point)


BOUNDARY_KINDS = ("dirichlet-displacement", "dirichlet-temperature", "neumann-traction", "neumann-flux")


@dataclass
class ProblemData:
    """Sources, initial and boundary data derived from the exact fields."""

    specs: Mapping[str, PropertySpec]
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    exact: ExactFields = field(default_factory=ExactFields)
    case: str = "custom"
    check: bool = True

    @classmethod
    def for_case(cls, case: str, constants: PhysicalConstants | None = None, *, check: bool = True,
                 exact: ExactFields | None = None) -> "ProblemData":
        constants = constants or PhysicalConstants()
        specs = homogeneous_materials(constants) if case == "homogeneous" else builtin_case_materials(case, constants)
        return cls(specs, constants, exact or ExactFields(), case, check)

    def materials(self, points) -> MaterialPoint:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return material_point(self.specs, self.constants, pts[:, :3], check=self.check)

    def jets(self, points) -> FieldJets:
        return self.exact.jets(points)

    def sources(self, points) -> SourceSample:
        """f and s by applying the residual operators (sources zeroed) to the exact fields."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        jets = self.jets(pts)
        mat = self.materials(pts)
        f = np.stack([physics.mechanical_residual(i, jets, mat, None) for i in (1, 2, 3)], axis=-1)
        s = physics.thermal_residual(jets, mat, None, self.constants)
        return SourceSample(f, s)

    def initial_data(self, points):
        jets = self.jets(points)
        u = np.stack([j.value for j in jets.u], axis=-1)
        v = np.stack([j.d(3) for j in jets.u], axis=-1)
        return u, v, jets.T.value

    def dirichlet_data(self, points):
        jets = self.jets(points)
        return np.stack([j.value for j in jets.u], axis=-1), jets.T.value

    def neumann_data(self, points, normals):
        jets = self.jets(points)
        mat = self.materials(points)
        n = physics.check_unit_normals(normals)
        p = physics.traction(physics.stress(jets, mat), n)
        q = physics.heat_flux(jets, mat, n)
        return p, q

    def boundary_data(self, point, normal=None, kind: str = "dirichlet-temperature"):
        """Target value(s) for one boundary condition kind at ``point`` rows."""
        pts = np.atleast_2d(np.asarray(point, dtype=np.float64))
        single = np.ndim(point) == 1
        if kind == "dirichlet-displacement":
            out = self.dirichlet_data(pts)[0]
        elif kind == "dirichlet-temperature":
            out = self.dirichlet_data(pts)[1]
        elif kind in ("neumann-traction", "neumann-flux"):
            if normal is None:
                raise ConfigurationError(f"{kind} needs a normal")
            n = np.broadcast_to(np.asarray(normal, dtype=np.float64), pts[:, :3].shape)
            p, q = self.neumann_data(pts, n)
            out = p if kind == "neumann-traction" else q
        else:
            raise ConfigurationError(f"unknown boundary kind {kind!r}; expected one of {BOUNDARY_KINDS}")
        return out[0] if single else out


def derive_sources(point, case: str, constants: PhysicalConstants | None = None) -> SourceSample:
    return ProblemData.for_case(case, constants).sources(point)


# ---------------------------------------------------------------------------
# error metrics


def relative_error(exact: float, numerical: float) -> tuple[float, bool]:
    """``|exact - numerical| / |exact|``; at ``exact == 0`` the absolute error, flagged."""
    diff = abs(float(exact) - float(numerical))
    if exact == 0.0:
        return diff, True
    return diff / abs(float(exact)), False


def relative_errors(exact, numerical) -> tuple[np.ndarray, np.ndarray]:
    exact = np.asarray(exact, dtype=np.float64)
    numerical = np.asarray(numerical, dtype=np.float64)
    diff = np.abs(exact - numerical)
    flagged = exact == 0.0
    denom = np.where(flagged, 1.0, np.abs(exact))
    return diff / denom, flagged


def global_error(exact, numerical) -> float:
    """Relative L2 mismatch over all test nodes."""
    exact = np.asarray(exact, dtype=np.float64).ravel()
    numerical = np.asarray(numerical, dtype=np.float64).ravel()
    if exact.shape != numerical.shape:
        raise ConfigurationError(f"length mismatch: {exact.size} exact vs {numerical.size} numerical values")
    # scale by the largest magnitude first so the ratio is exact under common rescaling
    ref = np.max(np.abs(exact)) if exact.size else 0.0
    if ref == 0.0:
        raise ConfigurationError("global error undefined: exact values are all zero")
    return float(np.linalg.norm((exact - numerical) / ref) / np.linalg.norm(exact / ref))


STRESS_QUANTITIES = ("σ11", "σ22", "σ33")
FLUX_QUANTITIES = ("T,1", "T,2", "T,3")
TABLE_QUANTITIES = STRESS_QUANTITIES + FLUX_QUANTITIES
QUANTITIES = TABLE_QUANTITIES[:3] + ("σ12", "σ13", "σ23") + FLUX_QUANTITIES + ("u1", "u2", "u3", "T")
_ALIASES = {"s11": "σ11", "s22": "σ22", "s33": "σ33", "s12": "σ12", "s13": "σ13", "s23": "σ23",
            "sigma11": "σ11", "sigma22": "σ22", "sigma33": "σ33", "sigma12": "σ12", "sigma13": "σ13",
            "sigma23": "σ23", "T1": "T,1", "T2": "T,2", "T3": "T,3", "T_1": "T,1", "T_2": "T,2", "T_3": "T,3"}


def canonical_quantity(name: str) -> str:
    key = _ALIASES.get(name, name)
    if key not in QUANTITIES:
        raise ConfigurationError(f"unknown quantity {name!r}; expected one of {QUANTITIES}")
    return key


def quantities(jets: FieldJets, mat: MaterialPoint, names: Sequence[str]) -> dict[str, np.ndarray]:
    """Point values of the named stress, temperature-gradient and field quantities."""
    names = [canonical_quantity(n) for n in names]
    out = {}
    sig = None
    for name in names:
        if name.startswith("σ"):
            if sig is None:
                sig = physics.stress_components(jets, mat)
            out[name] = np.asarray(sig[int(name[1]) - 1][int(name[2]) - 1], dtype=np.float64)
        elif name.startswith("T,"):
            out[name] = np.asarray(jets.T.d(int(name[2]) - 1), dtype=np.float64)
        elif name == "T":
            out[name] = np.asarray(jets.T.value, dtype=np.float64)
        else:
            out[name] = np.asarray(jets.u[int(name[1]) - 1].value, dtype=np.float64)
    return out


EVAL_LAYOUT = JetLayout(dirs=(0, 1, 2))


def model_fields(model) -> Callable[[np.ndarray], FieldJets]:
    """Field evaluator backed by a trained :class:`network.ModelState`."""
    from .network import network_jets

    def evaluate(points):
        return FieldJets(*network_jets(model, points, (EVAL_LAYOUT,) * 4))

    return evaluate


def test_grid(colloc, n: int = 11) -> np.ndarray:
    """Training boundary points plus an ``n**3`` lattice inside the shape."""
    from .geometry import lattice_1d

    lo, hi = colloc.bounds
    axes = [lattice_1d(lo[i], hi[i], n) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    shape = getattr(colloc, "shape", None)
    if shape is not None:
        grid = grid[shape.interior_mask(grid)]
    elif len(colloc.interior_space):
        grid = colloc.interior_space
    return np.vstack([colloc.boundary_space, grid])


@dataclass
class ErrorReport:
    """Global errors per (quantity, time) plus per-point relative errors."""

    rows: list[tuple[str, float, float]]
    points: np.ndarray
    pointwise: dict[tuple[str, float], tuple[np.ndarray, np.ndarray]]
    metadata: dict = field(default_factory=dict)

    def table(self) -> dict[float, dict[str, float]]:
        out: dict = {}
        for q, t, e in self.rows:
            out.setdefault(t, {})[q] = e
        return out

    def get(self, quantity: str, time: float | None = None) -> float:
        quantity = canonical_quantity(quantity)
        for q, t, e in self.rows:
            if q == quantity and (time is None or np.isclose(t, time)):
                return e
        raise KeyError((quantity, time))

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["quantity", "time", "global_error"])
            for q, t, e in self.rows:
                w.writerow([q, repr(float(t)), repr(float(e))])
        return path

    def write_pointwise(self, path, time: float) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "x3", "quantity", "relative_error"])
            for (q, t), (rel, _flag) in self.pointwise.items():
                if not np.isclose(t, time):
                    continue
                for p, r in zip(self.points, rel):
                    w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), q, repr(float(r))])
        return path


def error_report(model, points: np.ndarray, times: Sequence[float], quantities_: Sequence[str],
                 problem: ProblemData) -> ErrorReport:
    """Compare a model (or any field evaluator) against the exact fields.

    ``model`` is a ModelState or a callable mapping ``(N, 4)`` points to
    :class:`FieldJets`.
    """
    names = [canonical_quantity(q) for q in quantities_]
    fields_of = model if callable(model) else model_fields(model)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))[:, :3]
    mat = problem.materials(points)
    rows, pointwise = [], {}
    for t in times:
        pts4 = np.column_stack([points, np.full(len(points), float(t))])
        exact = quantities(problem.jets(pts4), mat, names)
        approx = quantities(fields_of(pts4), mat, names)
        for q in names:
            rows.append((q, float(t), global_error(exact[q], approx[q])))
            pointwise[(q, float(t))] = relative_errors(exact[q], approx[q])
    return ErrorReport(rows, points, pointwise)
