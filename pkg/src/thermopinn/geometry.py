"""Collocation sets for the benchmark shapes and for imported point clouds.

Shapes are unions of axis-aligned boxes.  Box-like shapes (cube, coating)
use regular lattices; the comb uses scrambled Sobol samples with rejection.
Spatial points are paired with time either as a full tensor product with the
stations of a :class:`TimeGrid` or with seeded uniform random times.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import GeometryError, PrecisionError

FACES = ("x1-", "x1+", "x2-", "x2+", "x3-", "x3+")
REGIONS = ("interior", "dirichlet", "neumann")
NORMAL_TOL = 1e-9
MAX_SIZE_RATIO = 1e15


def _face(name: str) -> tuple[int, int]:
    """Axis and outward sign of a face label such as ``'x3+'``."""
    if name not in FACES:
        raise GeometryError(f"unknown face {name!r}; expected one of {FACES}")
    return int(name[1]) - 1, (1 if name[2] == "+" else -1)


@dataclass(frozen=True)
class TimeGrid:
    t0: float = 0.0
    tf: float = 1.0
    dt: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.t0) and np.isfinite(self.tf) and np.isfinite(self.dt)):
            raise GeometryError("time grid values must be finite")
        if self.dt <= 0.0:
            raise GeometryError(f"time step must be positive, got {self.dt}")
        if self.tf < self.t0:
            raise GeometryError(f"t_f={self.tf} precedes t0={self.t0}")
        n = (self.tf - self.t0) / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise GeometryError(f"time range [{self.t0}, {self.tf}] is not a multiple of dt={self.dt}")

    @property
    def n_stations(self) -> int:
        return int(round((self.tf - self.t0) / self.dt)) + 1

    @property
    def stations(self) -> np.ndarray:
        s = self.t0 + self.dt * np.arange(self.n_stations)
        s[-1] = self.tf
        return s

    @classmethod
    def single(cls, t: float = 0.0) -> "TimeGrid":
        return cls(t, t, 1.0)


# ---------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise GeometryError("boxes are three-dimensional")
        if not all(h > l for l, h in zip(lo, hi)):
            raise GeometryError(f"degenerate box extent lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, x: np.ndarray, tol: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= np.array(self.lo) - tol) & (x <= np.array(self.hi) + tol), axis=1)

    def strictly_contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x > np.array(self.lo)) & (x < np.array(self.hi)), axis=1)

    def face_area(self, face: str) -> float:
        axis, _ = _face(face)
        ext = np.subtract(self.hi, self.lo)
        return float(np.prod(np.delete(ext, axis)))


@dataclass(frozen=True)
class Shape:
    """Union of axis-aligned boxes with a bounding box and a scale."""

    boxes: tuple[Box, ...]

    @property
    def lo(self) -> np.ndarray:
        return np.min([b.lo for b in self.boxes], axis=0)

    @property
    def hi(self) -> np.ndarray:
        return np.max([b.hi for b in self.boxes], axis=0)

    @property
    def scale(self) -> float:
        return float(np.max(self.hi - self.lo))

    def contains(self, x, tol: float | None = None) -> np.ndarray:
        tol = 1e-12 * self.scale if tol is None else tol
        x = np.atleast_2d(x)
        out = np.zeros(len(x), dtype=bool)
        for b in self.boxes:
            out |= b.contains(x, tol)
        return out

    def interior_mask(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros(len(x), dtype=bool)
        for b in self.boxes:
            out |= b.strictly_contains(x)
        return out


# ---------------------------------------------------------------------------
# collocation sets


@dataclass
class CollocationSet:
    """Space-time sample points.  Rows are ``(x1, x2, x3, t)``."""

    interior: np.ndarray
    initial: np.ndarray
    dirichlet: np.ndarray
    neumann: np.ndarray
    neumann_normals: np.ndarray
    neumann_region: np.ndarray
    time: TimeGrid
    interior_space: np.ndarray
    boundary_space: np.ndarray
    boundary_kind: np.ndarray
    boundary_normals: np.ndarray
    bounds: tuple[np.ndarray, np.ndarray]
    metadata: dict = field(default_factory=dict)
    shape: Shape | None = None

    def __post_init__(self):
        n = self.neumann_normals
        if len(n) and np.any(np.abs(np.linalg.norm(n, axis=1) - 1.0) > NORMAL_TOL):
            raise GeometryError("Neumann normals must be unit length")
        for name in ("interior", "initial", "dirichlet", "neumann"):
            t = getattr(self, name)[:, 3]
            if len(t) and (t.min() < self.time.t0 - 1e-12 or t.max() > self.time.tf + 1e-12):
                raise GeometryError(f"{name} times fall outside [{self.time.t0}, {self.time.tf}]")

    @property
    def counts(self) -> dict[str, int]:
        return {"N_PDE": len(self.interior), "N_IC": len(self.initial), "N_ICv": len(self.initial),
                "N_NBC": len(self.neumann), "N_DBC": len(self.dirichlet)}

    @property
    def spatial_counts(self) -> tuple[int, int]:
        return len(self.interior_space), len(self.boundary_space)

    def time_bounds(self) -> tuple[float, float]:
        return self.time.t0, self.time.tf

    def input_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.bounds
        return np.append(lo, self.time.t0), np.append(hi, self.time.tf)


def tensor_times(points: np.ndarray, stations: np.ndarray) -> np.ndarray:
    """Every spatial point paired with every station (station-major order)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return np.zeros((0, 4))
    reps = np.tile(points, (len(stations), 1))
    return np.column_stack([reps, np.repeat(stations, len(points))])


def random_interior_times(points, time_range, seed: int, times_per_point: int = 1) -> np.ndarray:
    """Pair each spatial point with ``times_per_point`` uniform times in the range."""
    t0, tf = (float(v) for v in time_range)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    reps = np.tile(points, (times_per_point, 1))
    t = rng.uniform(t0, tf, size=len(reps)) if tf > t0 else np.full(len(reps), t0)
    return np.column_stack([reps, t])


def _assemble(interior_space, boundary_space, kind, normals, time: TimeGrid, bounds,
              pairing: str = "tensor", seed: int = 0, times_per_point: int = 1,
              metadata: dict | None = None, shape: Shape | None = None) -> CollocationSet:
    kind = np.asarray(kind)
    d_mask = kind == "dirichlet"
    n_mask = kind == "neumann"
    if pairing == "tensor":
        pair = lambda pts, _k: tensor_times(pts, time.stations)
    elif pairing == "random":
        pair = lambda pts, k: random_interior_times(pts, (time.t0, time.tf), seed + k, times_per_point)
    else:
        raise GeometryError(f"unknown time pairing {pairing!r}")
    nrm = normals[n_mask]
    n_rep = len(pair(boundary_space[n_mask], 2)) // max(1, int(n_mask.sum())) if n_mask.any() else 0
    all_space = np.vstack([interior_space, boundary_space]) if len(boundary_space) else interior_space
    initial = np.column_stack([all_space, np.full(len(all_space), time.t0)])
    return CollocationSet(
        interior=pair(interior_space, 0),
        initial=initial,
        dirichlet=pair(boundary_space[d_mask], 1),
        neumann=pair(boundary_space[n_mask], 2),
        neumann_normals=np.tile(nrm, (n_rep, 1)) if n_rep else np.zeros((0, 3)),
        neumann_region=np.tile(kind[n_mask], n_rep) if n_rep else np.zeros(0, dtype="<U9"),
        time=time,
        interior_space=interior_space,
        boundary_space=boundary_space,
        boundary_kind=kind,
        boundary_normals=normals,
        bounds=bounds,
        metadata=dict(metadata or {}, pairing=pairing),
        shape=shape,
    )


def lattice_1d(lo: float, hi: float, n: int) -> np.ndarray:
    """``n`` interior nodes of ``[lo, hi]`` at ``(k + 1) / (n + 1)``."""
    return lo + (hi - lo) * (np.arange(1, n + 1) / (n + 1))


def _box_lattices(lo, hi, grid):
    axes = [lattice_1d(lo[i], hi[i], grid[i]) for i in range(3)]
    interior = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    pts, names, normals = [], [], []
    for face in FACES:
        axis, sign = _face(face)
        a, b = [i for i in range(3) if i != axis]
        A, B = np.meshgrid(axes[a], axes[b], indexing="ij")
        p = np.empty((A.size, 3))
        p[:, a] = A.ravel()
        p[:, b] = B.ravel()
        p[:, axis] = hi[axis] if sign > 0 else lo[axis]
        nvec = np.zeros(3)
        nvec[axis] = sign
        pts.append(p)
        names += [face] * len(p)
        normals.append(np.tile(nvec, (len(p), 1)))
    return interior, np.vstack(pts), np.array(names), np.vstack(normals)


def _bc_kinds(face_names: np.ndarray, bc_assignment: Mapping[str, str] | None) -> np.ndarray:
    bc = {f: "dirichlet" for f in FACES}
    for face, kind in (bc_assignment or {}).items():
        _face(face)
        if kind not in ("dirichlet", "neumann"):
            raise GeometryError(f"face {face}: boundary kind must be dirichlet or neumann, got {kind!r}")
        bc[face] = kind
    return np.array([bc[f] for f in face_names])


def sample_box(extents: Sequence[Sequence[float]] = ((0, 1), (0, 1), (0, 1)),
               grid: Sequence[int] = (9, 9, 9), time: TimeGrid | None = None,
               bc_assignment: Mapping[str, str] | None = None) -> CollocationSet:
    """Regular interior lattice plus the matching lattice on each face."""
    time = time or TimeGrid(0.0, 1.0, 0.1)
    lo = np.array([float(e[0]) for e in extents])
    hi = np.array([float(e[1]) for e in extents])
    Box(tuple(lo), tuple(hi))  # validates extents
    grid = tuple(int(g) for g in grid)
    if len(grid) != 3 or min(grid) < 1:
        raise GeometryError(f"grid counts must be three positive integers, got {grid}")
    interior, bpts, faces, normals = _box_lattices(lo, hi, grid)
    kinds = _bc_kinds(faces, bc_assignment)
    return _assemble(interior, bpts, kinds, normals, time, (lo, hi),
                     metadata={"shape": "box", "grid": list(grid)}, shape=Shape((Box(tuple(lo), tuple(hi)),)))


def sample_coating(size_ratio: float, grid: Sequence[int] = (9, 9, 4), time: TimeGrid | None = None,
                   bc_assignment: Mapping[str, str] | None = None) -> CollocationSet:
    """Unit square slab of thickness ``1 / size_ratio``; top face Neumann by default."""
    size_ratio = float(size_ratio)
    if not np.isfinite(size_ratio) or size_ratio < 1.0:
        raise GeometryError(f"size_ratio must be >= 1, got {size_ratio}")
    if size_ratio > MAX_SIZE_RATIO:
        raise PrecisionError(
            f"size_ratio {size_ratio:g} exceeds {MAX_SIZE_RATIO:g}; the thickness is no longer resolvable in float64")
    bc = {"x3+": "neumann"} if bc_assignment is None else bc_assignment
    # lattices are built on the unit cube, then x3 is scaled, so every ratio shares the parametric set
    cs = sample_box(((0, 1), (0, 1), (0, 1)), grid, time, bc)
    h = 1.0 / size_ratio
    for arr in (cs.interior, cs.initial, cs.dirichlet, cs.neumann, cs.interior_space, cs.boundary_space):
        arr[:, 2] *= h
    cs.bounds = (np.zeros(3), np.array([1.0, 1.0, h]))
    cs.shape = Shape((Box((0.0, 0.0, 0.0), (1.0, 1.0, h)),))
    cs.metadata.update(shape="coating", size_ratio=size_ratio)
    return cs


@dataclass(frozen=True)
class CombLayout:
    length: float = 6.44e-3
    width: float = 2.32e-3
    height: float = 2.0e-4
    spine_width: float = 1.16e-3
    n_teeth: int = 4
    tooth_width: float | None = None
    dirichlet_from: float = 1.16e-3

    def boxes(self) -> tuple[Box, ...]:
        L, W, H, s = self.length, self.width, self.height, self.spine_width
        if not 0.0 < s < W:
            raise GeometryError("spine width must lie strictly inside the comb width")
        if self.n_teeth < 1:
            raise GeometryError("a comb needs at least one tooth")
        # teeth of equal width separated by equal gaps, first and last flush with the ends
        w = self.tooth_width or L / (2 * self.n_teeth - 1)
        if self.n_teeth > 1:
            pitch = (L - w) / (self.n_teeth - 1)
            if pitch <= w:
                raise GeometryError(f"comb teeth overlap: width {w:g} with pitch {pitch:g}")
        else:
            pitch = 0.0
        if w > L:
            raise GeometryError("tooth wider than the comb")
        spine = Box((0.0, W - s, 0.0), (L, W, H))
        teeth = tuple(Box((k * pitch, 0.0, 0.0), (k * pitch + w, W - s, H)) for k in range(self.n_teeth))
        return (spine,) + teeth


def _sobol(dim: int, seed: int):
    return qmc.Sobol(d=dim, scramble=True, seed=np.random.default_rng(seed))


def _draw(sampler, n_needed, accept, max_rounds: int = 24):
    out = []
    have = 0
    m = max(4, int(np.ceil(np.log2(max(n_needed, 2)))))
    for _ in range(max_rounds):
        u = sampler.random_base2(m)
        pts = accept(u)
        out.append(pts)
        have += len(pts)
        if have >= n_needed:
            return np.vstack(out)[:n_needed]
    raise GeometryError("could not place the requested number of points")


def _surface_pieces(shape: Shape):
    """Every box face with its area, normal and outward-probe offset."""
    pieces = []
    for b in shape.boxes:
        for face in FACES:
            axis, sign = _face(face)
            pieces.append((b, axis, sign, b.face_area(face)))
    return pieces


def sample_union(shape: Shape, n_interior: int, n_boundary: int, seed: int):
    """Quasi-random interior and surface samples of a box union."""
    lo, hi = shape.lo, shape.hi
    interior = _draw(_sobol(3, seed), n_interior,
                     lambda u: (p := lo + u * (hi - lo))[shape.interior_mask(p)])
    pieces = _surface_pieces(shape)
    areas = np.array([p[3] for p in pieces])
    cum = np.cumsum(areas) / areas.sum()
    probe = 1e-9 * shape.scale

    def accept(u):
        idx = np.minimum(np.searchsorted(cum, u[:, 0], side="right"), len(pieces) - 1)
        pts, nrm = np.empty((len(u), 3)), np.zeros((len(u), 3))
        for k, (b, axis, sign, _) in enumerate(pieces):
            sel = idx == k
            if not sel.any():
                continue
            tang = [i for i in range(3) if i != axis]
            for col, i in zip((1, 2), tang):
                pts[sel, i] = b.lo[i] + u[sel, col] * (b.hi[i] - b.lo[i])
            pts[sel, axis] = b.hi[axis] if sign > 0 else b.lo[axis]
            nrm[sel, axis] = sign
        # a face point is on the union's surface only if stepping outward leaves the union
        outside = ~shape.contains(pts + probe * nrm, tol=0.0)
        return np.hstack([pts, nrm])[outside]

    surf = _draw(_sobol(3, seed + 1), n_boundary, accept)
    return interior, surf[:, :3], surf[:, 3:]


def sample_comb(layout: CombLayout | None = None, n_interior: int = 2228, n_boundary: int = 4043,
                time: TimeGrid | None = None, seed: int = 0, times_per_point: int = 1,
                bc_assignment: str | None = None) -> CollocationSet:
    """Spine plus teeth; Dirichlet where ``x2 >= dirichlet_from``, Neumann elsewhere."""
    layout = layout or CombLayout()
    shape = Shape(layout.boxes())
    time = time or TimeGrid(0.0, 2.0, 0.2)
    interior, bpts, normals = sample_union(shape, n_interior, n_boundary, seed)
    if bc_assignment not in (None, "x2-split"):
        raise GeometryError(f"comb boundary assignment must be 'x2-split', got {bc_assignment!r}")
    kinds = np.where(bpts[:, 1] >= layout.dirichlet_from, "dirichlet", "neumann")
    return _assemble(interior, bpts, kinds, normals, time, (shape.lo, shape.hi), pairing="random",
                     seed=seed, times_per_point=times_per_point,
                     metadata={"shape": "comb", "size_ratio": layout.length / layout.height}, shape=shape)


# ---------------------------------------------------------------------------
# point clouds

CSV_HEADER = ("x1", "x2", "x3", "region", "nx", "ny", "nz")


def write_point_cloud(path, colloc: CollocationSet) -> Path:
    """Spatial points with region tags; normals are written for Neumann rows only."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for p in colloc.interior_space:
            w.writerow([repr(float(v)) for v in p] + ["interior", "0", "0", "0"])
        for p, kind, n in zip(colloc.boundary_space, colloc.boundary_kind, colloc.boundary_normals):
            nn = [repr(float(v)) for v in n] if kind == "neumann" else ["0", "0", "0"]
            w.writerow([repr(float(v)) for v in p] + [str(kind)] + nn)
    return path


def load_point_cloud(path, time: TimeGrid | None = None) -> CollocationSet:
    """Read ``x1,x2,x3,region,nx,ny,nz`` rows into a tensor-paired CollocationSet."""
    path = Path(path)
    if not path.exists():
        raise GeometryError(f"point cloud {path} does not exist")
    time = time or TimeGrid.single(0.0)
    interior, bpts, kinds, normals = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise GeometryError(f"{path}:1: header must be {','.join(CSV_HEADER)}")
        for line, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 7:
                raise GeometryError(f"{path}:{line}: expected 7 fields, got {len(row)}")
            try:
                x = [float(v) for v in row[:3]]
                n = [float(v) for v in row[4:]]
            except ValueError as exc:
                raise GeometryError(f"{path}:{line}: {exc}") from None
            region = row[3].strip().lower()
            if region not in REGIONS:
                raise GeometryError(f"{path}:{line}: unknown region tag {row[3]!r}")
            if not np.isfinite(x + n).all():
                raise GeometryError(f"{path}:{line}: non-finite value")
            if region == "interior":
                interior.append(x)
                continue
            if region == "neumann" and abs(np.linalg.norm(n) - 1.0) > NORMAL_TOL:
                raise GeometryError(f"{path}:{line}: normal {n} is not unit length")
            bpts.append(x)
            kinds.append(region)
            normals.append(n if region == "neumann" else [0.0, 0.0, 0.0])
    interior = np.array(interior, dtype=np.float64).reshape(-1, 3)
    bpts = np.array(bpts, dtype=np.float64).reshape(-1, 3)
    everything = np.vstack([interior, bpts])
    if len(everything) == 0:
        raise GeometryError(f"{path}: no points")
    bounds = (everything.min(axis=0), everything.max(axis=0))
    return _assemble(interior, bpts, np.array(kinds, dtype="<U9"), np.array(normals).reshape(-1, 3), time,
                     bounds, metadata={"shape": "point-cloud", "path": str(path)})
