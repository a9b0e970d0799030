"""Fully-connected networks for u1, u2, u3 and T, evaluated in jet mode."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import FULL_LAYOUT, Jet4, JetLayout
from .errors import ConfigurationError, NumericError

FIELD_NAMES = ("u1", "u2", "u3", "T")
CHECKPOINT_FORMAT = "thermopinn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ParamSet:
    """Weights ``W[l]`` of shape ``(fan_in, fan_out)`` and biases ``b[l]``.

    The last layer is affine; every other layer applies ``activation``.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str
    network_id: int = 1

    def __post_init__(self):
        weights = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        biases = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "activation", ad.canonical_activation(self.activation))
        if len(weights) == 0 or len(weights) != len(biases):
            raise ConfigurationError("ParamSet needs one bias per weight matrix")
        if weights[0].shape[0] != ad.N_INPUTS or weights[-1].shape[1] != 1:
            raise ConfigurationError(f"network must map {ad.N_INPUTS} inputs to 1 output")
        for l, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigurationError(f"layer {l}: weight {w.shape} and bias {b.shape} disagree")
            if l and weights[l - 1].shape[1] != w.shape[0]:
                raise ConfigurationError(f"layer {l}: input width {w.shape[0]} != previous output {weights[l - 1].shape[1]}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericError(f"non-finite parameters in layer {l} of network {self.network_id}")
        if self.network_id not in (1, 2, 3, 4):
            raise ConfigurationError(f"network_id must be 1..4, got {self.network_id}")

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_weights(self) -> int:
        return sum(w.size for w in self.weights)

    @property
    def n_biases(self) -> int:
        return sum(b.size for b in self.biases)

    @property
    def size(self) -> int:
        return self.n_weights + self.n_biases

    def arrays(self) -> list[np.ndarray]:
        """Parameters in canonical order ``W0, b0, W1, b1, ...``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "ParamSet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size:
            raise ConfigurationError(f"expected {self.size} parameters, got {vec.size}")
        ws, bs, k = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(vec[k:k + w.size].reshape(w.shape))
            k += w.size
            bs.append(vec[k:k + b.size].copy())
            k += b.size
        return ParamSet(tuple(ws), tuple(bs), self.activation, self.network_id)


def init_params(hidden_layers: int, neurons_per_layer: int, activation: str, seed: int,
                network_id: int = 1) -> ParamSet:
    """Glorot-uniform weights and zero biases for a ``4 -> ... -> 1`` network."""
    if hidden_layers < 1 or neurons_per_layer < 1:
        raise ConfigurationError("hidden_layers and neurons_per_layer must be >= 1")
    rng = np.random.default_rng(seed)
    widths = [ad.N_INPUTS] + [neurons_per_layer] * hidden_layers + [1]
    ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return ParamSet(tuple(ws), tuple(bs), activation, network_id)


@dataclass(frozen=True)
class InputNormalization:
    """Per-input affine map ``xi = scale * x + shift`` applied before layer 0."""

    scale: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        scale = np.array(self.scale, dtype=np.float64).reshape(ad.N_INPUTS)
        shift = np.array(self.shift, dtype=np.float64).reshape(ad.N_INPUTS)
        if not (np.isfinite(scale).all() and np.isfinite(shift).all()) or np.any(scale == 0.0):
            raise ConfigurationError("input normalization must have finite, nonzero scales")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "shift", shift)

    @classmethod
    def identity(cls) -> "InputNormalization":
        return cls(np.ones(ad.N_INPUTS), np.zeros(ad.N_INPUTS))

    @classmethod
    def from_bounds(cls, lo, hi, isotropic: bool = False) -> "InputNormalization":
        """Map each input interval ``[lo, hi]`` onto ``[-1, 1]``.

        With ``isotropic`` the three spatial axes share the scale of the widest
        one, so a thin direction keeps its physical aspect instead of being
        stretched; time is always mapped on its own.
        """
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        width = hi - lo
        if isotropic:
            width = np.append(np.full(3, width[:3].max()), width[3])
        # a degenerate interval (e.g. a single time station) is left unscaled
        safe = np.where(width > 0.0, width, 2.0)
        return cls(2.0 / safe, -(hi + lo) / safe)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points * self.scale + self.shift


@dataclass(frozen=True)
class ModelState:
    """The four coupled networks plus their input/output conditioning."""

    params: tuple[ParamSet, ParamSet, ParamSet, ParamSet]
    input_norm: InputNormalization = field(default_factory=InputNormalization.identity)
    output_scale: np.ndarray = field(default_factory=lambda: np.ones(4))
    output_shift: np.ndarray = field(default_factory=lambda: np.zeros(4))
    seed: int = 0

    def __post_init__(self):
        if len(self.params) != 4:
            raise ConfigurationError("a model has exactly four networks")
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "output_scale", np.array(self.output_scale, dtype=np.float64).reshape(4))
        object.__setattr__(self, "output_shift", np.array(self.output_shift, dtype=np.float64).reshape(4))
        if np.any(self.output_scale == 0.0):
            raise ConfigurationError("output scales must be nonzero")

    @property
    def sizes(self) -> list[int]:
        return [p.size for p in self.params]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.flat() for p in self.params])

    def with_flat(self, vec: np.ndarray) -> "ModelState":
        parts, k = [], 0
        for p in self.params:
            parts.append(p.with_flat(vec[k:k + p.size]))
            k += p.size
        return ModelState(tuple(parts), self.input_norm, self.output_scale, self.output_shift, self.seed)


def build_model(hidden_layers: int, neurons_per_layer: int, activation: str, seed: int,
                input_norm: InputNormalization | None = None, output_scale=None, output_shift=None) -> ModelState:
    """Four networks sharing one architecture, seeded independently from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(4)
    params = tuple(
        init_params(hidden_layers, neurons_per_layer, activation,
                    int(child.generate_state(1)[0]), network_id=i + 1)
        for i, child in enumerate(children)
    )
    return ModelState(
        params,
        input_norm or InputNormalization.identity(),
        np.ones(4) if output_scale is None else output_scale,
        np.zeros(4) if output_shift is None else output_shift,
        seed,
    )


def seed_jets(points: np.ndarray, layout: JetLayout, norm: InputNormalization | None = None) -> np.ndarray:
    """Input jets ``(C, 4, N)`` for physical points ``(N, 4)``.

    The normalization scales are folded into the first-derivative seeds so the
    network returns derivatives with respect to physical coordinates.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if not np.isfinite(points).all():
        raise NumericError("non-finite input point")
    norm = norm or InputNormalization.identity()
    n = points.shape[0]
    J = np.zeros((layout.n_channels, ad.N_INPUTS, n))
    J[0] = norm.apply(points).T
    for a in layout.dirs:
        J[layout.grad_channel(a), a, :] = norm.scale[a]
    return J


def propagate(weights: Sequence, biases: Sequence, activation: str, J, layout: JetLayout):
    """Push packed jets through the layers; works on arrays or tape variables."""
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        J = ad.jet_affine(w, b, J, layer=l, check=False)
        if l < last:
            J = ad.jet_activate(activation, J, layout)
    return J


def _diagnose(params: ParamSet, J, layout: JetLayout):
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        J = ad.jet_affine(w, b, J, layer=l, check=True)
        if not np.isfinite(J).all():
            raise NumericError(f"non-finite jet after layer {l} of network {params.network_id}")
        if l < len(params.weights) - 1:
            J = ad.jet_activate(params.activation, J, layout)
    raise NumericError(f"non-finite output of network {params.network_id}")


class NetworkJet:
    """Accessor over a packed single-output jet with output affine scaling.

    ``data`` is ``(C, 1, N)`` (array or tape variable).  Values are
    ``shift + scale * net`` and derivatives are scaled by ``scale``.
    """

    def __init__(self, data, layout: JetLayout, scale: float = 1.0, shift: float = 0.0):
        self.data = data
        self.layout = layout
        self.scale = float(scale)
        self.shift = float(shift)
        self._cache: dict = {}

    def _channel(self, c: int, offset: float = 0.0):
        if c not in self._cache:
            piece = ad.take(self.data, (c, 0)) * self.scale
            self._cache[c] = piece + offset if offset else piece
        return self._cache[c]

    @property
    def value(self):
        return self._channel(0, self.shift)

    def d(self, a: int):
        return self._channel(self.layout.grad_channel(a))

    def dd(self, a: int, b: int):
        return self._channel(self.layout.hess_channel(a, b))

    def to_jet4(self) -> Jet4:
        if isinstance(self.data, ad.Var):
            raise TypeError("to_jet4 needs a numeric jet")
        jet = ad.unpack(self.data, self.layout)[0]
        return Jet4(jet.value * self.scale + self.shift, jet.grad * self.scale, jet.hess * self.scale)


def forward_jet(params: ParamSet, point, *, norm: InputNormalization | None = None,
                layout: JetLayout = FULL_LAYOUT, scale: float = 1.0, shift: float = 0.0) -> Jet4:
    """Value, input gradient and input Hessian of one network at physical point(s).

    ``point`` is ``(4,)`` for a single jet or ``(N, 4)`` for a batch.
    """
    pts = np.asarray(point, dtype=np.float64)
    single = pts.ndim == 1
    J = seed_jets(pts, layout, norm)
    out = propagate(params.weights, params.biases, params.activation, J, layout)
    if not np.isfinite(out).all():
        _diagnose(params, J, layout)
    jet = NetworkJet(out, layout, scale, shift).to_jet4()
    if single:
        return Jet4(jet.value[0], jet.grad[0], jet.hess[0])
    return jet


class TapeParams:
    """Tape variables for the four ParamSets of a model."""

    def __init__(self, tape: ad.Tape, model: ModelState):
        self.model = model
        self.nets = [[tape.variable(a) for a in p.arrays()] for p in model.params]

    def of(self, net: int) -> list[ad.Var]:
        return self.nets[net]

    def all(self) -> list[ad.Var]:
        return [v for net in self.nets for v in net]


def network_jets(model: ModelState, points: np.ndarray, layouts: Sequence[JetLayout],
                 tape_params: TapeParams | None = None, nets: Sequence[int] = (0, 1, 2, 3)) -> list:
    """Evaluate networks ``nets`` at ``points``; returns :class:`NetworkJet` per net.

    Entries for networks not listed in ``nets`` are ``None``.
    """
    out: list = [None] * 4
    for i in nets:
        p = model.params[i]
        J = seed_jets(points, layouts[i], model.input_norm)
        if tape_params is None:
            W, B = p.weights, p.biases
        else:
            vars_ = tape_params.of(i)
            W, B = vars_[0::2], vars_[1::2]
        data = propagate(W, B, p.activation, J, layouts[i])
        if not np.isfinite(ad._val(data)).all():
            _diagnose(p, J, layouts[i])
        out[i] = NetworkJet(data, layouts[i], model.output_scale[i], model.output_shift[i])
    return out


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model: ModelState
    iteration: int = 0
    optimizer: dict | None = None
    metadata: dict = field(default_factory=dict)


def _le(a) -> np.ndarray:
    arr = np.asarray(a)
    if arr.dtype.kind == "f":
        return arr.astype("<f8")
    if arr.dtype.kind in "iu":
        return arr.astype("<i8")
    return arr


def save_checkpoint(path, model: ModelState, *, iteration: int = 0, optimizer: dict | None = None,
                    metadata: dict | None = None) -> Path:
    """Write a versioned, field-named ``.npz`` checkpoint (little-endian)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = {
        "format": np.array(CHECKPOINT_FORMAT),
        "version": _le(CHECKPOINT_VERSION),
        "iteration": _le(iteration),
        "seed": _le(model.seed),
        "input_scale": _le(model.input_norm.scale),
        "input_shift": _le(model.input_norm.shift),
        "output_scale": _le(model.output_scale),
        "output_shift": _le(model.output_shift),
        "metadata": np.array(json.dumps(metadata or {}, sort_keys=True)),
    }
    for i, p in enumerate(model.params, start=1):
        data[f"net{i}/activation"] = np.array(p.activation)
        data[f"net{i}/n_layers"] = _le(len(p.weights))
        for l, (w, b) in enumerate(zip(p.weights, p.biases)):
            data[f"net{i}/W{l}"] = _le(w)
            data[f"net{i}/b{l}"] = _le(b)
    if optimizer is not None:
        for key, value in optimizer.items():
            data[f"optimizer/{key}"] = _le(value)
    with open(path, "wb") as fh:
        np.savez(fh, **data)
    return path


def load_checkpoint(path) -> Checkpoint:
    with np.load(Path(path), allow_pickle=False) as z:
        if "format" not in z or str(z["format"]) != CHECKPOINT_FORMAT:
            raise ConfigurationError(f"{path} is not a thermopinn checkpoint")
        version = int(z["version"])
        if version != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {version}")
        params = []
        for i in range(1, 5):
            n = int(z[f"net{i}/n_layers"])
            params.append(ParamSet(
                tuple(z[f"net{i}/W{l}"].astype(np.float64) for l in range(n)),
                tuple(z[f"net{i}/b{l}"].astype(np.float64) for l in range(n)),
                str(z[f"net{i}/activation"]), i))
        model = ModelState(
            tuple(params),
            InputNormalization(z["input_scale"], z["input_shift"]),
            z["output_scale"], z["output_shift"], int(z["seed"]))
        optimizer = {k.split("/", 1)[1]: z[k].astype(np.float64) if z[k].dtype.kind == "f" else z[k]
                     for k in z.files if k.startswith("optimizer/")}
        return Checkpoint(model, int(z["iteration"]), optimizer or None, json.loads(str(z["metadata"])))
