"""Second-order input jets and a vectorised reverse-mode tape.

Input derivatives (gradient and Hessian with respect to ``x1, x2, x3, t``)
are pushed forward through the network as *jets*.  Parameter gradients of
any scalar built from those jets are obtained with a reverse sweep over a
``Tape`` that records array-level operations.

Packed jets are ``(C, width, N)`` arrays, ``C`` channels laid out by a
``JetLayout``: the value, a subset of the four first derivatives and a
subset of the ten distinct Hessian entries.  A point set only carries the
channels its loss terms read.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import ConfigurationError, NumericError, UsageError

N_INPUTS = 4
TIME = 3

ACTIVATIONS = ("sigmoid", "tanh", "gaussian", "swish", "arctan", "mish", "softplus", "relu")
_DISPLAY = {
    "sigmoid": "Sigmoid", "tanh": "Tanh", "gaussian": "Gaussian", "swish": "Swish",
    "arctan": "Arctan", "mish": "Mish", "softplus": "Softplus", "relu": "ReLU",
}

# process-wide counters for non-fatal numerical events
DIAGNOSTICS: Counter = Counter()


def canonical_activation(kind: str) -> str:
    key = str(kind).strip().lower()
    if key not in ACTIVATIONS:
        raise ConfigurationError(f"unknown activation {kind!r}; expected one of {list(_DISPLAY.values())}")
    return key


def activation_display_name(kind: str) -> str:
    return _DISPLAY[canonical_activation(kind)]


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def activation_derivatives(kind: str, z) -> np.ndarray:
    """Return ``stack([f, f', f'', f'''])`` evaluated at ``z``.

    Third derivatives are needed by the reverse sweep through the Hessian
    channels.
    """
    kind = canonical_activation(kind)
    z = np.asarray(z, dtype=np.float64)
    if kind == "tanh":
        t = np.tanh(z)
        d1 = 1.0 - t * t
        d2 = -2.0 * t * d1
        d3 = -2.0 * (d1 * d1 + t * d2)
        return np.stack([t, d1, d2, d3])
    if kind == "sigmoid":
        s = _sigmoid(z)
        d1 = s * (1.0 - s)
        d2 = d1 * (1.0 - 2.0 * s)
        d3 = d2 * (1.0 - 2.0 * s) - 2.0 * d1 * d1
        return np.stack([s, d1, d2, d3])
    if kind == "gaussian":
        g = np.exp(-z * z)
        return np.stack([g, -2.0 * z * g, (4.0 * z * z - 2.0) * g, (12.0 * z - 8.0 * z**3) * g])
    if kind == "arctan":
        r = 1.0 / (1.0 + z * z)
        return np.stack([np.arctan(z), r, -2.0 * z * r * r, (6.0 * z * z - 2.0) * r**3])
    if kind == "softplus":
        s = _sigmoid(z)
        d2 = s * (1.0 - s)
        return np.stack([np.logaddexp(0.0, z), s, d2, d2 * (1.0 - 2.0 * s)])
    if kind == "swish":
        s = _sigmoid(z)
        s1 = s * (1.0 - s)
        s2 = s1 * (1.0 - 2.0 * s)
        s3 = s2 * (1.0 - 2.0 * s) - 2.0 * s1 * s1
        return np.stack([z * s, s + z * s1, 2.0 * s1 + z * s2, 3.0 * s2 + z * s3])
    if kind == "mish":
        # f = z * g with g = tanh(softplus(z)); g' = (1 - g^2) * sigmoid(z)
        s = _sigmoid(z)
        s1 = s * (1.0 - s)
        s2 = s1 * (1.0 - 2.0 * s)
        g = np.tanh(np.logaddexp(0.0, z))
        q = 1.0 - g * g
        g1 = q * s
        g2 = -2.0 * g * g1 * s + q * s1
        g3 = -2.0 * s * g1 * g1 - 4.0 * g * s1 * g1 - 2.0 * g * s * g2 + q * s2
        return np.stack([z * g, g + z * g1, 2.0 * g1 + z * g2, 3.0 * g2 + z * g3])
    # relu: subgradient 0 at the kink, second and third derivatives vanish
    at_zero = int(np.count_nonzero(z == 0.0))
    if at_zero:
        DIAGNOSTICS["relu_at_zero"] += at_zero
    pos = (z > 0.0).astype(np.float64)
    zero = np.zeros_like(z)
    return np.stack([z * pos, pos, zero, zero])


@dataclass(frozen=True)
class JetLayout:
    """Which derivative channels a packed jet carries.

    ``dirs`` are input indices (0..2 space, 3 time) with a first-derivative
    channel; ``pairs`` are ``(a, b)`` with ``a <= b`` for Hessian channels.
    """

    dirs: tuple[int, ...] = ()
    pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        dirs = tuple(sorted(set(int(d) for d in self.dirs)))
        pairs = tuple(sorted(set((min(a, b), max(a, b)) for a, b in self.pairs)))
        if any(d < 0 or d >= N_INPUTS for d in dirs):
            raise ConfigurationError(f"jet directions out of range: {dirs}")
        for a, b in pairs:
            if a not in dirs or b not in dirs:
                raise ConfigurationError(f"Hessian pair {(a, b)} needs first-derivative channels {a} and {b}")
        object.__setattr__(self, "dirs", dirs)
        object.__setattr__(self, "pairs", pairs)

    @property
    def n_channels(self) -> int:
        return 1 + len(self.dirs) + len(self.pairs)

    def grad_channel(self, a: int) -> int:
        try:
            return 1 + self.dirs.index(a)
        except ValueError:
            raise ConfigurationError(f"jet layout has no first-derivative channel for input {a}") from None

    def hess_channel(self, a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        try:
            return 1 + len(self.dirs) + self.pairs.index(key)
        except ValueError:
            raise ConfigurationError(f"jet layout has no Hessian channel for {key}") from None

    @property
    def pair_factors(self) -> tuple[np.ndarray, np.ndarray]:
        pa = np.array([self.grad_channel(a) for a, _ in self.pairs], dtype=np.int64)
        pb = np.array([self.grad_channel(b) for _, b in self.pairs], dtype=np.int64)
        return pa, pb


FULL_LAYOUT = JetLayout(dirs=(0, 1, 2, 3), pairs=tuple(itertools.combinations_with_replacement(range(4), 2)))
VALUE_LAYOUT = JetLayout()


@dataclass
class Jet4:
    """Value, input gradient and symmetric input Hessian of a scalar field.

    Batched jets carry a leading point axis: ``value (N,)``, ``grad (N, 4)``,
    ``hess (N, 4, 4)``.
    """

    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.asarray(self.grad, dtype=np.float64)
        self.hess = np.asarray(self.hess, dtype=np.float64)
        if self.grad.shape != self.value.shape + (4,) or self.hess.shape != self.value.shape + (4, 4):
            raise ConfigurationError("Jet4 component shapes disagree")
        # symmetry by construction
        self.hess = 0.5 * (self.hess + np.swapaxes(self.hess, -1, -2))

    @classmethod
    def seed(cls, value, direction: int | None = None) -> "Jet4":
        value = np.asarray(value, dtype=np.float64)
        grad = np.zeros(value.shape + (4,))
        if direction is not None:
            grad[..., direction] = 1.0
        return cls(value, grad, np.zeros(value.shape + (4, 4)))

    def d(self, a: int):
        return self.grad[..., a]

    def dd(self, a: int, b: int):
        return self.hess[..., a, b]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.value).all() and np.isfinite(self.grad).all() and np.isfinite(self.hess).all())


def pack(jets: Sequence[Jet4], layout: JetLayout = FULL_LAYOUT) -> np.ndarray:
    """Stack ``m`` jets (each batched over ``N`` points) into ``(C, m, N)``."""
    vals = [np.atleast_1d(j.value) for j in jets]
    n = vals[0].shape[0]
    out = np.empty((layout.n_channels, len(jets), n))
    for k, j in enumerate(jets):
        g = j.grad.reshape(n, 4)
        h = j.hess.reshape(n, 4, 4)
        out[0, k] = vals[k]
        for a in layout.dirs:
            out[layout.grad_channel(a), k] = g[:, a]
        for a, b in layout.pairs:
            out[layout.hess_channel(a, b), k] = h[:, a, b]
    return out


def unpack(data: np.ndarray, layout: JetLayout = FULL_LAYOUT) -> list[Jet4]:
    """Inverse of :func:`pack`; channels missing from ``layout`` come back as 0."""
    _, m, n = data.shape
    jets = []
    for k in range(m):
        grad = np.zeros((n, 4))
        hess = np.zeros((n, 4, 4))
        for a in layout.dirs:
            grad[:, a] = data[layout.grad_channel(a), k]
        for a, b in layout.pairs:
            hess[:, a, b] = hess[:, b, a] = data[layout.hess_channel(a, b), k]
        jets.append(Jet4(data[0, k].copy(), grad, hess))
    return jets


# ---------------------------------------------------------------------------
# tape


class _Indexed:
    """Sparse adjoint contribution: ``value`` lands at ``index`` of the parent."""

    __slots__ = ("index", "value")

    def __init__(self, index, value):
        self.index = index
        self.value = value


class Var:
    """A node on a :class:`Tape` holding an ndarray value."""

    __slots__ = ("value", "tape", "index", "parents", "backward_fn", "forward_fn", "op")
    __array_ufunc__ = None  # numpy defers to our reflected operators

    def __init__(self, value, tape, parents=(), backward_fn=None, forward_fn=None, op="leaf"):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.forward_fn = forward_fn
        self.op = op
        self.index = tape._append(self)

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise NotImplementedError("division by a tape variable is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __getitem__(self, index):
        return take(self, index)


class Tape:
    """Records array operations in execution order for reverse sweeps.

    Use as a context manager; gradients can be requested once recording has
    finished.  Nodes are appended in creation order, which is a valid
    topological order, so the reverse sweep visits each node at most once.
    """

    def __init__(self):
        self.nodes: list[Var] = []
        self.recording = False
        self.finished = False
        self.last_visits = 0

    def __enter__(self):
        self.recording = True
        self.finished = False
        return self

    def __exit__(self, *exc):
        self.recording = False
        self.finished = exc[0] is None
        return False

    def _append(self, node) -> int:
        if not self.recording:
            raise UsageError("tape is not recording; open it with 'with Tape() as tape:'")
        self.nodes.append(node)
        return len(self.nodes) - 1

    def variable(self, value) -> Var:
        return Var(np.array(value, dtype=np.float64), self)

    def gradient(self, loss: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
        """Adjoints of scalar ``loss`` with respect to each node in ``wrt``."""
        if not self.finished:
            raise UsageError("gradient requested before the forward pass finished")
        if loss.tape is not self:
            raise UsageError("loss node belongs to another tape")
        if np.ndim(loss.value) != 0:
            raise UsageError(f"loss must be a scalar, got shape {loss.shape}")
        adj: list = [None] * (loss.index + 1)
        owned = [False] * (loss.index + 1)
        adj[loss.index] = np.ones(())
        visits = 0
        for i in range(loss.index, -1, -1):
            g = adj[i]
            if g is None:
                continue
            node = self.nodes[i]
            if node.backward_fn is None:
                continue
            visits += 1
            for parent, gp in zip(node.parents, node.backward_fn(g)):
                if parent is None or gp is None:
                    continue
                j = parent.index
                if isinstance(gp, _Indexed):
                    if adj[j] is None or not owned[j]:
                        base = np.zeros(np.shape(parent.value)) if adj[j] is None else np.array(adj[j], dtype=np.float64)
                        adj[j] = base
                        owned[j] = True
                    adj[j][gp.index] += gp.value
                elif adj[j] is None:
                    adj[j] = gp
                elif owned[j]:
                    adj[j] += gp
                else:
                    adj[j] = adj[j] + gp
                    owned[j] = True
        self.last_visits = visits
        out = []
        for v in wrt:
            g = adj[v.index] if v.index <= loss.index else None
            out.append(np.zeros(np.shape(v.value)) if g is None else np.broadcast_to(g, np.shape(v.value)).copy())
        return out

    def release(self) -> None:
        """Drop recorded nodes (breaks the node/tape reference cycle)."""
        for node in self.nodes:
            node.parents = ()
            node.backward_fn = node.forward_fn = None
        self.nodes = []
        self.finished = False

    def replay(self) -> list[np.ndarray]:
        """Recompute every node from the leaves; returns the new values."""
        values: list = [None] * len(self.nodes)
        for node in self.nodes:
            if node.forward_fn is None:
                values[node.index] = node.value
            else:
                values[node.index] = node.forward_fn(*[values[p.index] for p in node.parents])
        return values


def _tape_of(*args):
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _val(x):
    return x.value if isinstance(x, Var) else x


def _record(tape, value, inputs, backward_fn, forward_fn, op):
    parents = tuple(x if isinstance(x, Var) else None for x in inputs)
    return Var(value, tape, parents, backward_fn, forward_fn, op)


def add(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a + b
    sa, sb = np.shape(_val(a)), np.shape(_val(b))
    consts = (_val(a), _val(b))

    def fwd(*vals):
        it = iter(vals)
        x = next(it) if isinstance(a, Var) else consts[0]
        y = next(it) if isinstance(b, Var) else consts[1]
        return x + y

    def bwd(g):
        return (_unbroadcast(g, sa) if isinstance(a, Var) else None,
                _unbroadcast(g, sb) if isinstance(b, Var) else None)

    return _compact(_record(tape, _val(a) + _val(b), (a, b), bwd, fwd, "add"))


def _compact(node):
    # drop constant parents while keeping backward outputs aligned
    if all(p is not None for p in node.parents):
        return node
    keep = [i for i, p in enumerate(node.parents) if p is not None]
    inner = node.backward_fn
    node.parents = tuple(node.parents[i] for i in keep)

    def backward(g):
        grads = inner(g)
        return [grads[i] for i in keep]

    node.backward_fn = backward
    return node


def neg(a):
    if not isinstance(a, Var):
        return -a
    return _record(a.tape, -a.value, (a,), lambda g: (-g,), lambda x: -x, "neg")


def mul(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a * b
    va, vb = _val(a), _val(b)
    sa, sb = np.shape(va), np.shape(vb)
    if isinstance(a, Var) and isinstance(b, Var):
        def bwd(g):
            return _unbroadcast(g * b.value, sa), _unbroadcast(g * a.value, sb)
        return _record(tape, va * vb, (a, b), bwd, lambda x, y: x * y, "mul")
    var, const = (a, vb) if isinstance(a, Var) else (b, va)
    shape = np.shape(var.value)
    return _record(tape, va * vb, (var,), lambda g: (_unbroadcast(g * const, shape),),
                   lambda x: x * const, "scale")


def square(a):
    if not isinstance(a, Var):
        return a * a
    return _record(a.tape, a.value * a.value, (a,), lambda g: (2.0 * g * a.value,), lambda x: x * x, "square")


def total(a):
    """Sum over all entries (deterministic numpy pairwise order)."""
    if not isinstance(a, Var):
        return np.sum(a)
    shape = a.shape
    return _record(a.tape, np.sum(a.value), (a,), lambda g: (np.broadcast_to(g, shape),), np.sum, "sum")


def mean(a):
    if not isinstance(a, Var):
        return np.mean(a)
    shape = a.shape
    n = float(np.prod(shape)) if shape else 1.0
    return _record(a.tape, np.mean(a.value), (a,), lambda g: (np.broadcast_to(g / n, shape),), np.mean, "mean")


def take(a, index):
    if not isinstance(a, Var):
        return a[index]
    return _record(a.tape, a.value[index], (a,), lambda g: (_Indexed(index, g),), lambda x: x[index], "take")


def weighted_sum(terms: Sequence, weights: Sequence[float]):
    """``sum_k w_k * terms_k`` in a fixed order."""
    out = None
    for t, w in zip(terms, weights):
        piece = mul(t, float(w))
        out = piece if out is None else add(out, piece)
    return out


# ---------------------------------------------------------------------------
# jet layers


def _affine_forward(W, b, J):
    Z = np.matmul(W.T, J)
    Z[0] += b[:, None]
    return Z


def _check_finite(arr, what, layer):
    if not np.isfinite(arr).all():
        where = f" at layer {layer}" if layer is not None else ""
        raise NumericError(f"non-finite {what}{where}")


def _activation_table(kind: str, z: np.ndarray) -> np.ndarray:
    """Compiled equivalent of :func:`activation_derivatives` for 2-D blocks."""
    if kind == "relu":
        at_zero = int(np.count_nonzero(z == 0.0))
        if at_zero:
            DIAGNOSTICS["relu_at_zero"] += at_zero
    return _kernels.derivatives(ACTIVATIONS.index(kind), z)


def jet_affine(weights, bias, jets, *, layer: int | None = None, check: bool = True):
    """Affine map applied channel-wise; the bias only enters the value.

    ``jets`` is a packed ``(C, m, N)`` array, a tape ``Var`` of that shape, or
    a sequence of ``m`` :class:`Jet4` (returns a list of ``n`` Jet4).
    """
    if isinstance(jets, (list, tuple)):
        packed = pack(jets, FULL_LAYOUT)
        out = unpack(jet_affine(weights, bias, packed, layer=layer, check=check), FULL_LAYOUT)
        if np.ndim(jets[0].value) == 0:
            out = [Jet4(j.value[0], j.grad[0], j.hess[0]) for j in out]
        return out
    W, b, J = _val(weights), _val(bias), _val(jets)
    if W.ndim != 2 or b.shape != (W.shape[1],) or J.ndim != 3 or J.shape[1] != W.shape[0]:
        where = f" at layer {layer}" if layer is not None else ""
        raise ConfigurationError(
            f"affine dimension mismatch{where}: weights {W.shape}, bias {b.shape}, jets {J.shape}")
    if check:
        _check_finite(J, "input jet", layer)
    Z = _affine_forward(W, b, J)
    tape = _tape_of(weights, bias, jets)
    if tape is None:
        return Z

    def bwd(g):
        gJ = np.matmul(W, g) if isinstance(jets, Var) else None
        if isinstance(weights, Var):
            gW = np.zeros_like(W)
            for c in range(J.shape[0]):
                gW += J[c] @ g[c].T
        else:
            gW = None
        gb = g[0].sum(axis=1) if isinstance(bias, Var) else None
        return gW, gb, gJ

    def fwd(*vals):
        it = iter(vals)
        w = next(it) if isinstance(weights, Var) else W
        bb = next(it) if isinstance(bias, Var) else b
        jj = next(it) if isinstance(jets, Var) else J
        return _affine_forward(w, bb, jj)

    return _compact(_record(tape, Z, (weights, bias, jets), bwd, fwd, "jet_affine"))


def jet_activate(kind: str, z, layout: JetLayout = FULL_LAYOUT):
    """Apply activation ``kind`` to a jet (chain rule to second order).

    ``z`` may be a :class:`Jet4`, a packed ndarray or a tape ``Var``.
    """
    kind = canonical_activation(kind)
    if isinstance(z, Jet4):
        out = jet_activate(kind, pack([z], FULL_LAYOUT).reshape(FULL_LAYOUT.n_channels, 1, -1))
        jet = unpack(out, FULL_LAYOUT)[0]
        if np.ndim(z.value) == 0:
            jet = Jet4(jet.value[0], jet.grad[0], jet.hess[0])
        return jet
    Z = np.ascontiguousarray(_val(z), dtype=np.float64)
    if Z.shape[0] != layout.n_channels:
        raise ConfigurationError(f"jet has {Z.shape[0]} channels, layout expects {layout.n_channels}")
    ng = len(layout.dirs)
    pa, pb = layout.pair_factors
    S = _activation_table(kind, Z[0])
    Y = _kernels.activate_forward(Z, S, ng, pa, pb)
    if not isinstance(z, Var):
        return Y

    def bwd(g):
        return (_kernels.activate_backward(Z, S, ng, pa, pb, g),)

    def fwd(x):
        x = np.ascontiguousarray(x)
        return _kernels.activate_forward(x, _activation_table(kind, x[0]), ng, pa, pb)

    return _record(z.tape, Y, (z,), bwd, fwd, f"jet_{kind}")


def param_gradient(tape: Tape, loss_node: Var, params: Sequence[Var]) -> np.ndarray:
    """Flat gradient of ``loss_node`` over ``params`` in the given order."""
    grads = tape.gradient(loss_node, params)
    if not grads:
        return np.zeros(0)
    return np.concatenate([g.ravel() for g in grads])
