"""Adaptive loss weights from back-propagated gradient statistics.

Every ``period`` iterations the gradient of each unweighted loss term is
taken over its own parameter scope.  The PDE terms set a common target

    Theta = mean_i max|grad L_PDE_i|

and each weight rescales its term toward that target: PDE weights use the
term's max entry, every other weight the term's mean entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import BalancingError, ConfigurationError
from .physics import N_TERMS, TERM_INDEX, TERM_NAMES

PDE_TERMS = ("PDE1", "PDE2", "PDE3", "PDE4")
ALL_NETS = (0, 1, 2, 3)


def term_scope(term: str) -> tuple[int, ...]:
    """Networks (0-based) whose parameters a term's statistics are taken over."""
    if term not in TERM_INDEX:
        raise ConfigurationError(f"unknown loss term {term!r}")
    if term.startswith("PDE") or term in ("NBC1", "NBC2", "NBC3"):
        return ALL_NETS
    return (int(term[-1]) - 1,)


@dataclass(frozen=True)
class GradStats:
    term: str
    max: float
    mean: float

    def __post_init__(self):
        if not (np.isfinite(self.max) and np.isfinite(self.mean)):
            raise BalancingError(f"non-finite gradient statistics for {self.term}")
        if not self.max >= self.mean >= 0.0:
            # allow rounding in the mean of equal entries
            if not (self.mean >= 0.0 and np.isclose(self.max, self.mean, rtol=1e-12)):
                raise BalancingError(f"{self.term}: need max >= mean >= 0, got {self.max}, {self.mean}")


def stats_of(term: str, grad: np.ndarray) -> GradStats:
    """Max and mean of the absolute entries of a scoped gradient."""
    grad = np.asarray(grad, dtype=np.float64).ravel()
    if grad.size == 0:
        raise ConfigurationError(f"{term}: empty parameter scope")
    a = np.abs(grad)
    return GradStats(term, float(a.max()), float(a.mean()))


def grad_stats(term: str, model, colloc, problem) -> GradStats:
    """Statistics of one unweighted term at the model's current parameters."""
    from .objective import Objective
    from .physics import prepare_loss_inputs

    obj = Objective(prepare_loss_inputs(colloc, problem))
    result = obj.evaluate(model, per_term=True, terms=[term])
    return stats_of(term, obj.scoped(model, term, result.term_grads[term]))


def compute_theta(pde_stats: Sequence[GradStats]) -> float:
    if len(pde_stats) != 4:
        raise BalancingError(f"Theta needs the four PDE statistics, got {len(pde_stats)}")
    return float(sum(s.max for s in pde_stats) / 4.0)


@dataclass(frozen=True)
class BalancerConfig:
    period: int = 20
    epsilon: float = 1e-12
    smoothing: float | None = None

    def __post_init__(self):
        if int(self.period) < 1:
            raise ConfigurationError("balancing period must be >= 1")
        if not self.epsilon > 0.0:
            raise ConfigurationError("balancing epsilon must be positive")
        if self.smoothing is not None and not 0.0 <= self.smoothing < 1.0:
            raise ConfigurationError("smoothing factor must lie in [0, 1)")


@dataclass
class WeightUpdate:
    weights: np.ndarray
    theta: float
    degenerate: bool = False


def update_weights(stats: Mapping[str, GradStats], theta: float, config: BalancerConfig,
                   previous: np.ndarray | None = None) -> WeightUpdate:
    """New weights for every term present in ``stats``; absent terms keep weight 1.

    With ``Theta <= eps`` every weight is reset to 1 and the update is flagged
    degenerate.
    """
    w = np.ones(N_TERMS)
    if theta <= config.epsilon:
        return WeightUpdate(w, theta, True)
    for name, s in stats.items():
        denom = s.max if name in PDE_TERMS else s.mean
        w[TERM_INDEX[name]] = theta / max(denom, config.epsilon)
    if config.smoothing is not None and previous is not None:
        a = config.smoothing
        w = a * np.asarray(previous) + (1.0 - a) * w
    if not (np.isfinite(w).all() and np.all(w > 0.0)):
        raise BalancingError("balancing produced a non-positive or non-finite weight")
    return WeightUpdate(w, theta)


@dataclass
class BalanceEvent:
    iteration: int
    theta: float
    weights: np.ndarray
    maxes: np.ndarray
    means: np.ndarray
    active: np.ndarray
    degenerate: bool


@dataclass
class Balancer:
    """Holds the current weights and applies updates on the configured cadence."""

    config: BalancerConfig = field(default_factory=BalancerConfig)
    weights: np.ndarray = field(default_factory=lambda: np.ones(N_TERMS))
    events: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=lambda: {"degenerate_theta": 0})

    def due(self, iteration: int) -> bool:
        return iteration % self.config.period == 0

    def update(self, iteration: int, stats: Mapping[str, GradStats]) -> BalanceEvent:
        missing = [t for t in PDE_TERMS if t not in stats]
        if missing:
            raise BalancingError(f"balancing needs statistics for {missing}")
        theta = compute_theta([stats[t] for t in PDE_TERMS])
        upd = update_weights(stats, theta, self.config, self.weights)
        if upd.degenerate:
            self.diagnostics["degenerate_theta"] += 1
        self.weights = upd.weights
        maxes = np.zeros(N_TERMS)
        means = np.zeros(N_TERMS)
        active = np.zeros(N_TERMS, dtype=bool)
        for name, s in stats.items():
            k = TERM_INDEX[name]
            maxes[k], means[k], active[k] = s.max, s.mean, True
        event = BalanceEvent(iteration, theta, upd.weights.copy(), maxes, means, active, upd.degenerate)
        self.events.append(event)
        return event


def check_identities(event: BalanceEvent, epsilon: float = 1e-12, rtol: float = 1e-12) -> list[str]:
    """Terms whose weight does not reproduce Theta (empty when all hold)."""
    bad = []
    if event.degenerate:
        return [n for n, w in zip(TERM_NAMES, event.weights) if w != 1.0]
    for k, name in enumerate(TERM_NAMES):
        if not event.active[k]:
            continue
        stat = event.maxes[k] if name in PDE_TERMS else event.means[k]
        if stat <= epsilon:
            continue
        if abs(event.weights[k] * stat - event.theta) > rtol * event.theta:
            bad.append(name)
    return bad
