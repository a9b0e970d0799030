"""Tape-backed evaluation of the loss terms and their parameter gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import physics
from .balancing import term_scope
from .errors import NumericError
from .network import ModelState, TapeParams, network_jets
from .physics import N_TERMS, TERM_INDEX, TERM_NAMES, LossInputs


@dataclass
class Evaluation:
    losses: np.ndarray                 # (18,), zero for inactive terms
    active: np.ndarray                 # (18,) bool
    total: float                       # weighted by the weights passed in
    grad: np.ndarray | None = None     # gradient of the weighted total
    term_grads: dict = field(default_factory=dict)


class Objective:
    """Loss terms of a fixed collocation set, evaluated for any model."""

    def __init__(self, inputs: LossInputs, terms: Sequence[str] | None = None):
        self.inputs = inputs
        self.active = inputs.active()
        if terms is not None:
            self.active = np.array([n in terms for n in TERM_NAMES]) & self.active
        self.names = [n for n, a in zip(TERM_NAMES, self.active) if a]

    def losses(self, model: ModelState) -> np.ndarray:
        """Unweighted losses without recording a tape."""

        def evaluate(points, layouts, nets):
            return network_jets(model, points, layouts, None, nets)

        exprs = physics.term_expressions(evaluate, self.inputs, self.names)
        out = np.zeros(N_TERMS)
        for name, value in exprs.items():
            out[TERM_INDEX[name]] = float(value)
        return out

    def evaluate(self, model: ModelState, weights=None, *, per_term: bool = False,
                 terms: Sequence[str] | None = None, gradient: bool = True) -> Evaluation:
        tape = ad.Tape()
        try:
            return self._evaluate(tape, model, weights, per_term, terms, gradient)
        finally:
            tape.release()

    def _evaluate(self, tape, model, weights, per_term, terms, gradient) -> Evaluation:
        names = list(terms) if terms is not None else self.names
        w = np.ones(N_TERMS) if weights is None else np.asarray(weights, dtype=np.float64)
        with tape:
            tp = TapeParams(tape, model)

            def evaluate(points, layouts, nets):
                return network_jets(model, points, layouts, tp, nets)

            exprs = physics.term_expressions(evaluate, self.inputs, names)
            total_node = ad.weighted_sum([exprs[n] for n in names], [w[TERM_INDEX[n]] for n in names])
        losses = np.zeros(N_TERMS)
        active = np.zeros(N_TERMS, dtype=bool)
        for n in names:
            losses[TERM_INDEX[n]] = float(ad._val(exprs[n]))
            active[TERM_INDEX[n]] = True
        bad = [n for n in names if not np.isfinite(losses[TERM_INDEX[n]])]
        if bad:
            raise NumericError(f"non-finite loss terms: {', '.join(bad)}")
        total = float(ad._val(total_node))
        result = Evaluation(losses, active, total)
        if not gradient:
            return result
        params = tp.all()
        if per_term:
            for n in names:
                result.term_grads[n] = ad.param_gradient(tape, exprs[n], params)
            result.grad = self.combine(result.term_grads, w)
        else:
            result.grad = ad.param_gradient(tape, total_node, params)
        if not np.isfinite(result.grad).all():
            if not result.term_grads:
                result.term_grads = {n: ad.param_gradient(tape, exprs[n], params) for n in names}
            norms = {n: float(np.linalg.norm(g)) for n, g in result.term_grads.items()}
            culprits = [n for n, v in norms.items() if not np.isfinite(v)]
            raise NumericError(f"non-finite gradient; offending terms: {', '.join(culprits) or 'unknown'}")
        return result

    @staticmethod
    def combine(term_grads: dict, weights) -> np.ndarray:
        """Weighted sum of per-term gradients in fixed term order."""
        out = None
        for n in TERM_NAMES:
            if n in term_grads:
                piece = weights[TERM_INDEX[n]] * term_grads[n]
                out = piece if out is None else out + piece
        return out

    @staticmethod
    def scoped(model: ModelState, term: str, grad: np.ndarray) -> np.ndarray:
        """The slice of a full gradient covering the term's parameter scope."""
        offsets = np.concatenate([[0], np.cumsum(model.sizes)])
        return np.concatenate([grad[offsets[k]:offsets[k + 1]] for k in term_scope(term)])
