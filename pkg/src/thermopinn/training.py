"""Optimisation loop: Adam with cosine decay, periodic loss balancing,
logging and checkpointing."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import geometry, mms
from .balancing import Balancer, BalancerConfig, stats_of
from .config import ExperimentConfig
from .errors import ConfigurationError, NumericError
from .materials import PhysicalConstants, spec_from_dict
from .network import InputNormalization, ModelState, build_model, save_checkpoint
from .objective import Objective
from .physics import N_TERMS, TERM_NAMES, LossInputs, prepare_loss_inputs


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), **kw)

    def as_dict(self) -> dict:
        return {"m": self.m, "v": self.v, "step": np.int64(self.step), "lr": np.float64(self.lr),
                "beta1": np.float64(self.beta1), "beta2": np.float64(self.beta2), "eps": np.float64(self.eps)}

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerState":
        return cls(np.asarray(d["m"]), np.asarray(d["v"]), int(d["step"]), float(d["lr"]),
                   float(d["beta1"]), float(d["beta2"]), float(d["eps"]))


def adam_step(state: OptimizerState, params: ModelState, grads: np.ndarray) -> tuple[OptimizerState, ModelState]:
    """One bias-corrected Adam update at ``state.lr``."""
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != state.m.shape:
        raise ConfigurationError(f"gradient has {g.size} entries, optimizer tracks {state.m.size}")
    if not np.isfinite(g).all():
        raise NumericError("non-finite gradient passed to the optimizer")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    flat = params.flat() - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new = OptimizerState(m, v, step, state.lr, state.beta1, state.beta2, state.eps)
    return new, params.with_flat(flat)


def learning_rate(k: int, total: int, lr0: float, lr1: float, schedule: str = "cosine") -> float:
    if schedule == "constant" or total <= 1:
        return lr0
    return lr1 + 0.5 * (lr0 - lr1) * (1.0 + math.cos(math.pi * k / (total - 1)))


@dataclass
class TrainRecord:
    """Append-only log.  ``wall_times`` is kept apart from the deterministic data."""

    iterations: list = field(default_factory=list)
    totals: list = field(default_factory=list)
    terms: list = field(default_factory=list)
    events: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)

    def append(self, k: int, total: float, losses: np.ndarray):
        if self.iterations and k <= self.iterations[-1]:
            raise ConfigurationError("TrainRecord iterations must increase")
        self.iterations.append(int(k))
        self.totals.append(float(total))
        self.terms.append(np.asarray(losses, dtype=np.float64).copy())

    def weight_rows(self) -> list[tuple[int, float, np.ndarray]]:
        return [(e.iteration, e.theta, e.weights) for e in self.events]

    def deterministic_view(self) -> dict:
        return {
            "iterations": np.array(self.iterations),
            "totals": np.array(self.totals),
            "terms": np.array(self.terms).reshape(-1, N_TERMS),
            "weights": np.array([e.weights for e in self.events]).reshape(-1, N_TERMS),
        }

    def write_log(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "total"] + list(TERM_NAMES))
            for k, tot, terms in zip(self.iterations, self.totals, self.terms):
                w.writerow([k, repr(tot)] + [repr(float(x)) for x in terms])
        return path

    def write_weights(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "theta"] + [f"w_{n}" for n in TERM_NAMES])
            for e in self.events:
                w.writerow([e.iteration, repr(float(e.theta))] + [repr(float(x)) for x in e.weights])
        return path


# ---------------------------------------------------------------------------
# problem assembly


def build_collocation(cfg: ExperimentConfig) -> geometry.CollocationSet:
    s = cfg.shape
    tg = geometry.TimeGrid(cfg.time.t0, cfg.time.tf, cfg.time.dt)
    if s.kind in ("cube", "box"):
        return geometry.sample_box(s.extents, s.grid or (9, 9, 9), tg, s.faces)
    if s.kind == "coating":
        return geometry.sample_coating(s.size_ratio, s.grid or (9, 9, 4), tg, s.faces)
    if s.kind == "comb":
        c = s.comb
        layout = geometry.CombLayout(c.length, c.width, c.height, c.spine_width, c.n_teeth, c.tooth_width,
                                     c.dirichlet_from)
        return geometry.sample_comb(layout, c.n_interior, c.n_boundary, tg, s.sample_seed, c.times_per_point)
    return geometry.load_point_cloud(s.path, tg)


def build_problem(cfg: ExperimentConfig) -> mms.ProblemData:
    m = cfg.material
    constants = PhysicalConstants(**m.constants.model_dump())
    if m.case == "custom":
        specs = {name: spec_from_dict(name, d) for name, d in m.properties.items()}
        return mms.ProblemData(specs, constants, mms.ExactFields(), "custom", m.check)
    return mms.ProblemData.for_case(m.case, constants, check=m.check)


def output_scaling(inputs: LossInputs) -> tuple[np.ndarray, np.ndarray]:
    """Per-network shift/scale from the Dirichlet and initial targets."""
    scale, shift = np.ones(4), np.zeros(4)
    for k in range(4):
        if k < 3:
            data = np.concatenate([inputs.u_bar[:, k], inputs.u_hat[:, k]])
        else:
            data = np.concatenate([inputs.T_bar, inputs.T_hat])
        if data.size == 0:
            continue
        lo, hi = float(data.min()), float(data.max())
        shift[k] = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        scale[k] = half if half > 0.0 else max(abs(shift[k]), 1.0)
    return scale, shift


def initial_model(cfg: ExperimentConfig, colloc: geometry.CollocationSet, inputs: LossInputs) -> ModelState:
    a = cfg.architecture
    norm = InputNormalization.from_bounds(*colloc.input_bounds(), isotropic=a.input_normalization == "isotropic")
    scale, shift = output_scaling(inputs)
    return build_model(a.hidden_layers, a.neurons, a.activation, cfg.seed, norm, scale, shift)


@dataclass
class FitResult:
    model: ModelState
    record: TrainRecord
    optimizer: OptimizerState
    balancer: Balancer


def fit(model: ModelState, inputs: LossInputs, iterations: int, *, lr: float = 1e-3, lr_final: float = 1e-4,
        schedule: str = "cosine", betas=(0.9, 0.999), eps: float = 1e-8,
        balancer: Balancer | None = None, balancing: bool = True,
        checkpoint: Callable[[ModelState, int, OptimizerState], None] | None = None,
        checkpoint_every: int = 0, progress: Callable[[int, float], None] | None = None) -> FitResult:
    """Full-batch training.  At balancing iterations the weights are refreshed
    from per-term gradients before the step, and those gradients are reused
    for the step itself."""
    objective = Objective(inputs)
    balancer = balancer or Balancer(BalancerConfig())
    opt = OptimizerState.zeros(model.flat().size, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
    record = TrainRecord()
    tick = time.perf_counter()
    last_good = model
    for k in range(iterations):
        opt.lr = learning_rate(k, iterations, lr, lr_final, schedule)
        try:
            if balancing and balancer.due(k):
                ev = objective.evaluate(model, per_term=True)
                stats = {n: stats_of(n, objective.scoped(model, n, g)) for n, g in ev.term_grads.items()}
                record.events.append(balancer.update(k, stats))
                w = balancer.weights
                grad = objective.combine(ev.term_grads, w)
                total = float(np.dot(w[ev.active], ev.losses[ev.active]))
            else:
                ev = objective.evaluate(model, balancer.weights)
                grad, total = ev.grad, ev.total
            if not np.isfinite(total):
                raise NumericError(f"loss became non-finite at iteration {k}")
            record.append(k, total, ev.losses)
            opt, model = adam_step(opt, model, grad)
        except NumericError as exc:
            if checkpoint is not None:
                checkpoint(last_good, k, opt)
            exc.iteration = k
            exc.record = record
            raise
        last_good = model
        if (k + 1) % 100 == 0:
            now = time.perf_counter()
            record.wall_times.append((k + 1, now - tick))
            tick = now
        if progress is not None:
            progress(k, total)
        if checkpoint is not None and checkpoint_every and (k + 1) % checkpoint_every == 0:
            checkpoint(model, k + 1, opt)
    return FitResult(model, record, opt, balancer)


@dataclass
class TrainResult:
    model: ModelState
    record: TrainRecord
    colloc: geometry.CollocationSet
    problem: mms.ProblemData
    optimizer: OptimizerState
    balancer: Balancer
    config: ExperimentConfig


def train(cfg: ExperimentConfig, out_dir=None, progress=None) -> TrainResult:
    colloc = build_collocation(cfg)
    problem = build_problem(cfg)
    inputs = prepare_loss_inputs(colloc, problem)
    model = initial_model(cfg, colloc, inputs)
    meta = {"config_digest": cfg.digest(), "seed": cfg.seed}
    ckpt = None
    if out_dir is not None:
        out = Path(out_dir)

        def ckpt(m, k, opt):
            save_checkpoint(out / "checkpoint.npz", m, iteration=k, optimizer=opt.as_dict(),
                            metadata=dict(meta, config=cfg.model_dump(mode="json")))

    b = cfg.balancing
    fitted = fit(model, inputs, cfg.iterations, lr=cfg.optimizer.lr, lr_final=cfg.optimizer.lr_final,
                 schedule=cfg.optimizer.schedule, betas=(cfg.optimizer.beta1, cfg.optimizer.beta2),
                 eps=cfg.optimizer.eps, balancer=Balancer(BalancerConfig(b.period, b.epsilon, b.smoothing)),
                 balancing=b.enabled, checkpoint=ckpt, checkpoint_every=cfg.checkpoint_every, progress=progress)
    if ckpt is not None:
        ckpt(fitted.model, cfg.iterations, fitted.optimizer)
    return TrainResult(fitted.model, fitted.record, colloc, problem, fitted.optimizer, fitted.balancer, cfg)


def evaluate(model: ModelState, cfg: ExperimentConfig, colloc=None, problem=None,
             iteration: int | None = None) -> mms.ErrorReport:
    """Error tables for the configured quantities and times."""
    colloc = colloc if colloc is not None else build_collocation(cfg)
    problem = problem if problem is not None else build_problem(cfg)
    grid = mms.test_grid(colloc, cfg.evaluation.test_grid)
    report = mms.error_report(model, grid, cfg.evaluation.times, cfg.evaluation.quantities, problem)
    report.metadata.update(config_digest=cfg.digest(), seed=cfg.seed,
                           iterations=cfg.iterations if iteration is None else iteration)
    return report
