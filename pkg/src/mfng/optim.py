"""MFNG, MFNG-diag and SML updates, and the epoch-level training loop.

All three algorithms share the sampling machinery and differ only in how
the NLL gradient ``g`` is turned into a step ``delta``:

* ``sml``       -- ``delta = g``
* ``mfng_diag`` -- ``delta = g / diag(L + alpha I)``
* ``mfng``      -- ``delta`` solves ``(L + alpha I) delta = g`` with MINRES

Parameters are then updated as ``theta <- theta - learning_rate * delta``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .inference import ChainPool, InferenceConfig, positive_phase, sample_negative
from .metric import MetricOperator, SampleMatrix
from .solver import BREAKDOWN, SOLVERS, SolveResult, SolverConfig

log = logging.getLogger(__name__)

ALGORITHMS = ("mfng", "mfng_diag", "sml")
PHASES = ("pos_phase", "neg_phase", "build_S", "solve", "apply")


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "mfng"
    learning_rate: float = 5e-3
    batch_size: int = 25
    epochs: int = 10
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    damping: float = 0.1
    seed: int = 0
    n_chains: int | None = None
    k_sweeps: int = 5
    linear_solver: str = "minres"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")
        if self.algorithm == "mfng_diag" and self.damping == 0:
            raise ValueError("mfng_diag needs damping > 0")
        if self.n_chains is not None and self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.k_sweeps < 1:
            raise ValueError("k_sweeps must be >= 1")
        if self.linear_solver not in SOLVERS:
            raise ValueError(f"linear_solver must be one of {tuple(SOLVERS)}")

    @property
    def chains(self) -> int:
        """Number of persistent chains; tied to the batch size unless overridden."""
        return self.batch_size if self.n_chains is None else self.n_chains


@dataclass
class UpdateReport:
    grad_norm: float
    step_norm: float
    solver: SolveResult | None = None
    fallback: bool = False
    durations: dict[str, float] = field(default_factory=lambda: dict.fromkeys(PHASES, 0.0))
    total: float = 0.0

    def record(self) -> dict:
        rec = {
            "grad_norm": self.grad_norm,
            "step_norm": self.step_norm,
            "solver_iterations": self.solver.iterations if self.solver else 0,
            "solver_residual": self.solver.final_relative_residual if self.solver else None,
            "termination": self.solver.termination if self.solver else None,
            "fallback": self.fallback,
        }
        rec.update({f"t_{k}": v for k, v in self.durations.items()})
        rec["t_total"] = self.total
        return rec


class TrainingDiverged(FloatingPointError):
    """Parameters became non-finite; carries the last good state for diagnosis."""

    def __init__(self, message, model=None, pool=None, delta=None):
        super().__init__(message)
        self.model = model
        self.pool = pool
        self.delta = delta


def nll_gradient(model, positive, negative, positive_weights=None, negative_weights=None) -> np.ndarray:
    """``mean(s+) - mean(s-)`` of per-state energy gradients, in layout order.

    ``positive``/``negative`` are per-layer state batches.  Optional weights
    turn the means into weighted averages (used with enumerated states).
    """
    s_pos = model.energy_grad(positive)
    s_neg = model.energy_grad(negative)
    return _gradient_from_rows(s_pos, s_neg, positive_weights, negative_weights)


def _gradient_from_rows(s_pos, s_neg, w_pos=None, w_neg=None) -> np.ndarray:
    s_pos, s_neg = np.atleast_2d(s_pos), np.atleast_2d(s_neg)
    if s_pos.shape[0] == 0 or s_neg.shape[0] == 0:
        raise ValueError("positive and negative state sets must be non-empty")
    pos = s_pos.mean(axis=0) if w_pos is None else (w_pos / np.sum(w_pos)) @ s_pos
    neg = s_neg.mean(axis=0) if w_neg is None else (w_neg / np.sum(w_neg)) @ s_neg
    return pos - neg


def update_direction(model, positive, negative, config: TrainConfig, positive_weights=None,
                     negative_weights=None, x0=None) -> tuple[np.ndarray, UpdateReport]:
    """Turn phase statistics into a step according to ``config.algorithm``.

    This is everything in one MFNG iteration after sampling: energy
    gradients, ``g``, the sample matrix of the negative states, and the
    damped solve (or its diagonal / identity stand-ins).
    """
    t0 = time.perf_counter()
    s_pos = model.energy_grad(positive)
    s_neg = model.energy_grad(negative)
    g = _gradient_from_rows(s_pos, s_neg, positive_weights, negative_weights)
    op = None
    if config.algorithm != "sml":
        op = MetricOperator(SampleMatrix.from_rows(s_neg, negative_weights), config.damping)
    t1 = time.perf_counter()

    result = None
    fallback = False
    if config.algorithm == "sml":
        delta = g.copy()
    elif config.algorithm == "mfng_diag":
        delta = g / op.diagonal()
    else:
        solve = SOLVERS[config.linear_solver]
        diagonal = op.diagonal() if config.solver.preconditioner == "jacobi" else None
        start = x0 if (config.solver.warm_start and x0 is not None) else None
        result = solve(op, g, start, config.solver, diagonal=diagonal)
        delta = result.solution
        if result.termination == BREAKDOWN or not np.all(np.isfinite(delta)):
            log.warning("linear solver broke down after %d iterations; using the plain gradient",
                        result.iterations)
            delta = g.copy()
            fallback = True
    t2 = time.perf_counter()

    report = UpdateReport(float(np.linalg.norm(g)), float(np.linalg.norm(delta)), result, fallback)
    report.durations["build_S"] = t1 - t0
    report.durations["solve"] = t2 - t1
    return delta, report


def _iteration(model, batch, pool: ChainPool, config: TrainConfig, rng=None, x0=None):
    t0 = time.perf_counter()
    positive = positive_phase(model, batch, config.inference, rng)
    t1 = time.perf_counter()
    sample_negative(model, pool, config.k_sweeps)
    t2 = time.perf_counter()
    delta, report = update_direction(model, positive, pool.states, config, x0=x0)
    report.durations["pos_phase"] = t1 - t0
    report.durations["neg_phase"] = t2 - t1
    report.total = time.perf_counter() - t0
    return delta, pool, report


def mfng_iteration(model, batch, pool: ChainPool, config: TrainConfig, rng=None, x0=None):
    """One metric-free natural-gradient iteration.

    Positive phase on ``batch``, ``k_sweeps`` of the persistent chains, then
    MINRES on ``(L + alpha I) delta = g`` where ``L`` is the covariance of
    the chains' energy gradients.  Returns ``(delta, pool, report)``; the
    pool is advanced in place.  Falls back to ``delta = g`` if the solver
    breaks down.
    """
    return _iteration(model, batch, pool, _with_algorithm(config, "mfng"), rng, x0)


def mfng_diag_iteration(model, batch, pool: ChainPool, config: TrainConfig, rng=None, x0=None):
    return _iteration(model, batch, pool, _with_algorithm(config, "mfng_diag"), rng, x0)


def sml_iteration(model, batch, pool: ChainPool, config: TrainConfig, rng=None, x0=None):
    return _iteration(model, batch, pool, _with_algorithm(config, "sml"), rng, x0)


ITERATIONS = {"mfng": mfng_iteration, "mfng_diag": mfng_diag_iteration, "sml": sml_iteration}


def _with_algorithm(config: TrainConfig, algorithm: str) -> TrainConfig:
    if config.algorithm == algorithm:
        return config
    return replace(config, algorithm=algorithm)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochSummary:
    epoch: int
    updates: int
    cpu_seconds: float
    reports: list[UpdateReport]

    def mean(self, key: str) -> float:
        if not self.reports:
            return float("nan")
        if key == "solver_iterations":
            return float(np.mean([r.solver.iterations if r.solver else 0 for r in self.reports]))
        if key == "grad_norm":
            return float(np.mean([r.grad_norm for r in self.reports]))
        if key == "t_total":
            return float(np.mean([r.total for r in self.reports]))
        return float(np.mean([r.durations[key.removeprefix("t_")] for r in self.reports]))


class Trainer:
    """Stateful epoch loop around the update rules.

    Owns the model (a private copy), the persistent chain pool, the data
    shuffling generator and the previous step (for warm starts).  Two
    trainers built from the same inputs produce identical parameter
    trajectories.
    """

    def __init__(self, model, data: np.ndarray, config: TrainConfig, pool: ChainPool | None = None):
        self.data = np.asarray(data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[0] == 0:
            raise ValueError("dataset must be a non-empty 2-D array")
        if self.data.shape[1] != model.layer_sizes[0]:
            raise ValueError("dataset width does not match the visible layer")
        self.model = model.copy()
        self.config = config
        pool_seed, data_seed = np.random.SeedSequence(config.seed).spawn(2)
        self.pool = pool if pool is not None else ChainPool.initialize(model, config.chains, pool_seed)
        self.pool.check(model)
        self.rng = np.random.default_rng(data_seed)
        self.previous_delta: np.ndarray | None = None
        self.epoch = 0
        self.updates = 0
        self.cpu_seconds = 0.0

    def step(self, batch: np.ndarray) -> UpdateReport:
        cfg = self.config
        x0 = self.previous_delta if cfg.solver.warm_start else None
        delta, self.pool, report = ITERATIONS[cfg.algorithm](self.model, batch, self.pool, cfg,
                                                             self.rng, x0)
        t0 = time.perf_counter()
        new = self.model.params.values - cfg.learning_rate * delta
        if not np.all(np.isfinite(new)):
            raise TrainingDiverged(f"non-finite parameters after update {self.updates + 1}",
                                   self.model.copy(), self.pool.copy(), delta)
        self.model.params.values[:] = new
        report.durations["apply"] = time.perf_counter() - t0
        report.total += report.durations["apply"]
        self.previous_delta = delta
        self.updates += 1
        return report

    def run_epoch(self, on_update: Callable[[int, UpdateReport], None] | None = None) -> EpochSummary:
        cpu0 = time.process_time()
        perm = self.rng.permutation(self.data.shape[0])
        reports = []
        bs = self.config.batch_size
        for start in range(0, perm.size, bs):
            report = self.step(self.data[perm[start:start + bs]])
            reports.append(report)
            if on_update is not None:
                on_update(self.updates, report)
        self.epoch += 1
        self.cpu_seconds += time.process_time() - cpu0
        return EpochSummary(self.epoch, self.updates, self.cpu_seconds, reports)


def train(model, data: np.ndarray, config: TrainConfig,
          callbacks: Sequence[Callable[[Trainer, EpochSummary], None]] = (),
          pool: ChainPool | None = None) -> tuple[object, list[dict]]:
    """Train a copy of ``model``; returns ``(trained_model, log)``.

    ``log`` holds one record per update and one per epoch.  Callbacks run
    after every epoch with the trainer and the epoch summary.
    """
    trainer = Trainer(model, data, config, pool)
    records: list[dict] = []

    def on_update(index, report):
        records.append({"type": "update", "epoch": trainer.epoch + 1, "update": index, **report.record()})

    for _ in range(config.epochs):
        summary = trainer.run_epoch(on_update)
        records.append({"type": "epoch", "epoch": summary.epoch, "updates": summary.updates})
        for cb in callbacks:
            cb(trainer, summary)
    return trainer.model, records
