"""Experiment driver: data, model construction, training, evaluation and output files.

Output directory layout::

    config.yaml       expanded config actually used
    metrics.csv       one row per epoch (epoch 0 = initial evaluation)
    timing.csv        per-phase mean update durations per epoch
    updates.jsonl     one record per update, one per evaluation
    checkpoint/       model.npz, pool.npz, trainer.npz (latest)
"""

from __future__ import annotations

import csv
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .ais import ais_log_z, variational_log_marginal
from .config import ExperimentConfig
from .data import binarize, load_idx, synthetic_dataset
from .evaluation import ENUM_CAP, EnumerationCapError, exact_log_z, log_unnormalized_marginal
from .inference import load_pool, save_pool
from .model import init_dbm, load_model, save_model
from .optim import Trainer, TrainingDiverged

log = logging.getLogger(__name__)

METRICS_COLUMNS = ["epoch", "cpu_seconds", "updates", "train_loglik", "test_loglik",
                   "solver_iters_mean", "grad_norm_mean"]
TIMING_COLUMNS = ["epoch", "t_pos_phase", "t_neg_phase", "t_build_S", "t_solve", "t_apply", "t_total"]


def fmt(value) -> str:
    """Locale-independent, round-trippable number formatting."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def json_line(record: dict) -> str:
    """Strict JSON (non-finite floats become null) terminated by a newline."""
    clean = {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in record.items()}
    return json.dumps(clean, allow_nan=False) + "\n"


class OutputLocked(RuntimeError):
    pass


@contextmanager
def output_lock(directory: Path):
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputLocked(f"{directory} is in use by another experiment ({lock} exists)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def load_datasets(spec) -> tuple[np.ndarray, np.ndarray | None]:
    if spec.kind == "idx":
        train = binarize(load_idx(spec.train_path), spec.threshold).data
        test = binarize(load_idx(spec.test_path), spec.threshold, "test").data if spec.test_path else None
        if spec.subset is not None:
            train = train[:spec.subset]
            test = test[:spec.subset] if test is not None else None
        return train, test
    train = synthetic_dataset(spec.kind, spec.size, spec.seed, spec.shape, spec.p).data
    test = None
    if spec.test_size > 0:
        test = synthetic_dataset(spec.kind, spec.test_size, spec.seed + 1, spec.shape, spec.p,
                                 split="test").data
    return train, test


def build_model(config: ExperimentConfig, train: np.ndarray):
    spec = config.model
    if spec.layer_sizes[0] != train.shape[1]:
        raise ValueError(f"visible layer has {spec.layer_sizes[0]} units but data has {train.shape[1]}")
    rng = np.random.default_rng(np.random.SeedSequence(config.train.seed, spawn_key=(99,)))
    data = train if spec.offsets == "data_mean" else None
    return init_dbm(spec.layer_sizes, data, rng, spec.weight_scale)


@dataclass
class Evaluation:
    log_z: float
    train_loglik: float
    test_loglik: float
    method: str
    log_weight_variance: float = 0.0
    n_particles: int = 0
    n_betas: int = 0

    def record(self, epoch: int) -> dict:
        return {"type": "eval", "epoch": epoch, **self.__dict__}


def _log_marginal(model, data):
    try:
        return log_unnormalized_marginal(model, data)
    except EnumerationCapError:
        return variational_log_marginal(model, data)


def evaluate(model, train: np.ndarray, test: np.ndarray | None, ais_config, method: str = "auto") -> Evaluation:
    """Exact likelihoods when the model is small enough to enumerate, else AIS."""
    if method == "auto":
        method = "exact" if model.n_units <= ENUM_CAP else "ais"
    extra = {}
    if method == "exact":
        log_z = exact_log_z(model)
    elif method == "ais":
        result = ais_log_z(model, ais_config, data=train)
        log_z = result.log_z
        extra = dict(log_weight_variance=result.log_weight_variance,
                     n_particles=ais_config.n_particles, n_betas=len(ais_config.schedule()))
    else:
        raise ValueError(f"unknown evaluation method {method!r}")
    train_ll = float(np.mean(_log_marginal(model, train)) - log_z)
    test_ll = float(np.mean(_log_marginal(model, test)) - log_z) if test is not None else float("nan")
    return Evaluation(log_z, train_ll, test_ll, method, **extra)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(directory: Path, trainer: Trainer) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    save_model(directory / "model.npz", trainer.model)
    save_pool(directory / "pool.npz", trainer.pool)
    state = {
        "epoch": trainer.epoch,
        "updates": trainer.updates,
        "cpu_seconds": trainer.cpu_seconds,
        "rng": trainer.rng.bit_generator.state,
    }
    prev = trainer.previous_delta if trainer.previous_delta is not None else np.zeros(0)
    with open(directory / "trainer.npz", "wb") as fh:
        np.savez(fh, state=np.array(json.dumps(state)), previous_delta=prev.astype("<f8"))


def restore_checkpoint(directory: Path, trainer: Trainer) -> None:
    trainer.model = load_model(directory / "model.npz")
    trainer.pool = load_pool(directory / "pool.npz")
    with np.load(directory / "trainer.npz", allow_pickle=False) as z:
        state = json.loads(str(z["state"]))
        prev = np.array(z["previous_delta"])
    trainer.epoch = state["epoch"]
    trainer.updates = state["updates"]
    trainer.cpu_seconds = state["cpu_seconds"]
    trainer.rng.bit_generator.state = state["rng"]
    trainer.previous_delta = prev if prev.size else None


def _truncate_csv(path: Path, max_epoch: int) -> None:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(rows[0])
        w.writerows(r for r in rows[1:] if int(r[0]) <= max_epoch)


def _truncate_jsonl(path: Path, max_epoch: int) -> None:
    kept = [line for line in path.read_text().splitlines()
            if line and json.loads(line).get("epoch", 0) <= max_epoch]
    path.write_text("".join(line + "\n" for line in kept))


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def run_experiment(config: ExperimentConfig, resume: bool = False) -> int:
    """Run one experiment; returns a process exit status (0 on success)."""
    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    try:
        with output_lock(out):
            _run(config, out, resume)
    except OutputLocked as exc:
        log.error("%s", exc)
        return 2
    except Exception:
        log.exception("experiment failed")
        return 1
    return 0


def _run(config: ExperimentConfig, out: Path, resume: bool) -> None:
    train, test = load_datasets(config.data)
    model = build_model(config, train)
    trainer = Trainer(model, train, config.train)
    ckpt = out / "checkpoint"
    metrics_path, timing_path, updates_path = out / "metrics.csv", out / "timing.csv", out / "updates.jsonl"
    clock_on = config.output.clock == "process"

    if resume:
        restore_checkpoint(ckpt, trainer)
        for path in (metrics_path, timing_path):
            _truncate_csv(path, trainer.epoch)
        _truncate_jsonl(updates_path, trainer.epoch)
        log.info("resumed from epoch %d", trainer.epoch)
    else:
        (out / "config.yaml").write_text(cfgmod.dump(config))
        for path, cols in ((metrics_path, METRICS_COLUMNS), (timing_path, TIMING_COLUMNS)):
            with open(path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(cols)
        updates_path.write_text("")

    with open(metrics_path, "a", newline="") as mfh, open(timing_path, "a", newline="") as tfh, \
            open(updates_path, "a") as ufh:
        metrics = csv.writer(mfh, lineterminator="\n")
        timing = csv.writer(tfh, lineterminator="\n")

        def write_update(index, report):
            rec = {"type": "update", "epoch": trainer.epoch + 1, "update": index, **report.record()}
            ufh.write(json_line(rec))

        def metrics_row(epoch, cpu, updates, ev, iters, gnorm):
            train_ll = ev.train_loglik if ev else float("nan")
            test_ll = ev.test_loglik if ev else float("nan")
            cpu = cpu if clock_on else float("nan")
            metrics.writerow([fmt(epoch), fmt(cpu), fmt(updates), fmt(train_ll), fmt(test_ll),
                              fmt(iters), fmt(gnorm)])

        if not resume:
            ev = evaluate(trainer.model, train, test, config.ais)
            ufh.write(json_line(ev.record(0)))
            metrics_row(0, 0.0, 0, ev, float("nan"), float("nan"))
            mfh.flush()
            ufh.flush()

        while trainer.epoch < config.train.epochs:
            try:
                summary = trainer.run_epoch(write_update)
            except TrainingDiverged as exc:
                diag = out / "diverged"
                diag.mkdir(exist_ok=True)
                save_model(diag / "model.npz", exc.model)
                save_pool(diag / "pool.npz", exc.pool)
                np.save(diag / "delta.npy", exc.delta)
                ufh.flush()
                raise
            ev = None
            if summary.epoch % config.output.eval_every == 0 or summary.epoch == config.train.epochs:
                ev = evaluate(trainer.model, train, test, config.ais)
                ufh.write(json_line(ev.record(summary.epoch)))
            metrics_row(summary.epoch, summary.cpu_seconds, summary.updates, ev,
                        summary.mean("solver_iterations"), summary.mean("grad_norm"))
            timing.writerow([fmt(summary.epoch)] + [fmt(summary.mean(c)) for c in TIMING_COLUMNS[1:]])
            for fh in (mfh, tfh, ufh):
                fh.flush()
            if summary.epoch % config.output.checkpoint_every == 0 or summary.epoch == config.train.epochs:
                save_checkpoint(ckpt, trainer)
            log.info("epoch %d: train loglik %s", summary.epoch, ev.train_loglik if ev else "-")
    if config.train.epochs == 0:
        save_checkpoint(ckpt, trainer)


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

