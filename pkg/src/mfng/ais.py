"""Annealed importance sampling of a DBM's log partition function.

The path runs from a zero-weight base-rate model ``p_A`` (visible biases
fit to the data, hidden biases zero) to the target ``p_B`` through
``p_beta ~ p_A^(1-beta) p_B^beta``.  Odd layers are summed out
analytically, so particles only carry the even layers; the transition at
each temperature is one block-Gibbs sweep of the interpolated model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .inference import mean_field_posterior
from .model import DbmModel, ParamVector, logit, sigmoid, softplus


@dataclass(frozen=True)
class AisConfig:
    n_particles: int = 100
    n_betas: int = 1000
    betas: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        b = self.schedule()
        if b.size < 2 or b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
            raise ValueError("betas must increase strictly from 0 to 1")

    def schedule(self) -> np.ndarray:
        if self.betas is not None:
            return np.asarray(self.betas, dtype=float)
        return np.linspace(0.0, 1.0, self.n_betas)


class AisResult(NamedTuple):
    log_z: float
    log_weight_variance: float
    log_weights: np.ndarray


def base_rate_biases(data: np.ndarray, clip: float = 10.0) -> np.ndarray:
    """Maximum-likelihood visible biases of an independent model, clipped to ``|b| <= clip``."""
    mean = np.asarray(data, dtype=float).mean(axis=0)
    with np.errstate(divide="ignore"):
        b = logit(mean)
    return np.clip(b, -clip, clip)


def base_rate_model(layer_sizes, data: np.ndarray | None = None, clip: float = 10.0) -> DbmModel:
    model = DbmModel(layer_sizes)
    arrays = model.params.unflatten()
    if data is not None:
        arrays["b0"] = base_rate_biases(data, clip)
    return DbmModel(layer_sizes, ParamVector.flatten(model.layout, arrays))


def _log_f(model: DbmModel, base_b: np.ndarray, beta: float, layers) -> np.ndarray:
    """Unnormalized log marginal of the even layers under ``p_beta``."""
    out = (1.0 - beta) * (layers[0] @ base_b)
    for l in range(model.n_layers):
        if l % 2 == 0:
            out += beta * ((layers[l] - model.offsets[l]) @ model.bias(l))
        else:
            a = beta * model.layer_input(layers, l)
            out += np.sum(softplus(a) - a * model.offsets[l], axis=1)
    return out


def _transition(model: DbmModel, base_b: np.ndarray, beta: float, layers, rng) -> None:
    for parity in (1, 0):
        for l in range(parity, model.n_layers, 2):
            a = beta * model.layer_input(layers, l)
            if l == 0:
                a += (1.0 - beta) * base_b
            layers[l] = (rng.random(a.shape) < sigmoid(a)).astype(float)


def ais_log_z(model: DbmModel, config: AisConfig | None = None, data: np.ndarray | None = None,
              base_bias: np.ndarray | None = None) -> AisResult:
    """Estimate ``log Z`` of ``model``.

    The base-rate visible biases come from ``base_bias`` if given, else from
    ``data`` (zero when neither is supplied).  Returns the estimate, the
    variance of the particles' log importance weights, and the weights.
    """
    if not isinstance(model, DbmModel):
        raise TypeError("AIS is implemented for layered DBMs")
    config = AisConfig() if config is None else config
    if base_bias is None:
        base_bias = base_rate_biases(data) if data is not None else np.zeros(model.layer_sizes[0])
    base_b = np.asarray(base_bias, dtype=float)
    betas = config.schedule()
    rng = np.random.default_rng(config.seed)
    P = config.n_particles

    layers = [np.zeros((P, n)) for n in model.layer_sizes]
    layers[0] = (rng.random((P, model.layer_sizes[0])) < sigmoid(base_b)).astype(float)
    for l in range(2, model.n_layers, 2):
        layers[l] = (rng.random((P, model.layer_sizes[l])) < 0.5).astype(float)

    log_w = np.zeros(P)
    prev = _log_f(model, base_b, betas[0], layers)
    for beta in betas[1:]:
        log_w += _log_f(model, base_b, beta, layers) - prev
        _transition(model, base_b, beta, layers, rng)
        prev = _log_f(model, base_b, beta, layers)

    if not np.all(np.isfinite(log_w)):
        bad = np.flatnonzero(~np.isfinite(log_w))
        raise FloatingPointError(f"non-finite AIS weights for particles {bad[:10].tolist()} "
                                 f"({bad.size} of {P})")
    log_z_a = float(np.sum(softplus(base_b)) + (model.n_units - model.layer_sizes[0]) * np.log(2.0))
    m = log_w.max()
    estimate = log_z_a + m + np.log(np.mean(np.exp(log_w - m)))
    return AisResult(float(estimate), float(np.var(log_w)), log_w)


def variational_log_marginal(model: DbmModel, data: np.ndarray, iterations: int = 10) -> np.ndarray:
    """Mean-field lower bound on ``log sum_h exp(-E(v, h))`` per visible row."""
    mu = mean_field_posterior(model, data, iterations)
    entropy = 0.0
    for m in mu[1:]:
        entropy = entropy - np.sum(m * np.log(m) + (1 - m) * np.log1p(-m), axis=1)
    return -model.energy(mu) + entropy
