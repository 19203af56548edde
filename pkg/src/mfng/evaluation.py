"""Exact oracles by exhaustive enumeration.

Everything here is exponential in the number of units and is meant for
small models: tests, desk-scale experiments and checking the sampling
based machinery.  For DBMs the layers of one parity are summed out in
closed form (same-parity layers are conditionally independent given the
other parity), so only the other parity is enumerated.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .model import DbmModel, softplus, split_layers

ENUM_CAP = 24
_CHUNK_BITS = 16


class EnumerationCapError(ValueError):
    """Model too large for exhaustive enumeration."""


@dataclass
class ExactSummary:
    log_z: float
    loglik: float
    fim: np.ndarray


@dataclass
class WeightedStates:
    """Per-layer state rows with probability weights summing to one."""

    states: list[np.ndarray]
    weights: np.ndarray

    def __len__(self) -> int:
        return self.weights.shape[0]


def _check_cap(n: int, cap: int = ENUM_CAP) -> None:
    if n > cap:
        raise EnumerationCapError(f"{n} units exceeds the enumeration cap of {cap}")


@lru_cache(maxsize=32)
def _bit_table(n: int) -> np.ndarray:
    idx = np.arange(2 ** n, dtype=np.int64)
    table = ((idx[:, None] >> np.arange(n)) & 1).astype(float)
    table.setflags(write=False)
    return table


def all_states(n: int) -> np.ndarray:
    """All ``2^n`` binary vectors; row ``i`` holds the bits of ``i`` (unit 0 = LSB)."""
    _check_cap(n)
    if n <= 20:
        return _bit_table(n)
    return np.concatenate(list(_state_chunks(n)))


def _state_chunks(n: int):
    if n <= _CHUNK_BITS:
        yield _bit_table(n)
        return
    low = _bit_table(_CHUNK_BITS)
    for hi in range(2 ** (n - _CHUNK_BITS)):
        high_bits = ((hi >> np.arange(n - _CHUNK_BITS)) & 1).astype(float)
        yield np.hstack([low, np.broadcast_to(high_bits, (low.shape[0], n - _CHUNK_BITS))])


def _logsumexp(a: np.ndarray, axis=None):
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out.squeeze() if axis is None else np.squeeze(out, axis=axis)


def _chunked_logsumexp(values) -> float:
    parts = np.array([_logsumexp(v) for v in values])
    return float(_logsumexp(parts))


def marginal_log_weight(model: DbmModel, layers: Sequence[np.ndarray], summed: Sequence[int]) -> np.ndarray:
    """``log sum_{x_S} exp(-E(x))`` for batches of the layers not in ``summed``.

    ``summed`` must not contain two adjacent layers; its entries in ``layers``
    are ignored.
    """
    summed = set(summed)
    if any(l in summed and l + 1 in summed for l in range(model.n_layers)):
        raise ValueError("summed layers must be pairwise non-adjacent")
    rows = next(layers[l].shape[0] for l in range(model.n_layers) if l not in summed)
    full = [layers[l] if l not in summed else np.zeros((rows, n)) for l, n in enumerate(model.layer_sizes)]
    xc = [x - c for x, c in zip(full, model.offsets)]
    out = np.zeros(rows)
    for l in range(model.n_layers):
        if l in summed:
            a = model.layer_input(full, l)
            out += np.sum(softplus(a) - a * model.offsets[l], axis=1)
        else:
            out += xc[l] @ model.bias(l)
    for l in range(1, model.n_layers):
        if l - 1 not in summed and l not in summed:
            out += np.einsum("bi,ij,bj->b", xc[l - 1], model.weights(l), xc[l])
    return out


def _parity_split(model: DbmModel, fixed: Sequence[int] = ()) -> tuple[list[int], list[int]]:
    """(enumerated, summed) free layers; the parity with more free units is summed."""
    free = [l for l in range(model.n_layers) if l not in fixed]
    odd = [l for l in free if l % 2 == 1]
    even = [l for l in free if l % 2 == 0]
    units = lambda ls: sum(model.layer_sizes[l] for l in ls)  # noqa: E731
    if units(odd) >= units(even):
        return even, odd
    return odd, even


def exact_log_z(model) -> float:
    """Log partition function by enumeration (max-shifted log-sum-exp)."""
    _check_cap(model.n_units)
    if isinstance(model, DbmModel) and model.n_layers > 1:
        enum, summed = _parity_split(model)
        sizes = [model.layer_sizes[l] for l in enum]

        def chunks():
            for block in _state_chunks(sum(sizes)):
                layers = [None] * model.n_layers
                for l, x in zip(enum, split_layers(block, sizes)):
                    layers[l] = x
                yield marginal_log_weight(model, layers, summed)

        return _chunked_logsumexp(chunks())
    return _chunked_logsumexp(-model.energy(block) for block in _state_chunks(model.n_units))


def log_unnormalized_marginal(model, data: np.ndarray) -> np.ndarray:
    """``log sum_h exp(-E(v, h))`` per visible row (exact)."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[1] != model.layer_sizes[0]:
        raise ValueError(f"data rows must have {model.layer_sizes[0]} visible units")
    if not isinstance(model, DbmModel) or model.n_layers == 1:
        return -model.energy(data)
    enum, summed = _parity_split(model, fixed=[0])
    sizes = [model.layer_sizes[l] for l in enum]
    _check_cap(sum(sizes))
    hidden = all_states(sum(sizes))
    out = np.empty(data.shape[0])
    step = max(1, 2 ** 18 // hidden.shape[0])
    for start in range(0, data.shape[0], step):
        v = data[start:start + step]
        layers = [None] * model.n_layers
        layers[0] = np.repeat(v, hidden.shape[0], axis=0)
        for l, x in zip(enum, split_layers(np.tile(hidden, (v.shape[0], 1)), sizes)):
            layers[l] = x
        lw = marginal_log_weight(model, layers, summed).reshape(v.shape[0], hidden.shape[0])
        out[start:start + step] = _logsumexp(lw, axis=1)
    return out


def exact_loglik(model, data: np.ndarray, log_z: float | None = None) -> float:
    """Mean ``log p(v)`` over the rows of ``data``, hidden layers marginalized."""
    _check_cap(model.n_units)
    log_z = exact_log_z(model) if log_z is None else log_z
    return float(np.mean(log_unnormalized_marginal(model, data)) - log_z)


def joint_distribution(model) -> tuple[np.ndarray, np.ndarray]:
    """All joint states (flat, one row each) and their exact probabilities."""
    _check_cap(model.n_units)
    states = all_states(model.n_units)
    log_w = -model.energy(states)
    log_w -= _logsumexp(log_w)
    return states, np.exp(log_w)


def exact_negative_phase(model) -> WeightedStates:
    states, p = joint_distribution(model)
    return WeightedStates(split_layers(states, model.layer_sizes), p)


def exact_positive_phase(model, data: np.ndarray) -> WeightedStates:
    """Data rows joined with every hidden configuration, weighted by ``q(v) p(h|v)``."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n_data, n_vis = data.shape
    n_hid = model.n_units - n_vis
    if n_hid == 0:
        return WeightedStates([data.copy()], np.full(n_data, 1.0 / n_data))
    _check_cap(n_hid)
    hidden = all_states(n_hid)
    flat = np.hstack([np.repeat(data, hidden.shape[0], axis=0), np.tile(hidden, (n_data, 1))])
    log_w = -model.energy(flat).reshape(n_data, hidden.shape[0])
    log_w -= _logsumexp(log_w, axis=1)[:, None]
    weights = np.exp(log_w).ravel() / n_data
    return WeightedStates(split_layers(flat, model.layer_sizes), weights)


def _weighted_mean_grad(model, phase: WeightedStates) -> np.ndarray:
    return phase.weights @ model.energy_grad(phase.states)


def exact_nll_gradient(model, data: np.ndarray) -> np.ndarray:
    """``E_data[dE/dtheta] - E_model[dE/dtheta]``, the gradient of the mean NLL."""
    return (_weighted_mean_grad(model, exact_positive_phase(model, data))
            - _weighted_mean_grad(model, exact_negative_phase(model)))


def _fd_hessian(f, theta: np.ndarray, step: float) -> np.ndarray:
    n = theta.size
    H = np.empty((n, n))
    f0 = f(theta)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = step
        H[i, i] = (f(theta + 2 * ei) - 2 * f0 + f(theta - 2 * ei)) / (4 * step ** 2)
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = step
            H[i, j] = H[j, i] = (f(theta + ei + ej) - f(theta + ei - ej)
                                 - f(theta - ei + ej) + f(theta - ei - ej)) / (4 * step ** 2)
    return H


def exact_fim(model, form: str = "covariance", fd_step: float = 1e-4) -> np.ndarray:
    """Exact Fisher information matrix of the joint distribution.

    ``covariance``: ``E[s s^T] - E[s] E[s]^T`` with ``s = dE/dtheta``.
    ``score_outer``: ``sum_x p(x) u(x) u(x)^T`` with score ``u = -s + E[s]``.
    ``hessian_logZ``: central finite differences of :func:`exact_log_z`.
    """
    _check_cap(model.n_units)
    if form == "hessian_logZ":
        return _fd_hessian(lambda th: exact_log_z(model.with_values(th)),
                           model.params.values.copy(), fd_step)
    states, p = joint_distribution(model)
    S = model.energy_grad(states)
    mean = p @ S
    if form == "covariance":
        F = (S * p[:, None]).T @ S - np.outer(mean, mean)
    elif form == "score_outer":
        score = mean - S
        F = (score * p[:, None]).T @ score
    else:
        raise ValueError(f"unknown FIM form {form!r}")
    return 0.5 * (F + F.T)


def exact_natural_gradient(model, data: np.ndarray, alpha: float) -> np.ndarray:
    """Dense solve of ``(F + alpha I) x = g`` with the exact FIM and NLL gradient.

    At ``alpha == 0`` the pseudo-inverse gives the minimum-norm solution.
    """
    F = exact_fim(model, "covariance")
    g = exact_nll_gradient(model, data)
    if alpha > 0:
        return np.linalg.solve(F + alpha * np.eye(F.shape[0]), g)
    return np.linalg.pinv(F, rcond=1e-12, hermitian=True) @ g


def exact_summary(model, data: np.ndarray) -> ExactSummary:
    log_z = exact_log_z(model)
    return ExactSummary(log_z, exact_loglik(model, data, log_z), exact_fim(model))


def probability_table(model) -> np.ndarray:
    """Exact ``p(x)`` over all joint states in :func:`all_states` order."""
    return joint_distribution(model)[1]


def state_index(state) -> np.ndarray:
    """Inverse of :func:`all_states`: row index of each flat binary state."""
    state = np.atleast_2d(np.asarray(state))
    return (state.astype(np.int64) << np.arange(state.shape[1])).sum(axis=1)


__all__ = [
    "ENUM_CAP", "EnumerationCapError", "ExactSummary", "WeightedStates", "all_states",
    "exact_fim", "exact_log_z", "exact_loglik", "exact_natural_gradient", "exact_negative_phase",
    "exact_nll_gradient", "exact_positive_phase", "exact_summary", "joint_distribution",
    "log_unnormalized_marginal", "marginal_log_weight", "probability_table", "state_index",
]
