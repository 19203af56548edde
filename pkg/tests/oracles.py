"""Independent reference computations used across the test suite.

Nothing here calls into the layout, energy or enumeration code under test.
Models are read through their flat parameter vector using the documented
block order (W1..WK, then b0..bK; GenericBm: upper triangle, then b).
"""

from __future__ import annotations

import math

import numpy as np

from mfng.model import DbmModel, GenericBm


def quadratic_form(model):
    """``(J, b, c)`` with ``E(x) = -1/2 (x-c)^T J (x-c) - b^T (x-c)`` and symmetric ``J``."""
    theta = np.asarray(model.params.values, dtype=float)
    if isinstance(model, GenericBm):
        n = model.n_units
        J = np.zeros((n, n))
        pos = 0
        for k in range(n):
            for l in range(k + 1, n):
                J[k, l] = J[l, k] = theta[pos]
                pos += 1
        return J, theta[pos:pos + n].copy(), np.zeros(n)
    sizes = list(model.layer_sizes)
    starts = np.cumsum([0] + sizes)
    n = starts[-1]
    J = np.zeros((n, n))
    pos = 0
    for l in range(1, len(sizes)):
        block = theta[pos:pos + sizes[l - 1] * sizes[l]].reshape(sizes[l - 1], sizes[l])
        J[starts[l - 1]:starts[l], starts[l]:starts[l + 1]] = block
        pos += block.size
    J = J + J.T
    b = theta[pos:pos + n].copy()
    c = np.concatenate([np.asarray(o, dtype=float) for o in model.offsets])
    return J, b, c


def term_energy(model, x) -> float:
    """Energy by explicit summation over unit pairs ``k < l`` and single units."""
    J, b, c = quadratic_form(model)
    x = np.asarray(x, dtype=float)
    total = 0.0
    n = x.size
    for k in range(n):
        total -= b[k] * (x[k] - c[k])
        for l in range(k + 1, n):
            if J[k, l] != 0.0:
                total -= J[k, l] * (x[k] - c[k]) * (x[l] - c[l])
    return total


def int_to_state(i: int, n: int) -> np.ndarray:
    return np.array([(i >> k) & 1 for k in range(n)], dtype=float)


def gray_log_weights(model) -> np.ndarray:
    """``-E(x)`` for every state, visited in Gray-code order with one-bit updates.

    Entry ``i`` of the result belongs to the state whose bit ``k`` is unit ``k``.
    """
    J, b, c = quadratic_form(model)
    n = b.size
    y = -c.copy()                       # x - c with x = 0
    e = -0.5 * y @ J @ y - b @ y
    out = np.empty(2 ** n)
    out[0] = -e
    field = J @ y
    code = 0
    for i in range(1, 2 ** n):
        k = (i & -i).bit_length() - 1    # lowest set bit of i is the bit that flips
        d = 1.0 if not (code >> k) & 1 else -1.0
        e += -d * field[k] - d * b[k]
        y[k] += d
        field += d * J[:, k]
        code ^= 1 << k
        out[code] = -e
    return out


def logsumexp(a) -> float:
    a = np.asarray(a, dtype=float)
    m = a.max()
    return float(m + np.log(np.sum(np.exp(a - m))))


def gray_log_z(model) -> float:
    return logsumexp(gray_log_weights(model))


def probability_table(model) -> np.ndarray:
    lw = gray_log_weights(model)
    return np.exp(lw - logsumexp(lw))


def states_matrix(n: int) -> np.ndarray:
    return np.array([int_to_state(i, n) for i in range(2 ** n)])


def visible_marginal_loglik(model, data) -> float:
    """Mean ``log p(v)`` by summing the joint table over hidden configurations."""
    p = probability_table(model)
    nv = model.layer_sizes[0]
    mask = (1 << nv) - 1
    pv = np.zeros(2 ** nv)
    np.add.at(pv, np.arange(p.size) & mask, p)
    idx = [int(sum(int(v) << k for k, v in enumerate(row))) for row in np.asarray(data)]
    return float(np.mean(np.log(pv[idx])))


def sufficient_statistics(model, x: np.ndarray) -> np.ndarray:
    """``dE/dtheta`` at one state, assembled entry by entry in the documented order."""
    J, b, c = quadratic_form(model)
    y = np.asarray(x, dtype=float) - c
    out = []
    if isinstance(model, GenericBm):
        n = model.n_units
        for k in range(n):
            for l in range(k + 1, n):
                out.append(-x[k] * x[l])
        out.extend(-x)
        return np.array(out)
    sizes = list(model.layer_sizes)
    starts = np.cumsum([0] + sizes)
    for l in range(1, len(sizes)):
        for i in range(sizes[l - 1]):
            for j in range(sizes[l]):
                out.append(-y[starts[l - 1] + i] * y[starts[l] + j])
    out.extend(-y)
    return np.array(out)


def covariance_fim(model) -> np.ndarray:
    """``Cov_p[dE/dtheta]`` from the Gray-code probability table."""
    n = model.n_units
    p = probability_table(model)
    S = np.array([sufficient_statistics(model, int_to_state(i, n)) for i in range(2 ** n)])
    mean = p @ S
    C = S - mean
    return (C * p[:, None]).T @ C


def nll_gradient(model, data) -> np.ndarray:
    """``E_{q(v) p(h|v)}[dE/dtheta] - E_p[dE/dtheta]`` from the joint table."""
    n = model.n_units
    nv = model.layer_sizes[0]
    p = probability_table(model)
    S = np.array([sufficient_statistics(model, int_to_state(i, n)) for i in range(2 ** n)])
    negative = p @ S
    positive = np.zeros_like(negative)
    codes = np.arange(p.size)
    for row in np.asarray(data):
        v = int(sum(int(x) << k for k, x in enumerate(row)))
        sel = (codes & ((1 << nv) - 1)) == v
        w = p[sel] / p[sel].sum()
        positive += w @ S[sel]
    return positive / len(data) - negative


def random_dbm(rng, sizes, w_scale=1.0, b_scale=1.0, centered=True) -> DbmModel:
    """DBM with uniform weights in ``[-w_scale, w_scale]``, biases in ``[-b_scale, b_scale]``."""
    n_w = sum(sizes[l - 1] * sizes[l] for l in range(1, len(sizes)))
    values = np.concatenate([rng.uniform(-w_scale, w_scale, n_w),
                             rng.uniform(-b_scale, b_scale, sum(sizes))])
    offsets = [rng.uniform(0, 1, n) for n in sizes] if centered else None
    return DbmModel(sizes, values, offsets)


def random_generic(rng, n, w_scale=1.0, b_scale=1.0) -> GenericBm:
    values = np.concatenate([rng.uniform(-w_scale, w_scale, n * (n - 1) // 2),
                             rng.uniform(-b_scale, b_scale, n)])
    return GenericBm(n, values)


def tv_distance(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(p * (1 - p) / n)


class Reparameterized:
    """A model seen through flat parameters ``theta' = A theta``.

    ``E'(x; theta') = E(x; A^{-1} theta')``, so ``dE'/dtheta' = A^{-T} dE/dtheta``.
    Exposes just enough of the model interface for exact enumeration.
    """

    def __init__(self, base, A, values=None):
        self.base = base
        self.A = np.asarray(A, dtype=float)
        self.A_inv = np.linalg.inv(self.A)
        self.layer_sizes = list(base.layer_sizes)
        self.n_units = base.n_units
        self.n_params = base.n_params
        theta = self.A @ base.params.values if values is None else np.asarray(values, dtype=float)
        self.params = type("Params", (), {"values": theta})()

    def _model(self):
        return self.base.with_values(self.A_inv @ self.params.values)

    def with_values(self, values):
        return Reparameterized(self.base, self.A, values)

    def energy(self, state):
        return self._model().energy(state)

    def energy_grad(self, state):
        return self._model().energy_grad(state) @ self.A_inv
