"""Sample-based Fisher metric for Boltzmann machines, applied without forming it.

For a BM the Fisher information is the covariance of the energy gradient
under the model.  With ``M`` model samples stacked in ``S`` (one row of
``dE/dtheta`` per sample) the estimate is ``(S - s_bar)^T W (S - s_bar)``
where ``W`` holds the sample weights (``1/M`` each for an unweighted pool).
:class:`MetricOperator` evaluates ``L y`` as two matrix-vector products
through a length-``M`` intermediate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ParamVector

DENSE_CAP = 2000


@dataclass
class SampleMatrix:
    S: np.ndarray
    s_bar: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_rows(cls, S: np.ndarray, weights: np.ndarray | None = None) -> "SampleMatrix":
        S = np.atleast_2d(np.asarray(S, dtype=float))
        m = S.shape[0]
        if m < 1:
            raise ValueError("at least one sample is required")
        if weights is None:
            weights = np.full(m, 1.0 / m)
            s_bar = S.mean(axis=0)
        else:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (m,) or np.any(weights < 0):
                raise ValueError("weights must be a non-negative vector with one entry per row")
            weights = weights / weights.sum()
            s_bar = weights @ S
        return cls(S, s_bar, weights)

    @classmethod
    def from_states(cls, model, states, weights: np.ndarray | None = None) -> "SampleMatrix":
        return cls.from_rows(model.energy_grad(states), weights)

    @property
    def shape(self) -> tuple[int, int]:
        return self.S.shape


def build_sample_matrix(model, pool, weights: np.ndarray | None = None) -> SampleMatrix:
    """Rows ``dE(x_m)/dtheta`` for every chain in ``pool`` (or any per-layer state batch)."""
    states = pool.states if hasattr(pool, "states") else pool
    if hasattr(pool, "weights") and weights is None:
        weights = pool.weights
    return SampleMatrix.from_states(model, states, weights)


class MetricOperator:
    """``y -> (S - s_bar)^T diag(w) (S - s_bar) y + alpha y``; never forms the N x N matrix."""

    def __init__(self, samples: SampleMatrix, alpha: float = 0.1, dense_cap: int = DENSE_CAP):
        if alpha < 0:
            raise ValueError("damping must be non-negative")
        centered = samples.S - samples.s_bar
        centered.setflags(write=False)
        self.centered = centered
        self.weights = samples.weights
        self.alpha = float(alpha)
        self.dense_cap = dense_cap

    @property
    def n(self) -> int:
        return self.centered.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def n_samples(self) -> int:
        return self.centered.shape[0]

    def apply(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n,):
            raise ValueError(f"expected a vector of length {self.n}, got shape {y.shape}")
        return self.centered.T @ (self.weights * (self.centered @ y)) + self.alpha * y

    __call__ = apply
    matvec = apply

    def diagonal(self) -> np.ndarray:
        return self.weights @ self.centered ** 2 + self.alpha

    def dense(self) -> np.ndarray:
        if self.n > self.dense_cap:
            raise ValueError(f"dense metric of size {self.n} exceeds the cap of {self.dense_cap}")
        L = self.centered.T @ (self.weights[:, None] * self.centered)
        L = 0.5 * (L + L.T)
        L[np.diag_indices(self.n)] += self.alpha
        return L


def apply_metric(op: MetricOperator, y):
    if isinstance(y, ParamVector):
        return ParamVector(op.apply(y.values), y.layout)
    return op.apply(y)


def metric_diagonal(op: MetricOperator) -> np.ndarray:
    return op.diagonal()


def dense_metric(op: MetricOperator) -> np.ndarray:
    return op.dense()


def save_sample_matrix(path, samples: SampleMatrix) -> None:
    """Debug dump of ``S`` (and its weights) for offline inspection."""
    with open(path, "wb") as fh:
        np.savez(fh, S=samples.S.astype("<f8"), weights=samples.weights.astype("<f8"))
