"""Positive-phase inference and persistent negative-phase Gibbs chains."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import DbmModel, GenericBm, flatten_state, sigmoid, split_layers

POOL_FORMAT_VERSION = 1
_MF_EPS = 1e-15


@dataclass(frozen=True)
class InferenceConfig:
    mode: str = "mean_field"
    iterations: int = 5

    def __post_init__(self):
        if self.mode not in ("mean_field", "gibbs"):
            raise ValueError(f"inference mode must be 'mean_field' or 'gibbs', got {self.mode!r}")
        if self.iterations < 1:
            raise ValueError("inference iterations must be >= 1")


def chain_generators(seed, n: int) -> list[np.random.Generator]:
    """``n`` independent counter-based (Philox) streams derived from ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.Philox(child)) for child in ss.spawn(n)]


class ChainPool:
    """M persistent Markov chains, each with its own random stream.

    ``states`` is a list of per-layer ``(M, n_l)`` binary arrays.  Sweeps
    update the pool in place; chain ``m`` only ever reads stream ``m``, so a
    chain's trajectory does not depend on how many other chains exist.
    """

    def __init__(self, states: Sequence[np.ndarray], rngs: Sequence[np.random.Generator]):
        self.states = [np.array(x, dtype=float) for x in states]
        self.rngs = list(rngs)
        if len(self.rngs) < 1:
            raise ValueError("a chain pool needs at least one chain")
        if any(x.shape[0] != len(self.rngs) for x in self.states):
            raise ValueError("every layer needs one row per chain")

    @classmethod
    def initialize(cls, model, n_chains: int, seed) -> "ChainPool":
        """Chains start at ``Bernoulli(offset)`` per unit."""
        rngs = chain_generators(seed, n_chains)
        offsets = np.concatenate(model.offsets)
        u = np.stack([g.random(model.n_units) for g in rngs])
        return cls(split_layers((u < offsets).astype(float), model.layer_sizes), rngs)

    @property
    def n_chains(self) -> int:
        return len(self.rngs)

    @property
    def layer_sizes(self) -> list[int]:
        return [x.shape[1] for x in self.states]

    def uniforms(self, n: int) -> np.ndarray:
        return np.stack([g.random(n) for g in self.rngs])

    def flat(self) -> np.ndarray:
        return flatten_state(self.states)

    def copy(self) -> "ChainPool":
        rngs = []
        for g in self.rngs:
            clone = np.random.Generator(np.random.Philox())
            clone.bit_generator.state = g.bit_generator.state
            rngs.append(clone)
        return ChainPool([x.copy() for x in self.states], rngs)

    def check(self, model) -> None:
        if self.layer_sizes != list(model.layer_sizes):
            raise ValueError(f"pool layers {self.layer_sizes} do not match model {model.layer_sizes}")


def mean_field_posterior(model: DbmModel, visible: np.ndarray, iterations: int = 5) -> list[np.ndarray]:
    """Fixed-point mean-field marginals of the hidden layers given clamped visibles.

    Marginals start at the layer offsets and layers ``1..K`` are updated in
    order, ``iterations`` times, with no damping.  Returns
    ``[visible, mu_1, ..., mu_K]``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not np.all(np.isfinite(model.params.values)):
        raise FloatingPointError("non-finite model parameters")
    v = np.atleast_2d(np.asarray(visible, dtype=float))
    if v.shape[1] != model.layer_sizes[0]:
        raise ValueError(f"visible rows must have {model.layer_sizes[0]} units")
    if np.any((v < 0) | (v > 1)):
        raise ValueError("visible values must lie in [0, 1]")
    mu = [v] + [np.tile(c, (v.shape[0], 1)) for c in model.offsets[1:]]
    for _ in range(iterations):
        for l in range(1, model.n_layers):
            mu[l] = np.clip(sigmoid(model.layer_input(mu, l)), _MF_EPS, 1 - _MF_EPS)
    return mu


def gibbs_sweep(model, pool: ChainPool, clamp_visible: bool = False) -> ChainPool:
    """One block-Gibbs sweep: odd layers given even, then even layers given odd.

    Every chain draws one uniform per unit per sweep whether or not the
    visible layer is clamped, so stream consumption is fixed.
    """
    if isinstance(model, GenericBm):
        return _site_sweep(model, pool, clamp_visible)
    u = split_layers(pool.uniforms(model.n_units), model.layer_sizes)
    states = pool.states
    for parity in (1, 0):
        for l in range(parity, model.n_layers, 2):
            if l == 0 and clamp_visible:
                continue
            states[l] = (u[l] < sigmoid(model.layer_input(states, l))).astype(float)
    return pool


def _site_sweep(model: GenericBm, pool: ChainPool, clamp_visible: bool) -> ChainPool:
    # Fully visible models have intra-layer couplings: update one unit at a time.
    if clamp_visible:
        return pool
    u = pool.uniforms(model.n_units)
    W = model.weight_matrix()
    b = model.bias()
    x = pool.states[0]
    for k in range(model.n_units):
        x[:, k] = (u[:, k] < sigmoid(x @ W[:, k] + b[k])).astype(float)
    return pool


def sample_negative(model, pool: ChainPool, k_sweeps: int = 5) -> ChainPool:
    """Advance the persistent chains by ``k_sweeps`` unclamped sweeps."""
    if k_sweeps < 1:
        raise ValueError("k_sweeps must be >= 1")
    pool.check(model)
    for _ in range(k_sweeps):
        gibbs_sweep(model, pool)
    return pool


def positive_phase(model, batch: np.ndarray, config: InferenceConfig,
                   rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Data-driven states: mean-field marginals, or clamped Gibbs samples.

    Gibbs mode starts hidden units at ``Bernoulli(offset)`` and runs
    ``config.iterations`` clamped sweeps on chains seeded from ``rng``.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if isinstance(model, GenericBm):
        return [batch]
    if config.mode == "mean_field":
        return mean_field_posterior(model, batch, config.iterations)
    rng = np.random.default_rng() if rng is None else rng
    pool = ChainPool.initialize(model, batch.shape[0], int(rng.integers(2 ** 63)))
    pool.states[0] = batch.copy()
    for _ in range(config.iterations):
        gibbs_sweep(model, pool, clamp_visible=True)
    return pool.states


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------


def save_pool(path, pool: ChainPool) -> None:
    """Dimensions, packed state bits and per-chain Philox counters."""
    states = [s["state"] for s in (g.bit_generator.state for g in pool.rngs)]
    raw = [g.bit_generator.state for g in pool.rngs]
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format_version=np.array(POOL_FORMAT_VERSION, dtype="<i8"),
            n_chains=np.array(pool.n_chains, dtype="<i8"),
            layer_sizes=np.array(pool.layer_sizes, dtype="<i8"),
            bits=np.packbits(pool.flat().astype(np.uint8), axis=1),
            counter=np.array([s["counter"] for s in states], dtype="<u8"),
            key=np.array([s["key"] for s in states], dtype="<u8"),
            buffer=np.array([r["buffer"] for r in raw], dtype="<u8"),
            buffer_pos=np.array([r["buffer_pos"] for r in raw], dtype="<i8"),
            has_uint32=np.array([r["has_uint32"] for r in raw], dtype="<i8"),
            uinteger=np.array([r["uinteger"] for r in raw], dtype="<u8"),
        )


def load_pool(path) -> ChainPool:
    with np.load(Path(path), allow_pickle=False) as z:
        if int(z["format_version"]) != POOL_FORMAT_VERSION:
            raise ValueError(f"unsupported pool format version {int(z['format_version'])}")
        sizes = [int(n) for n in z["layer_sizes"]]
        m = int(z["n_chains"])
        flat = np.unpackbits(z["bits"], axis=1, count=sum(sizes)).astype(float)
        rngs = []
        for i in range(m):
            g = np.random.Generator(np.random.Philox())
            g.bit_generator.state = {
                "bit_generator": "Philox",
                "state": {"counter": z["counter"][i].copy(), "key": z["key"][i].copy()},
                "buffer": z["buffer"][i].copy(),
                "buffer_pos": int(z["buffer_pos"][i]),
                "has_uint32": int(z["has_uint32"][i]),
                "uinteger": int(z["uinteger"][i]),
            }
            rngs.append(g)
    return ChainPool(split_layers(flat, sizes), rngs)
