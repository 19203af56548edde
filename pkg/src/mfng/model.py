"""Boltzmann-machine energy functions and the flat parameter layout.

Two model families share one duck-typed interface (``layer_sizes``,
``n_units``, ``params``, ``offsets``, ``energy``, ``energy_grad``,
``with_values``):

* :class:`DbmModel` -- layered, centered deep Boltzmann machine.
  Parameter layout is fixed as ``W1 .. WK`` followed by ``b0 .. bK``.
* :class:`GenericBm` -- fully visible pairwise BM with a symmetric,
  zero-diagonal weight matrix, used mostly as a test oracle.

States are given per layer.  A single state is a list of 1-D arrays; a
batch is a list of 2-D arrays with one row per configuration.  A flat
array over all units (1-D or 2-D) is accepted as well and split by layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def softplus(x):
    return np.logaddexp(0.0, x)


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


class DimensionError(ValueError):
    """State or vector dimensions do not match the model."""


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Block:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=int))

    @property
    def stop(self) -> int:
        return self.offset + self.size


class ParamLayout:
    """Ordered, contiguous map from named blocks to flat indices."""

    def __init__(self, blocks: Sequence[tuple[str, tuple[int, ...]]]):
        self.blocks: list[Block] = []
        offset = 0
        for name, shape in blocks:
            block = Block(name, tuple(int(s) for s in shape), offset)
            self.blocks.append(block)
            offset = block.stop
        self.size = offset
        self._index = {b.name: b for b in self.blocks}
        if len(self._index) != len(self.blocks):
            raise ValueError("duplicate block names in layout")

    def __getitem__(self, name: str) -> Block:
        return self._index[name]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, ParamLayout) and self.blocks == other.blocks

    def __repr__(self) -> str:
        inner = ", ".join(f"{b.name}{list(b.shape)}@{b.offset}" for b in self.blocks)
        return f"ParamLayout({inner})"

    def slice(self, name: str) -> slice:
        b = self._index[name]
        return slice(b.offset, b.stop)

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.blocks]

    def to_json(self) -> str:
        return json.dumps([[b.name, list(b.shape)] for b in self.blocks])

    @classmethod
    def from_json(cls, text: str) -> "ParamLayout":
        return cls([(name, tuple(shape)) for name, shape in json.loads(text)])


@dataclass
class ParamVector:
    """Flat parameter vector plus the layout that gives its blocks meaning."""

    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.layout.size,):
            raise DimensionError(
                f"expected a vector of length {self.layout.size}, got shape {self.values.shape}"
            )

    def __len__(self) -> int:
        return self.layout.size

    def block(self, name: str) -> np.ndarray:
        """Writable view of one block, reshaped."""
        b = self.layout[name]
        return self.values[b.offset:b.stop].reshape(b.shape)

    def unflatten(self) -> dict[str, np.ndarray]:
        return {b.name: self.block(b.name).copy() for b in self.layout.blocks}

    @classmethod
    def flatten(cls, layout: ParamLayout, arrays: dict[str, np.ndarray]) -> "ParamVector":
        values = np.empty(layout.size)
        for b in layout.blocks:
            arr = np.asarray(arrays[b.name], dtype=float)
            if arr.shape != b.shape:
                raise DimensionError(f"block {b.name}: expected {b.shape}, got {arr.shape}")
            values[b.offset:b.stop] = arr.ravel()
        return cls(values, layout)

    @classmethod
    def zeros(cls, layout: ParamLayout) -> "ParamVector":
        return cls(np.zeros(layout.size), layout)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)


def dbm_layout(layer_sizes: Sequence[int]) -> ParamLayout:
    blocks = [(f"W{l}", (layer_sizes[l - 1], layer_sizes[l])) for l in range(1, len(layer_sizes))]
    blocks += [(f"b{l}", (layer_sizes[l],)) for l in range(len(layer_sizes))]
    return ParamLayout(blocks)


def generic_layout(n_units: int) -> ParamLayout:
    return ParamLayout([("W", (n_units * (n_units - 1) // 2,)), ("b", (n_units,))])


# ---------------------------------------------------------------------------
# State handling
# ---------------------------------------------------------------------------


def split_layers(flat: np.ndarray, layer_sizes: Sequence[int]) -> list[np.ndarray]:
    bounds = np.cumsum([0, *layer_sizes])
    return [flat[..., bounds[i]:bounds[i + 1]] for i in range(len(layer_sizes))]


def _as_batch(model, state) -> tuple[list[np.ndarray], bool]:
    """Normalize ``state`` to a list of 2-D float arrays; report whether it was single."""
    sizes = model.layer_sizes
    if isinstance(state, np.ndarray):
        if state.shape[-1] != model.n_units or state.ndim not in (1, 2):
            raise DimensionError(f"flat state must end in {model.n_units} units, got {state.shape}")
        single = state.ndim == 1
        layers = split_layers(np.atleast_2d(state).astype(float, copy=False), sizes)
        return layers, single
    if len(state) != len(sizes):
        raise DimensionError(f"expected {len(sizes)} layers, got {len(state)}")
    layers = [np.asarray(x, dtype=float) for x in state]
    single = layers[0].ndim == 1
    layers = [np.atleast_2d(x) for x in layers]
    rows = layers[0].shape[0]
    for x, n in zip(layers, sizes):
        if x.ndim != 2 or x.shape[1] != n or x.shape[0] != rows:
            raise DimensionError(f"layer shape {x.shape} does not match {n} units x {rows} rows")
    return layers, single


def flatten_state(state) -> np.ndarray:
    return np.concatenate([np.asarray(x, dtype=float) for x in state], axis=-1)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


class DbmModel:
    """Centered deep Boltzmann machine with adjacent-layer interactions only.

    The energy is ``-sum_l (x_{l-1}-c_{l-1})^T W_l (x_l-c_l) - sum_l b_l^T (x_l-c_l)``
    with fixed per-unit offsets ``c``.  Offsets are read-only arrays.
    """

    def __init__(self, layer_sizes: Sequence[int], params: ParamVector | np.ndarray | None = None,
                 offsets: Sequence[np.ndarray] | np.ndarray | None = None):
        sizes = [int(n) for n in layer_sizes]
        if len(sizes) < 1 or any(n < 1 for n in sizes):
            raise ValueError(f"layer sizes must be positive, got {layer_sizes}")
        self.layer_sizes = sizes
        self.layout = dbm_layout(sizes)
        if params is None:
            params = ParamVector.zeros(self.layout)
        elif not isinstance(params, ParamVector):
            params = ParamVector(np.array(params, dtype=float), self.layout)
        elif params.layout != self.layout:
            raise DimensionError("parameter layout does not match layer sizes")
        self.params = params
        if offsets is None:
            offsets = [np.zeros(n) for n in sizes]
        elif isinstance(offsets, np.ndarray) and offsets.ndim == 1:
            offsets = split_layers(offsets, sizes)
        offs = []
        for c, n in zip(offsets, sizes):
            c = np.array(c, dtype=float)
            if c.shape != (n,):
                raise DimensionError(f"offset shape {c.shape} does not match layer of {n}")
            if np.any((c < 0) | (c > 1)):
                raise ValueError("offsets must lie in [0, 1]")
            c.setflags(write=False)
            offs.append(c)
        if len(offs) != len(sizes):
            raise DimensionError("one offset vector per layer is required")
        self.offsets: tuple[np.ndarray, ...] = tuple(offs)

    def __repr__(self) -> str:
        return f"DbmModel({'-'.join(map(str, self.layer_sizes))})"

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes)

    @property
    def n_units(self) -> int:
        return sum(self.layer_sizes)

    @property
    def n_params(self) -> int:
        return self.layout.size

    def weights(self, l: int) -> np.ndarray:
        """Weight matrix between layers ``l-1`` and ``l`` (shape ``n_{l-1} x n_l``)."""
        return self.params.block(f"W{l}")

    def bias(self, l: int) -> np.ndarray:
        return self.params.block(f"b{l}")

    @property
    def is_centered(self) -> bool:
        return any(np.any(c != 0) for c in self.offsets)

    def with_values(self, values: np.ndarray) -> "DbmModel":
        return DbmModel(self.layer_sizes, ParamVector(np.array(values, dtype=float), self.layout),
                        self.offsets)

    def copy(self) -> "DbmModel":
        return self.with_values(self.params.values)

    def layer_input(self, layers: Sequence[np.ndarray], l: int) -> np.ndarray:
        """Total centered input ``b_l + W_l^T(x_{l-1}-c_{l-1}) + W_{l+1}(x_{l+1}-c_{l+1})``."""
        total = np.broadcast_to(self.bias(l), layers[l].shape).copy()
        if l > 0:
            total += (layers[l - 1] - self.offsets[l - 1]) @ self.weights(l)
        if l + 1 < self.n_layers:
            total += (layers[l + 1] - self.offsets[l + 1]) @ self.weights(l + 1).T
        return total

    def energy(self, state):
        layers, single = _as_batch(self, state)
        xc = [x - c for x, c in zip(layers, self.offsets)]
        e = np.zeros(layers[0].shape[0])
        for l in range(1, self.n_layers):
            e -= np.einsum("bi,ij,bj->b", xc[l - 1], self.weights(l), xc[l])
        for l in range(self.n_layers):
            e -= xc[l] @ self.bias(l)
        return float(e[0]) if single else e

    def energy_grad(self, state) -> np.ndarray:
        """Rows of ``dE/dtheta`` in layout order; 1-D for a single state."""
        layers, single = _as_batch(self, state)
        rows = layers[0].shape[0]
        xc = [x - c for x, c in zip(layers, self.offsets)]
        out = np.empty((rows, self.n_params))
        for l in range(1, self.n_layers):
            sl = self.layout.slice(f"W{l}")
            out[:, sl] = -(xc[l - 1][:, :, None] * xc[l][:, None, :]).reshape(rows, -1)
        for l in range(self.n_layers):
            out[:, self.layout.slice(f"b{l}")] = -xc[l]
        return out[0] if single else out


class GenericBm:
    """Fully visible Boltzmann machine ``E(x) = -sum_{k<l} W_kl x_k x_l - b^T x``.

    The ``W`` block stores the strict upper triangle row by row.
    """

    def __init__(self, n_units: int, params: ParamVector | np.ndarray | None = None):
        if n_units < 1:
            raise ValueError("n_units must be positive")
        self.n_units = int(n_units)
        self.layer_sizes = [self.n_units]
        self.layout = generic_layout(self.n_units)
        if params is None:
            params = ParamVector.zeros(self.layout)
        elif not isinstance(params, ParamVector):
            params = ParamVector(np.array(params, dtype=float), self.layout)
        self.params = params
        self.offsets = (np.zeros(self.n_units),)
        self._iu = np.triu_indices(self.n_units, k=1)

    def __repr__(self) -> str:
        return f"GenericBm({self.n_units})"

    @classmethod
    def from_matrix(cls, W: np.ndarray, b: np.ndarray) -> "GenericBm":
        W = np.asarray(W, dtype=float)
        b = np.asarray(b, dtype=float)
        n = b.shape[0]
        if W.shape != (n, n):
            raise DimensionError(f"W must be {n}x{n}")
        if not np.array_equal(W, W.T) or np.any(np.diag(W) != 0):
            raise ValueError("W must be symmetric with zero diagonal")
        iu = np.triu_indices(n, k=1)
        return cls(n, np.concatenate([W[iu], b]))

    @property
    def n_params(self) -> int:
        return self.layout.size

    @property
    def is_centered(self) -> bool:
        return False

    def weight_matrix(self) -> np.ndarray:
        W = np.zeros((self.n_units, self.n_units))
        W[self._iu] = self.params.block("W")
        return W + W.T

    def bias(self, l: int = 0) -> np.ndarray:
        return self.params.block("b")

    def with_values(self, values: np.ndarray) -> "GenericBm":
        return GenericBm(self.n_units, np.array(values, dtype=float))

    def copy(self) -> "GenericBm":
        return self.with_values(self.params.values)

    def energy(self, state):
        layers, single = _as_batch(self, state)
        x = layers[0]
        e = -0.5 * np.einsum("bi,ij,bj->b", x, self.weight_matrix(), x) - x @ self.bias()
        return float(e[0]) if single else e

    def energy_grad(self, state) -> np.ndarray:
        layers, single = _as_batch(self, state)
        x = layers[0]
        out = np.concatenate([-(x[:, self._iu[0]] * x[:, self._iu[1]]), -x], axis=1)
        return out[0] if single else out


def energy(model, state):
    return model.energy(state)


def energy_grad(model, state) -> np.ndarray:
    return model.energy_grad(state)


# ---------------------------------------------------------------------------
# Centering
# ---------------------------------------------------------------------------


def centering_constant(model: DbmModel) -> float:
    """``E_centered(x) - E_uncentered(x)``, the same for every ``x``."""
    c = model.offsets
    const = sum(float(model.bias(l) @ c[l]) for l in range(model.n_layers))
    const -= sum(float(c[l - 1] @ model.weights(l) @ c[l]) for l in range(1, model.n_layers))
    return const


def uncenter(model):
    """Return an equivalent zero-offset model with offsets absorbed into biases.

    The returned energy differs from the original by :func:`centering_constant`,
    which cancels in the probabilities.
    """
    if not isinstance(model, DbmModel):
        return model.copy()
    if not model.is_centered:
        return model.copy()
    arrays = model.params.unflatten()
    c = model.offsets
    for l in range(model.n_layers):
        b = arrays[f"b{l}"]
        if l > 0:
            b -= c[l - 1] @ model.weights(l)
        if l + 1 < model.n_layers:
            b -= model.weights(l + 1) @ c[l + 1]
    return DbmModel(model.layer_sizes, ParamVector.flatten(model.layout, arrays))


# ---------------------------------------------------------------------------
# Construction and checkpoints
# ---------------------------------------------------------------------------


def init_dbm(layer_sizes: Sequence[int], data: np.ndarray | None = None,
             rng: np.random.Generator | None = None, weight_scale: float = 0.01,
             clip: float = 1e-3) -> DbmModel:
    """Centered DBM initialized in the usual way.

    Visible offsets are the per-pixel data mean, hidden offsets 0.5.  Visible
    biases start at the logit of the (clipped) data mean, hidden biases at
    zero, and weights at ``N(0, weight_scale^2)``.
    """
    rng = np.random.default_rng() if rng is None else rng
    model = DbmModel(layer_sizes)
    mean = np.full(layer_sizes[0], 0.5) if data is None else np.asarray(data, float).mean(axis=0)
    offsets = [mean] + [np.full(n, 0.5) for n in layer_sizes[1:]]
    arrays = model.params.unflatten()
    for l in range(1, len(layer_sizes)):
        arrays[f"W{l}"] = weight_scale * rng.standard_normal((layer_sizes[l - 1], layer_sizes[l]))
    arrays["b0"] = logit(np.clip(mean, clip, 1 - clip))
    return DbmModel(layer_sizes, ParamVector.flatten(model.layout, arrays), offsets)


def save_model(path, model) -> None:
    """Write a self-describing ``.npz`` checkpoint (little-endian float64)."""
    kind = "dbm" if isinstance(model, DbmModel) else "generic"
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format_version=np.array(FORMAT_VERSION, dtype="<i8"),
            kind=np.array(kind),
            layer_sizes=np.array(model.layer_sizes, dtype="<i8"),
            offsets=np.concatenate(model.offsets).astype("<f8"),
            layout=np.array(model.layout.to_json()),
            params=model.params.values.astype("<f8"),
        )


def load_model(path):
    with np.load(Path(path), allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {version}")
        kind = str(z["kind"])
        sizes = [int(n) for n in z["layer_sizes"]]
        layout = ParamLayout.from_json(str(z["layout"]))
        values = np.array(z["params"], dtype=np.float64)
        offsets = np.array(z["offsets"], dtype=np.float64)
    if kind == "generic":
        model = GenericBm(sizes[0], values)
    else:
        model = DbmModel(sizes, values, offsets)
    if model.layout != layout:
        raise ValueError("checkpoint layout does not match its layer sizes")
    return model
