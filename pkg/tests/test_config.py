from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfng import config as cfgmod
from mfng.config import ConfigError, ExperimentConfig

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

TEXT = """
version: 1
model:
  layer_sizes: [12, 6, 4]
  weight_scale: 0.1
train:
  algorithm: mfng_diag
  learning_rate: 5.0e-3
  batch_size: 16
  epochs: 3
  n_chains: 64
  solver: {tolerance: 1.0e-6, preconditioner: jacobi}
  inference: {mode: gibbs, iterations: 5}
data:
  kind: bars_stripes
  size: 128
  shape: [3, 4]
output:
  directory: runs/x
  clock: "off"
"""


def test_parse_fills_defaults():
    cfg = cfgmod.parse(TEXT)
    assert cfg.model.layer_sizes == (12, 6, 4)
    assert cfg.train.algorithm == "mfng_diag" and cfg.train.chains == 64
    assert cfg.train.solver.preconditioner == "jacobi" and cfg.train.solver.max_iterations == 200
    assert cfg.train.inference.mode == "gibbs"
    assert cfg.ais.n_betas == 1000
    assert cfg.output.clock == "off"


def test_empty_document_is_the_default():
    assert cfgmod.parse("") == ExperimentConfig()


def test_round_trip():
    cfg = cfgmod.parse(TEXT)
    assert cfgmod.parse(cfgmod.dump(cfg)) == cfg


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIG_DIR.glob("*.yaml")))
def test_shipped_configs_parse(name):
    cfg = cfgmod.load(CONFIG_DIR / name)
    assert cfgmod.parse(cfgmod.dump(cfg)) == cfg


@given(st.sampled_from(["mfng", "mfng_diag", "sml"]), st.integers(1, 512), st.integers(0, 50),
       st.floats(1e-6, 1.0), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=30)
def test_round_trip_property(algorithm, batch, epochs, lr, seed):
    cfg = cfgmod.from_dict({"train": {"algorithm": algorithm, "batch_size": batch, "epochs": epochs,
                                      "learning_rate": lr, "seed": seed}})
    assert cfgmod.parse(cfgmod.dump(cfg)) == cfg


@pytest.mark.parametrize("text", [
    "modle: {}",
    "train: {learning_rate: 0.1, momentum: 0.9}",
    "train: {solver: {tol: 1.0e-5}}",
    "output: {directory: x, colour: red}",
])
def test_unknown_keys_rejected(text):
    with pytest.raises(ConfigError, match="unknown keys"):
        cfgmod.parse(text)


@pytest.mark.parametrize("text", [
    "version: 2",
    "train: {algorithm: adam}",
    "train: {batch_size: 0}",
    "model: {layer_sizes: [4]}",
    "data: {kind: idx}",
    "output: {clock: wall}",
    "train: 3",
])
def test_invalid_values_rejected(text):
    with pytest.raises(ConfigError):
        cfgmod.parse(text)


def test_override():
    cfg = cfgmod.override(cfgmod.parse(TEXT), **{"train.seed": 7, "output.directory": "elsewhere"})
    assert cfg.train.seed == 7 and cfg.output.directory == "elsewhere"
    with pytest.raises(ConfigError):
        cfgmod.override(cfg, **{"train.sede": 1})
