"""Command line front end: ``mfng train | eval | inspect``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .ais import AisConfig
from .experiment import evaluate, json_line, load_datasets, run_experiment
from .model import load_model

log = logging.getLogger("mfng")


def _train(args) -> int:
    config = cfgmod.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["train.seed"] = args.seed
    if args.out is not None:
        changes["output.directory"] = args.out
    if args.algorithm is not None:
        changes["train.algorithm"] = args.algorithm
    if args.epochs is not None:
        changes["train.epochs"] = args.epochs
    if changes:
        config = cfgmod.override(config, **changes)
    return run_experiment(config, resume=args.resume)


def _eval(args) -> int:
    model = load_model(args.checkpoint)
    config = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
    train, test = load_datasets(config.data)
    ais = config.ais
    if args.particles or args.betas or args.ais_seed is not None:
        ais = AisConfig(args.particles or ais.n_particles, args.betas or ais.n_betas,
                        seed=ais.seed if args.ais_seed is None else args.ais_seed)
    result = evaluate(model, train, test, ais, args.method)
    record = result.record(epoch=-1)
    record["checkpoint"] = str(args.checkpoint)
    line = json_line(record)
    sys.stdout.write(line)
    if args.log:
        with open(args.log, "a") as fh:
            fh.write(line)
    return 0


def describe(path) -> dict:
    """Summary of a model checkpoint, chain-pool snapshot, or config file."""
    path = Path(path)
    if path.suffix in (".yaml", ".yml"):
        return {"type": "config", **cfgmod.to_dict(cfgmod.load(path))}
    with np.load(path, allow_pickle=False) as z:
        keys = set(z.files)
        if "params" in keys:
            model = load_model(path)
            values = model.params.values
            return {
                "type": "model",
                "kind": str(z["kind"]),
                "format_version": int(z["format_version"]),
                "layer_sizes": list(model.layer_sizes),
                "n_params": int(values.size),
                "blocks": {b.name: {"shape": list(b.shape),
                                    "norm": float(np.linalg.norm(model.params.block(b.name)))}
                           for b in model.layout.blocks},
            }
        if "bits" in keys:
            return {
                "type": "chain_pool",
                "format_version": int(z["format_version"]),
                "n_chains": int(z["n_chains"]),
                "layer_sizes": [int(n) for n in z["layer_sizes"]],
            }
        if "state" in keys:
            return {"type": "trainer_state", **json.loads(str(z["state"]))}
    raise ValueError(f"unrecognized file {path}")


def _inspect(args) -> int:
    print(json.dumps(describe(args.path), indent=2, default=str))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfng", description="Metric-free natural gradient for DBMs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run an experiment from a config file")
    p.add_argument("config", help="YAML experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--algorithm", choices=["mfng", "mfng_diag", "sml"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", action="store_true", help="continue from the output directory's checkpoint")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="evaluate a model checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--config", help="config whose data section supplies the evaluation data")
    p.add_argument("--method", choices=["auto", "exact", "ais"], default="auto")
    p.add_argument("--particles", type=int)
    p.add_argument("--betas", type=int)
    p.add_argument("--ais-seed", type=int)
    p.add_argument("--log", help="append the evaluation record to this JSON-lines file")
    p.set_defaults(func=_eval)

    p = sub.add_parser("inspect", help="describe a checkpoint, pool snapshot or config")
    p.add_argument("path")
    p.set_defaults(func=_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
