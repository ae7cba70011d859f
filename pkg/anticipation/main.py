"""
Command-line entry point for goal-consistent action anticipation.

    python -m anticipation.main gen-data --config synthetic.json --out data/
    python -m anticipation.main build-hierarchy --manifest data/ --out data/
    python -m anticipation.main train --config train.json --manifest data/ --hierarchy data/hierarchy.json --out run/
    python -m anticipation.main eval --checkpoint run/checkpoint.bin --manifest data/ --out run/
    python -m anticipation.main ablate --config experiment.json --manifest data/ --out ablation/
    python -m anticipation.main sweep --config experiment.json --manifest data/ --out sweep/
    python -m anticipation.main gradcheck --out checks/

Exit codes: 0 success, 2 config error, 3 data error, 4 check failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Any, Dict, List, Optional

from anticipation.ai.ablate import ablation_runner, run_lambda_sweep
from anticipation.ai.model import count_params, load_checkpoint, save_checkpoint
from anticipation.ai.train import train
from anticipation.config import LOG_LEVEL, ExperimentConfig, SyntheticConfig, TrainConfig
from anticipation.dataset import DatasetManifest, generate_synthetic, load_manifest, write_manifest
from anticipation.errors import AnticipationError, ConfigError
from anticipation.evaluate import evaluate
from anticipation.gradcheck import TOLERANCE, assert_gradients, run_gradcheck
from anticipation.hierarchy import (CooccurrenceModel, cooccurrence_from_manifest, load_hierarchy,
                                    save_hierarchy)
from anticipation.logger import (log_eval_report, log_history, log_run_summary, log_table,
                                 setup_logging)

logger = logging.getLogger(__name__)

HIERARCHY_FILE = "hierarchy.json"
CHECKPOINT_FILE = "checkpoint.bin"


def _load_json(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def _with_seed(data: Dict[str, Any], seed: Optional[int]) -> Dict[str, Any]:
    return data if seed is None else {**data, "seed": seed}


def _cooccurrence(args, manifest: DatasetManifest) -> List[CooccurrenceModel]:
    """Hierarchy from --hierarchy, or rebuilt from the training split."""
    if args.hierarchy:
        return load_hierarchy(args.hierarchy)
    logger.info("No --hierarchy given; counting co-occurrences on the training split")
    return cooccurrence_from_manifest(manifest, "train")


def _experiment_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_dict(_load_json(args.config))
    if args.seed is not None:
        # --seed offsets every run seed
        config = replace(config, seeds=[args.seed + s for s in config.seeds])
    return config


def cmd_gen_data(args):
    """Generate a synthetic dataset into --out."""
    config = SyntheticConfig.from_dict(_with_seed(_load_json(args.config), args.seed))
    manifest, _ = generate_synthetic(config)
    write_manifest(manifest, args.out)


def cmd_build_hierarchy(args):
    """Count goal/action co-occurrences on the training split."""
    manifest = load_manifest(args.manifest)
    models = cooccurrence_from_manifest(manifest, args.split)
    os.makedirs(args.out, exist_ok=True)
    save_hierarchy(models, os.path.join(args.out, HIERARCHY_FILE))


def cmd_train(args):
    """Train one model; writes checkpoint, history, summary and the final evaluation."""
    config = TrainConfig.from_dict(_with_seed(_load_json(args.config), args.seed))
    manifest = load_manifest(args.manifest)
    cooccurrence = _cooccurrence(args, manifest) if config.loss.use_consistency else []
    params, history = train(config, manifest, cooccurrence)

    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(params, os.path.join(args.out, CHECKPOINT_FILE), manifest.label_space,
                    config.seed)
    log_history(os.path.join(args.out, "history.csv"), history.rows())
    final = history.final_eval
    log_run_summary(os.path.join(args.out, "summary.json"), {
        "config": config.to_dict(),
        "parameters": count_params(params),
        "epochs": config.epochs,
        "final_eval": final.flat() if final is not None else None,
        "label_space_hash": manifest.label_space.fingerprint(),
    })
    if final is not None:
        log_eval_report(args.out, final)


def cmd_eval(args):
    """Evaluate a checkpoint on a manifest split."""
    if not args.checkpoint:
        raise ConfigError("--checkpoint: required for eval")
    manifest = load_manifest(args.manifest)
    params, _ = load_checkpoint(args.checkpoint, manifest.label_space)
    report = evaluate(params, manifest, args.split)
    log_eval_report(args.out, report)


def cmd_ablate(args):
    """Loss-component (or formulation) ablation over several seeds."""
    config = _experiment_config(args)
    manifest = load_manifest(args.manifest)
    cooccurrence = _cooccurrence(args, manifest)
    runner = ablation_runner(config.ablation)
    result = runner(config.train, manifest, cooccurrence, config.seeds, workers=config.workers)
    log_table(os.path.join(args.out, "ablation_runs.csv"), result.runs)
    log_table(os.path.join(args.out, "ablation.csv"), result.summary)


def cmd_sweep(args):
    """Sweep the consistency weight."""
    config = _experiment_config(args)
    manifest = load_manifest(args.manifest)
    cooccurrence = _cooccurrence(args, manifest)
    result = run_lambda_sweep(config.train, manifest, cooccurrence, config.lambda_values,
                              config.seeds, workers=config.workers)
    log_table(os.path.join(args.out, "sweep_runs.csv"), result.runs)
    log_table(os.path.join(args.out, "sweep.csv"), result.summary)
    best_lambda, best_recall = result.best
    log_run_summary(os.path.join(args.out, "sweep.json"),
                    {"best_lambda": float(best_lambda), "best_recall": best_recall})


def cmd_gradcheck(args):
    """Finite-difference check of every analytic gradient; exit 4 on failure."""
    if args.trials < 1:
        raise ConfigError("--trials: must be >= 1")
    results = run_gradcheck(trials=args.trials, seed=args.seed or 0, tolerance=TOLERANCE)
    log_table(os.path.join(args.out, "gradcheck.csv"), results)
    assert_gradients(results)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "build-hierarchy": cmd_build_hierarchy,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}

ARGUMENTS = {
    "config": (("--config",), dict(default=None, help="JSON config file")),
    "seed": (("--seed",), dict(type=int, default=None, help="Override the config seed")),
    "manifest": (("--manifest",), dict(required=True, help="manifest.json or its directory")),
    "hierarchy": (("--hierarchy",), dict(default=None, help="Co-occurrence file")),
    "checkpoint": (("--checkpoint",), dict(default=None, help="Model checkpoint")),
    "trials": (("--trials",), dict(type=int, default=100, help="Random instances per check")),
}

# Flags each subcommand reads besides --out
COMMAND_FLAGS = {
    "gen-data": ("config", "seed"),
    "build-hierarchy": ("manifest", "split"),
    "train": ("config", "seed", "manifest", "hierarchy"),
    "eval": ("manifest", "split", "checkpoint"),
    "ablate": ("config", "seed", "manifest", "hierarchy"),
    "sweep": ("config", "seed", "manifest", "hierarchy"),
    "gradcheck": ("seed", "trials"),
}

DEFAULT_SPLITS = {"build-hierarchy": "train", "eval": "val"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anticipation",
                                     description="Goal-consistent action anticipation")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="Logging level")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        sub = subparsers.add_parser(name, help=func.__doc__.splitlines()[0])
        sub.add_argument("--out", required=True, help="Output directory")
        for flag in COMMAND_FLAGS[name]:
            if flag == "split":
                sub.add_argument("--split", default=DEFAULT_SPLITS[name], help="Dataset split")
            else:
                names, options = ARGUMENTS[flag]
                sub.add_argument(*names, **options)
        sub.set_defaults(func=func)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        args.func(args)
    except AnticipationError as e:
        logger.error("%s failed: %s", args.command, e)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
