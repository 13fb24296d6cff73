"""Python bindings for the hydra-forge toy backdoor-chain library."""

import json
from pathlib import Path

from ._core import (
    Checkpoint,
    CheckpointShapeError,
    CheckpointVersionError,
    ConfigError,
    DegenerateError,
    HashChainError,
    HydraError,
    HydraLookupError,
    adaptive_threshold,
    aggregate_over_attackers,
    config_keys,
    default_templates,
    echo_config,
    hex_double,
    levenshtein,
    parse_hex_double,
    project_to_vocab,
    sha256_hex,
    verify_lineage,
)

__all__ = [
    "Checkpoint",
    "CheckpointShapeError",
    "CheckpointVersionError",
    "ConfigError",
    "DegenerateError",
    "HashChainError",
    "HydraError",
    "HydraLookupError",
    "adaptive_threshold",
    "aggregate_over_attackers",
    "config_keys",
    "default_templates",
    "echo_config",
    "evaluate",
    "hex_double",
    "levenshtein",
    "load_checkpoint",
    "parse_hex_double",
    "project_to_vocab",
    "resume_chain",
    "run_chain",
    "sha256_hex",
    "verify_lineage",
]


def load_checkpoint(path):
    return Checkpoint.load(Path(path))


def evaluate(checkpoint, config=None):
    """Metrics report (dict) for a checkpoint against the attack plan stored in it."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    return json.loads(checkpoint.evaluate_json(None if config is None else Path(config)))


def run_chain(config, out):
    """Run the configured chain into a new directory `out`; returns one metrics dict per stage."""
    from . import _core

    return json.loads(_core.run_chain_json(Path(config), Path(out)))


def resume_chain(source, from_stage, out):
    from . import _core

    return json.loads(_core.resume_chain_json(Path(source), from_stage, Path(out)))
