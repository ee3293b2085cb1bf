"""Run configuration: a flat JSON document with a content-hash fingerprint.

Every key is documented in DEFAULTS; unknown keys are rejected so typos
fail loudly. The fingerprint of the fully resolved config is embedded in
every artifact a run writes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import ParseError
from .losses import LossWeights
from .training import Hyperparams

# key -> (default, description)
DEFAULTS: dict[str, tuple] = {
    "data": (None, "path to a MRGS-DATA-v1 dataset snapshot"),
    "checkpoint": (None, "path to write/read the model checkpoint"),
    "log": (None, "path of the append-only epoch log (JSON lines)"),
    "window_length": (50, "c: most recent interactions kept per user"),
    "embedding_dim": (64, "d: width of every embedding and encoder layer"),
    "graph_layers": (2, "k: propagation steps over the interaction graph"),
    "encoder_layers": (2, "transformer blocks in the sequential encoder"),
    "attention_heads": (2, "heads per attention layer"),
    "feed_forward_dim": (None, "FFN width; null means 4x embedding_dim"),
    "dropout_rate": (0.2, "dropout on attention probs and block outputs"),
    "attention_mode": ("causal", "causal or bidirectional"),
    "user_state": ("first_token", "row read as the user state: first_token or last_position"),
    "scoring_head": ("fused", "fused, sequential, or graph"),
    "graph_layer_mean": (False, "average propagation layers instead of taking the last"),
    "alpha": (1.0, "weight of the local next-item loss"),
    "beta": (0.1, "weight of the global BPR loss"),
    "gamma": (1.0, "weight of the fused sampled-softmax loss"),
    "delta": (0.1, "weight of the contrastive alignment loss"),
    "lambda_reg": (1e-4, "L2 coefficient inside the global loss"),
    "negative_samples": (100, "negatives drawn per user per step"),
    "learning_rate": (1e-3, "Adam step size"),
    "adam_beta1": (0.9, "Adam first-moment decay"),
    "adam_beta2": (0.999, "Adam second-moment decay"),
    "adam_epsilon": (1e-8, "Adam denominator floor"),
    "batch_size": (256, "users per training step"),
    "max_epochs": (200, "upper bound on training epochs"),
    "patience": (10, "non-improving validation epochs before stopping"),
    "seed": (0, "seed for init, shuffling, sampling, dropout"),
    "exclude_seen": (True, "mask already-consumed items at evaluation"),
}


def resolve_config(overrides: dict) -> dict:
    """Apply defaults and reject unknown keys."""
    unknown = set(overrides) - set(DEFAULTS)
    if unknown:
        raise ParseError(f"unknown config keys: {sorted(unknown)}")
    resolved = {key: default for key, (default, _) in DEFAULTS.items()}
    resolved.update(overrides)
    return resolved


def load_config(path: str | Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: config must be a JSON object")
    return resolve_config(raw)


def fingerprint(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def to_hyperparams(config: dict) -> Hyperparams:
    weights = LossWeights(
        alpha=config["alpha"], beta=config["beta"], gamma=config["gamma"],
        delta=config["delta"], lambda_reg=config["lambda_reg"])
    return Hyperparams(
        c=config["window_length"], d=config["embedding_dim"],
        k=config["graph_layers"], n_layers=config["encoder_layers"],
        n_heads=config["attention_heads"], d_ff=config["feed_forward_dim"],
        dropout_rate=config["dropout_rate"],
        attention_mode=config["attention_mode"],
        user_state=config["user_state"], scoring_head=config["scoring_head"],
        layer_mean=config["graph_layer_mean"], weights=weights,
        n_negatives=config["negative_samples"],
        learning_rate=config["learning_rate"], beta1=config["adam_beta1"],
        beta2=config["adam_beta2"], epsilon=config["adam_epsilon"],
        batch_size=config["batch_size"], max_epochs=config["max_epochs"],
        patience=config["patience"], seed=config["seed"],
        exclude_seen=config["exclude_seen"])
