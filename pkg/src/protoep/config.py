"""Run configuration: parsing, default resolution, and artifact assembly.

Configs are JSON objects or flat ``dotted.key=value`` text; either way they
resolve to the same fully-defaulted dictionary, which is echoed next to every
run so no result depends on implicit state.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np

from .data import (
    EmbeddingTable,
    IndexedDataset,
    Vocab,
    index_dataset,
    load_embeddings,
    load_fewrel,
    synth_generate,
)
from .episodes import EpisodeConfig, InconsistentPlan
from .errors import ConfigError
from .model import EncoderConfig, LossWeights
from .training import TrainConfig

DEFAULTS = {
    "data": {},  # exactly one of: {"synthetic": {...}} or {"fewrel": path}
    "embeddings": {},  # {"path": ..., "dim": ...} for fewrel corpora
    "encoder": {
        "word_dim": 50,
        "pos_dim": 5,
        "hidden": 230,
        "window": 3,
        "max_len": 128,
        "pos_clip": 40,
    },
    "train": {
        "n_way": 5,
        "k_shot": 5,
        "q_per_class": 5,
        "iterations": 2000,
        "eval_iterations": 500,
        "learning_rate": 0.1,
        "weight_decay": 1e-5,
        "grad_clip": 10.0,
        "seed": 0,
        "lambda_ce": 1.0,
        "lambda_dist": 0.1,
        "lambda_cl": 0.1,
        "cl_mode": "support_and_query",
        "use_cross_attention": True,
    },
    "infer": {"n_way": 5, "k_shot": 5, "q_per_class": 5},
    "formats": ["csv"],
}

SYNTH_DEFAULTS = {
    "num_relations": 5,
    "per_relation": 100,
    "vocab_size": 500,
    "sentence_len": 16,
    "signal_strength": 2.0,
    "seed": 1,
    "emb_dim": 16,
}


def _parse_scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path) -> dict:
    """Read a config file: JSON object, or dotted key=value lines."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON: {err}") from err
        if not isinstance(cfg, dict):
            raise ConfigError(f"{path}: config must be an object")
        return cfg
    cfg: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        node = cfg
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{path}:{lineno}: {key.strip()!r} conflicts with a scalar")
        node[parts[-1]] = _parse_scalar(value.strip())
    return cfg


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve(cfg: dict, seed_override: int | None = None) -> dict:
    """Fill in all defaults; the result is itself a valid config file."""
    resolved = _merge(DEFAULTS, cfg)
    data = resolved["data"]
    sources = [k for k in ("synthetic", "fewrel") if k in data]
    if len(sources) != 1:
        raise ConfigError(
            f"config field 'data' must name exactly one of synthetic/fewrel, got {sources}"
        )
    if "synthetic" in data:
        data["synthetic"] = _merge(SYNTH_DEFAULTS, data["synthetic"] or {})
    else:
        emb = resolved["embeddings"]
        if "path" not in emb or "dim" not in emb:
            raise ConfigError("config field 'embeddings' needs path and dim for a fewrel corpus")
    if seed_override is not None:
        resolved["train"]["seed"] = seed_override
    return resolved


@dataclass
class RunContext:
    """Everything a command needs, assembled from a resolved config."""

    config: dict  # resolved echo
    dataset: IndexedDataset
    embeddings: EmbeddingTable
    encoder_config: EncoderConfig
    word_init: np.ndarray
    train_config: TrainConfig


def build_context(resolved: dict) -> RunContext:
    data = resolved["data"]
    if "synthetic" in data:
        raw_ds, table = synth_generate(**data["synthetic"])
        # synthetic embeddings fix the word dimension
        resolved = _merge(resolved, {"encoder": {"word_dim": table.dim}})
    else:
        raw_ds = load_fewrel(data["fewrel"])
        emb = resolved["embeddings"]
        table = load_embeddings(emb["path"], int(emb["dim"]))
        resolved = _merge(resolved, {"encoder": {"word_dim": table.dim}})

    enc = resolved["encoder"]
    vocab = Vocab.from_embeddings(table)
    dataset = index_dataset(raw_ds, vocab, max_len=enc["max_len"], pos_clip=enc["pos_clip"])
    encoder_config = EncoderConfig(
        vocab_size=len(vocab),
        word_dim=enc["word_dim"],
        pos_dim=enc["pos_dim"],
        hidden=enc["hidden"],
        window=enc["window"],
        max_len=enc["max_len"],
        pos_clip=enc["pos_clip"],
    )
    word_init = vocab.embedding_matrix(table)

    t = resolved["train"]
    plan = InconsistentPlan(
        train=EpisodeConfig(t["n_way"], t["k_shot"], t["q_per_class"]),
        infer=EpisodeConfig(
            resolved["infer"]["n_way"],
            resolved["infer"]["k_shot"],
            resolved["infer"]["q_per_class"],
        ),
    )
    grad_clip = t["grad_clip"]
    train_config = TrainConfig(
        plan=plan,
        iterations=int(t["iterations"]),
        eval_iterations=int(t["eval_iterations"]),
        learning_rate=float(t["learning_rate"]),
        weight_decay=float(t["weight_decay"]),
        grad_clip=None if grad_clip in (None, "none") else float(grad_clip),
        seed=int(t["seed"]),
        weights=LossWeights(
            lambda_ce=float(t["lambda_ce"]),
            lambda_dist=float(t["lambda_dist"]),
            lambda_cl=float(t["lambda_cl"]),
            cl_mode=t["cl_mode"],
        ),
        use_cross_attention=bool(t["use_cross_attention"]),
    )
    return RunContext(
        config=resolved,
        dataset=dataset,
        embeddings=table,
        encoder_config=encoder_config,
        word_init=word_init,
        train_config=train_config,
    )
