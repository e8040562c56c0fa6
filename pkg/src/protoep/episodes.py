"""N-way K-shot episode construction with independent train/infer shapes."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import IndexedDataset, IndexedSample
from .errors import CapacityError, ConfigError

DEFAULT_Q_PER_CLASS = 5


@dataclass(frozen=True)
class EpisodeConfig:
    n_way: int
    k_shot: int
    q_per_class: int = DEFAULT_Q_PER_CLASS

    def __post_init__(self):
        if self.n_way < 1 or self.k_shot < 1 or self.q_per_class < 1:
            raise ConfigError(f"episode config fields must be positive: {self}")


@dataclass(frozen=True)
class InconsistentPlan:
    """One experimental cell: training shape (N1, K1) and inference shape (N2, K2)."""

    train: EpisodeConfig
    infer: EpisodeConfig


@dataclass
class Episode:
    """A single task: labeled support set plus query set with local labels."""

    support: list[tuple[IndexedSample, int]]
    query: list[tuple[IndexedSample, int]]
    class_to_relation: dict[int, str]


def sample_episode(
    dataset: IndexedDataset, config: EpisodeConfig, rng: np.random.Generator
) -> Episode:
    """Draw one episode uniformly without replacement.

    Relations are drawn uniformly; within each chosen relation,
    k_shot + q_per_class samples are drawn without replacement and split.
    Support and query are both ordered class-major.
    """
    relation_ids = dataset.relation_ids()
    if len(relation_ids) < config.n_way:
        raise CapacityError(
            f"need {config.n_way} relations, dataset has {len(relation_ids)}"
        )
    need = config.k_shot + config.q_per_class
    chosen = rng.choice(len(relation_ids), size=config.n_way, replace=False)

    support: list[tuple[IndexedSample, int]] = []
    query: list[tuple[IndexedSample, int]] = []
    class_to_relation: dict[int, str] = {}
    for cls, rel_idx in enumerate(chosen):
        rel = relation_ids[int(rel_idx)]
        pool = dataset.relations[rel]
        if len(pool) < need:
            raise CapacityError(
                f"relation {rel!r} has {len(pool)} samples, needs {need} "
                f"(K={config.k_shot} + Q={config.q_per_class})"
            )
        picks = rng.choice(len(pool), size=need, replace=False)
        class_to_relation[cls] = rel
        for j in picks[: config.k_shot]:
            support.append((replace(pool[int(j)], label=cls), cls))
        for j in picks[config.k_shot:]:
            query.append((replace(pool[int(j)], label=cls), cls))
    return Episode(support=support, query=query, class_to_relation=class_to_relation)


def episode_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based substream: episode i depends only on (seed, i)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def episode_stream(dataset: IndexedDataset, config: EpisodeConfig, seed: int, count: int):
    """Deterministic lazy sequence of ``count`` episodes."""
    for i in range(count):
        yield sample_episode(dataset, config, episode_rng(seed, i))
