"""Episode sampler structure, determinism, and uniformity."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protoep.episodes import (
    EpisodeConfig,
    episode_rng,
    episode_stream,
    sample_episode,
)
from protoep.errors import CapacityError, ConfigError


def _keys(pairs):
    """Identity keys for underlying samples (label field excluded)."""
    return {(s.token_ids, s.head_rel_pos, s.tail_rel_pos) for s, _ in pairs}


def test_config_validation():
    with pytest.raises(ConfigError):
        EpisodeConfig(0, 1, 1)
    with pytest.raises(ConfigError):
        EpisodeConfig(2, 1, 0)


def test_episode_structure(toy_indexed):
    config = EpisodeConfig(n_way=2, k_shot=1, q_per_class=2)
    ep = sample_episode(toy_indexed, config, episode_rng(0, 0))
    assert len(ep.support) == 2
    assert len(ep.query) == 4
    assert _keys(ep.support).isdisjoint(_keys(ep.query))
    assert sorted(ep.class_to_relation) == [0, 1]
    assert len(set(ep.class_to_relation.values())) == 2


def test_per_class_cardinalities(toy_indexed):
    config = EpisodeConfig(n_way=3, k_shot=4, q_per_class=2)
    ep = sample_episode(toy_indexed, config, episode_rng(5, 3))
    for cls in range(3):
        assert sum(1 for _, c in ep.support if c == cls) == 4
        assert sum(1 for _, c in ep.query if c == cls) == 2
    # class-major ordering
    assert [c for _, c in ep.support] == [0] * 4 + [1] * 4 + [2] * 4


def test_boundary_relation_exactly_k_plus_q(toy_indexed):
    # every relation in the toy pool has exactly 20 samples
    config = EpisodeConfig(n_way=4, k_shot=15, q_per_class=5)
    ep = sample_episode(toy_indexed, config, episode_rng(1, 0))
    assert len(ep.support) == 60 and len(ep.query) == 20


def test_capacity_errors(toy_indexed):
    with pytest.raises(CapacityError):
        sample_episode(toy_indexed, EpisodeConfig(5, 1, 1), episode_rng(0, 0))
    with pytest.raises(CapacityError, match="rel"):
        sample_episode(toy_indexed, EpisodeConfig(2, 20, 5), episode_rng(0, 0))


def test_stream_determinism(toy_indexed):
    config = EpisodeConfig(2, 2, 3)

    def labels(seed):
        return [
            [ep.class_to_relation[c] for _, c in ep.support]
            for ep in episode_stream(toy_indexed, config, seed, 20)
        ]

    assert labels(9) == labels(9)
    assert labels(9) != labels(10)


def test_episode_depends_only_on_seed_and_index(toy_indexed):
    config = EpisodeConfig(2, 1, 1)
    direct = sample_episode(toy_indexed, config, episode_rng(3, 7))
    via_stream = list(episode_stream(toy_indexed, config, 3, 8))[7]
    assert direct.class_to_relation == via_stream.class_to_relation
    assert _keys(direct.support) == _keys(via_stream.support)


@settings(max_examples=30, deadline=None)
@given(
    n_way=st.integers(2, 4),
    k_shot=st.integers(1, 5),
    q=st.integers(1, 5),
    seed=st.integers(0, 2**31 - 1),
)
def test_properties_hold_for_random_configs(toy_indexed, n_way, k_shot, q, seed):
    ep = sample_episode(
        toy_indexed, EpisodeConfig(n_way, k_shot, q), episode_rng(seed, 0)
    )
    assert _keys(ep.support).isdisjoint(_keys(ep.query))
    assert len(ep.support) == n_way * k_shot
    assert len(ep.query) == n_way * q
    assert sorted(ep.class_to_relation) == list(range(n_way))
    for s, c in ep.support + ep.query:
        assert s.label == c


def test_relation_pair_uniformity(toy_indexed):
    """Unordered 2-way relation pairs should be uniform within 3 sigma."""
    episodes = 10_000
    config = EpisodeConfig(2, 1, 1)
    rel_ids = toy_indexed.relation_ids()
    counts = {pair: 0 for pair in itertools.combinations(rel_ids, 2)}
    for i in range(episodes):
        ep = sample_episode(toy_indexed, config, episode_rng(77, i))
        pair = tuple(sorted(ep.class_to_relation.values()))
        counts[pair] += 1
    p = 1.0 / len(counts)
    sigma = np.sqrt(episodes * p * (1 - p))
    for pair, count in counts.items():
        assert abs(count - episodes * p) <= 3 * sigma, (pair, count)
