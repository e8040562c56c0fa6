"""Shared fixtures: a small synthetic corpus and matching parameters."""

import numpy as np
import pytest

from protoep.data import Vocab, index_dataset, synth_generate
from protoep.model import EncoderConfig, init_params

TOY_SYNTH = dict(
    num_relations=4,
    per_relation=20,
    vocab_size=40,
    sentence_len=6,
    signal_strength=2.0,
    seed=7,
    emb_dim=6,
)

TOY_ENCODER = dict(pos_dim=2, hidden=8, window=3, max_len=6, pos_clip=4)


@pytest.fixture(scope="session")
def toy_corpus():
    dataset, table = synth_generate(**TOY_SYNTH)
    vocab = Vocab.from_embeddings(table)
    indexed = index_dataset(
        dataset, vocab, max_len=TOY_ENCODER["max_len"], pos_clip=TOY_ENCODER["pos_clip"]
    )
    return dataset, table, vocab, indexed


@pytest.fixture(scope="session")
def toy_indexed(toy_corpus):
    return toy_corpus[3]


@pytest.fixture
def toy_params(toy_corpus):
    _, table, vocab, _ = toy_corpus
    config = EncoderConfig(vocab_size=len(vocab), word_dim=table.dim, **TOY_ENCODER)
    rng = np.random.default_rng(11)
    return init_params(config, rng, word_init=0.2 * vocab.embedding_matrix(table))
