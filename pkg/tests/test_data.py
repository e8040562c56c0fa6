"""Corpus loading, embeddings, the synthetic generator, and indexing."""

import json

import numpy as np
import pytest

from protoep.data import (
    Dataset,
    EmbeddingTable,
    Sample,
    Vocab,
    index_dataset,
    index_sample,
    load_embeddings,
    load_fewrel,
    save_dataset,
    synth_generate,
)
from protoep.errors import ConfigError, DataFormatError, SampleSkipped

FEWREL_SNIPPET = {
    "P1": [
        {
            "tokens": ["alpha", "beta", "gamma", "delta"],
            "h": ["alpha", "Q1", [[0]]],
            "t": ["gamma delta", "Q2", [[2, 3]]],
        }
    ]
}


def test_load_fewrel_minimal(tmp_path):
    path = tmp_path / "d.json"
    path.write_text(json.dumps(FEWREL_SNIPPET))
    ds = load_fewrel(path)
    assert ds.relation_ids() == ["P1"]
    sample = ds.relations["P1"][0]
    assert sample.head_span == (0, 1)
    assert sample.tail_span == (2, 4)
    assert len(ds) == 1


def test_load_fewrel_bad_span_names_relation(tmp_path):
    bad = {"P9": [{"tokens": ["a"], "h": ["a", "Q", [[5]]], "t": ["a", "Q", [[0]]]}]}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    with pytest.raises(DataFormatError, match="P9"):
        load_fewrel(path)


def test_load_fewrel_invalid_json(tmp_path):
    path = tmp_path / "x.json"
    path.write_text("{nope")
    with pytest.raises(DataFormatError):
        load_fewrel(path)


def test_save_load_round_trip(tmp_path):
    dataset, _ = synth_generate(3, 5, 30, 6, 1.0, 4, emb_dim=4)
    path = tmp_path / "rt.json"
    save_dataset(dataset, path)
    back = load_fewrel(path)
    assert back.relation_ids() == dataset.relation_ids()
    for rel in dataset.relations:
        pairs = zip(dataset.relations[rel], back.relations[rel])
        for orig, loaded in pairs:
            assert loaded.tokens == orig.tokens
            assert loaded.head_span == orig.head_span
            assert loaded.tail_span == orig.tail_span


def test_sample_span_validation():
    with pytest.raises(DataFormatError):
        Sample(("a", "b"), head_span=(1, 1), tail_span=(0, 1), relation="r")
    with pytest.raises(DataFormatError):
        Sample(("a", "b"), head_span=(0, 3), tail_span=(0, 1), relation="r")


# ---------------------------------------------------------------------------
# embeddings


def test_load_embeddings_basic(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("a 1.0 2.0\nb 3.0 4.0\n")
    table = load_embeddings(path, dim=2)
    np.testing.assert_array_equal(table.vectors["a"], [1.0, 2.0])
    np.testing.assert_array_equal(table.lookup("unseen"), [0.0, 0.0])


def test_load_embeddings_duplicate_first_wins(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("a 1.0 2.0\na 9.0 9.0\n")
    table = load_embeddings(path, dim=2)
    assert len(table.vectors) == 1
    np.testing.assert_array_equal(table.vectors["a"], [1.0, 2.0])


def test_load_embeddings_bad_arity_reports_line(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("a 1.0 2.0\nb 3.0\n")
    with pytest.raises(DataFormatError, match=":2"):
        load_embeddings(path, dim=2)


# ---------------------------------------------------------------------------
# synthetic generator


def test_synth_structure():
    dataset, table = synth_generate(2, 10, 100, 12, 1.0, 7)
    assert len(dataset.relation_ids()) == 2
    sigs = set()
    for rel, samples in dataset.relations.items():
        assert len(samples) == 10
        rel_sigs = {
            (s.tokens[s.head_span[0]], s.tokens[s.tail_span[0]]) for s in samples
        }
        assert len(rel_sigs) == 1  # one signature pair per relation
        sigs.add(next(iter(rel_sigs)))
    # signature pairs are disjoint across relations
    flat = [tok for pair in sigs for tok in pair]
    assert len(flat) == len(set(flat)) == 4
    assert len(table.vectors) == 100


def test_synth_determinism():
    a_ds, a_tab = synth_generate(3, 4, 40, 8, 2.0, 11)
    b_ds, b_tab = synth_generate(3, 4, 40, 8, 2.0, 11)
    for rel in a_ds.relations:
        assert [s.tokens for s in a_ds.relations[rel]] == [
            s.tokens for s in b_ds.relations[rel]
        ]
    for tok in a_tab.vectors:
        assert np.array_equal(a_tab.vectors[tok], b_tab.vectors[tok])


def test_synth_signal_scales_signatures():
    _, weak = synth_generate(2, 2, 20, 5, 1.0, 3, emb_dim=4)
    _, strong = synth_generate(2, 2, 20, 5, 3.0, 3, emb_dim=4)
    np.testing.assert_allclose(strong.vectors["sig000"], 3.0 * weak.vectors["sig000"])
    np.testing.assert_array_equal(strong.vectors["tok0000"], weak.vectors["tok0000"])


def test_synth_rejects_tiny_vocab():
    with pytest.raises(ConfigError):
        synth_generate(5, 10, 10, 8, 1.0, 0)


# ---------------------------------------------------------------------------
# indexing


def _vocab(tokens):
    return Vocab(tokens)


def test_index_sample_positions_and_padding():
    sample = Sample(("A", "B", "C"), head_span=(0, 1), tail_span=(2, 3), relation="r")
    vocab = _vocab(["a", "b", "c"])
    out = index_sample(sample, vocab, max_len=4, pos_clip=40)
    assert out.head_rel_pos == (0, 1, 2, 0)
    assert out.tail_rel_pos == (-2, -1, 0, 0)
    assert out.token_ids == (vocab.lookup("a"), vocab.lookup("b"), vocab.lookup("c"), 0)
    assert out.length == 3


def test_index_sample_clipping():
    tokens = tuple(f"t{i}" for i in range(60))
    sample = Sample(tokens, head_span=(55, 56), tail_span=(0, 1), relation="r")
    out = index_sample(sample, _vocab(list(tokens)), max_len=60, pos_clip=40)
    assert out.head_rel_pos[0] == -40  # raw offset -55 clipped
    assert out.head_rel_pos[55] == 0


def test_index_sample_skip_when_span_truncated():
    sample = Sample(("a", "b", "c"), head_span=(0, 1), tail_span=(2, 3), relation="r")
    with pytest.raises(SampleSkipped):
        index_sample(sample, _vocab(["a", "b", "c"]), max_len=2, pos_clip=40)


def test_index_sample_oov_and_case():
    sample = Sample(("Known", "zzz"), head_span=(0, 1), tail_span=(1, 2), relation="r")
    vocab = _vocab(["known"])
    out = index_sample(sample, vocab, max_len=2, pos_clip=4)
    assert out.token_ids[0] == vocab.lookup("known")
    assert out.token_ids[1] == 1  # OOV id


def test_index_dataset_drops_skipped():
    ds = Dataset(
        relations={
            "r": [
                Sample(("a", "b"), (0, 1), (1, 2), "r"),
                Sample(("a", "b", "c"), (0, 1), (2, 3), "r"),
            ]
        }
    )
    indexed = index_dataset(ds, _vocab(["a", "b", "c"]), max_len=2, pos_clip=4)
    assert len(indexed.relations["r"]) == 1


def test_vocab_embedding_matrix_layout():
    table = EmbeddingTable(dim=2, vectors={"b": np.array([1.0, 2.0]), "a": np.array([3.0, 4.0])})
    vocab = Vocab.from_embeddings(table)
    mat = vocab.embedding_matrix(table)
    assert mat.shape == (4, 2)
    np.testing.assert_array_equal(mat[0], [0.0, 0.0])  # pad
    np.testing.assert_array_equal(mat[1], [0.0, 0.0])  # oov
    np.testing.assert_array_equal(mat[vocab.lookup("a")], [3.0, 4.0])
