"""Corpus loading, pretrained vectors, synthetic data, and sample indexing.

The on-disk corpus layout is a JSON object mapping relation-id to a list of
instances, each ``{"tokens": [...], "h": [name, kb_id, [[indices...]]],
"t": ...}``; the entity span is derived from the first mention index list.
The synthetic generator emits the same layout so downstream code never knows
which source it is running on.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError, SampleSkipped

DEFAULT_MAX_LEN = 128
DEFAULT_POS_CLIP = 40

PAD_ID = 0
OOV_ID = 1


@dataclass(frozen=True)
class Sample:
    """One relation-classification instance."""

    tokens: tuple[str, ...]
    head_span: tuple[int, int]  # inclusive-exclusive token indices
    tail_span: tuple[int, int]
    relation: str

    def __post_init__(self):
        for name, (start, end) in (("head", self.head_span), ("tail", self.tail_span)):
            if not (0 <= start < end <= len(self.tokens)):
                raise DataFormatError(
                    f"{name} span ({start}, {end}) out of range for {len(self.tokens)} tokens"
                )


@dataclass
class Dataset:
    """Samples grouped by relation id."""

    relations: dict[str, list[Sample]]

    def relation_ids(self) -> list[str]:
        return sorted(self.relations)

    def __len__(self):
        return sum(len(v) for v in self.relations.values())


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]
    oov_vector: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.oov_vector is None:
            self.oov_vector = np.zeros(self.dim)

    def lookup(self, token: str) -> np.ndarray:
        return self.vectors.get(token, self.oov_vector)


@dataclass(frozen=True)
class IndexedSample:
    """Model-ready sample: padded token ids plus clipped relative positions."""

    token_ids: tuple[int, ...]
    head_rel_pos: tuple[int, ...]
    tail_rel_pos: tuple[int, ...]
    length: int
    label: int = -1


class Vocab:
    """Token -> id mapping with reserved pad (0) and OOV (1) slots."""

    def __init__(self, tokens):
        self.token_to_id = {tok: i + 2 for i, tok in enumerate(tokens)}

    @classmethod
    def from_embeddings(cls, table: EmbeddingTable) -> "Vocab":
        return cls(sorted(table.vectors))

    def __len__(self):
        return len(self.token_to_id) + 2

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, OOV_ID)

    def embedding_matrix(self, table: EmbeddingTable) -> np.ndarray:
        """Initial word-embedding parameter: rows ordered by token id.

        Row 0 (pad) and row 1 (OOV) start at zero; both are trainable.
        """
        mat = np.zeros((len(self), table.dim))
        for tok, idx in self.token_to_id.items():
            mat[idx] = table.lookup(tok)
        return mat


# ---------------------------------------------------------------------------
# loading


def _span_from_mentions(entity, n_tokens: int, where: str):
    try:
        indices = entity[2][0]
    except (IndexError, TypeError) as err:
        raise DataFormatError(f"{where}: malformed entity record") from err
    if not indices:
        raise DataFormatError(f"{where}: empty mention index list")
    start, end = min(indices), max(indices) + 1
    if not (0 <= start < end <= n_tokens):
        raise DataFormatError(
            f"{where}: entity indices {indices} out of range for {n_tokens} tokens"
        )
    return (start, end)


def load_fewrel(path) -> Dataset:
    """Load a corpus file in the relation -> instance-list JSON layout."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise DataFormatError(f"{path}: invalid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise DataFormatError(f"{path}: expected a top-level object")
    relations: dict[str, list[Sample]] = {}
    for rel, instances in raw.items():
        samples = []
        for i, inst in enumerate(instances):
            where = f"{path}: relation {rel!r}, instance {i}"
            try:
                tokens = tuple(inst["tokens"])
                head = _span_from_mentions(inst["h"], len(tokens), where + " (head)")
                tail = _span_from_mentions(inst["t"], len(tokens), where + " (tail)")
            except (KeyError, TypeError) as err:
                raise DataFormatError(f"{where}: missing field: {err}") from err
            samples.append(Sample(tokens, head, tail, rel))
        if not samples:
            raise DataFormatError(f"{path}: relation {rel!r} has no instances")
        relations[rel] = samples
    return Dataset(relations)


def save_dataset(dataset: Dataset, path) -> None:
    """Serialize in the same JSON layout that load_fewrel reads."""
    raw = {}
    for rel, samples in dataset.relations.items():
        raw[rel] = [
            {
                "tokens": list(s.tokens),
                "h": [s.tokens[s.head_span[0]], "synth", [list(range(*s.head_span))]],
                "t": [s.tokens[s.tail_span[0]], "synth", [list(range(*s.tail_span))]],
            }
            for s in samples
        ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(raw, fh)


def load_embeddings(path, dim: int) -> EmbeddingTable:
    """Read a text file of ``token v1 v2 ... v_dim`` lines."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: expected token + {dim} values, got {len(parts)} fields"
                )
            token = parts[0]
            if token in vectors:
                continue  # first occurrence wins
            try:
                vectors[token] = np.array([float(x) for x in parts[1:]])
            except ValueError as err:
                raise DataFormatError(f"{path}:{lineno}: non-numeric value: {err}") from err
    return EmbeddingTable(dim=dim, vectors=vectors)


# ---------------------------------------------------------------------------
# synthetic corpus


def _token_rng(seed: int, token: str) -> np.random.Generator:
    return np.random.default_rng((seed, zlib.crc32(token.encode("utf-8"))))


def synth_generate(
    num_relations: int,
    per_relation: int,
    vocab_size: int,
    sentence_len: int,
    signal_strength: float,
    seed: int,
    emb_dim: int = 16,
) -> tuple[Dataset, EmbeddingTable]:
    """Generate a separable relation corpus plus matching embeddings.

    Each relation owns a disjoint pair of signature tokens; every sentence is
    random filler with the signature tokens placed at the head/tail spans, so
    relation identity is recoverable by a position-aware encoder. Embeddings
    are deterministic pseudo-random unit-scale vectors keyed by (seed, token);
    signature-token embeddings are scaled by ``signal_strength``.
    """
    if num_relations < 2 or per_relation < 2:
        raise ConfigError("synth_generate requires num_relations >= 2 and per_relation >= 2")
    if sentence_len < 3:
        raise ConfigError("sentence_len must be >= 3 to host two entities and filler")
    n_signature = 2 * num_relations
    if vocab_size <= n_signature:
        raise ConfigError(
            f"vocab_size {vocab_size} too small for {n_signature} signature tokens plus filler"
        )

    signature = [f"sig{i:03d}" for i in range(n_signature)]
    filler = [f"tok{i:04d}" for i in range(vocab_size - n_signature)]
    rng = np.random.default_rng((seed, 0))

    relations: dict[str, list[Sample]] = {}
    for r in range(num_relations):
        rel = f"rel{r:03d}"
        head_sig, tail_sig = signature[2 * r], signature[2 * r + 1]
        samples = []
        for _ in range(per_relation):
            tokens = [filler[i] for i in rng.integers(0, len(filler), size=sentence_len)]
            head_i, tail_i = rng.choice(sentence_len, size=2, replace=False)
            tokens[head_i] = head_sig
            tokens[tail_i] = tail_sig
            samples.append(
                Sample(
                    tokens=tuple(tokens),
                    head_span=(int(head_i), int(head_i) + 1),
                    tail_span=(int(tail_i), int(tail_i) + 1),
                    relation=rel,
                )
            )
        relations[rel] = samples

    vectors = {}
    for tok in signature:
        vectors[tok] = signal_strength * _token_rng(seed, tok).normal(size=emb_dim)
    for tok in filler:
        vectors[tok] = _token_rng(seed, tok).normal(size=emb_dim)
    return Dataset(relations), EmbeddingTable(dim=emb_dim, vectors=vectors)


# ---------------------------------------------------------------------------
# indexing


def index_sample(
    sample: Sample,
    vocab: Vocab,
    max_len: int = DEFAULT_MAX_LEN,
    pos_clip: int = DEFAULT_POS_CLIP,
    lowercase: bool = True,
) -> IndexedSample:
    """Convert a sample to padded token ids and clipped relative positions.

    Raises SampleSkipped when truncation at max_len cuts off an entity span
    entirely.
    """
    tokens = sample.tokens[:max_len]
    length = len(tokens)
    if sample.head_span[0] >= max_len or sample.tail_span[0] >= max_len:
        raise SampleSkipped(
            f"entity span beyond max_len={max_len} for relation {sample.relation!r}"
        )

    ids = [vocab.lookup(t.lower() if lowercase else t) for t in tokens]
    head_pos = [max(-pos_clip, min(pos_clip, i - sample.head_span[0])) for i in range(length)]
    tail_pos = [max(-pos_clip, min(pos_clip, i - sample.tail_span[0])) for i in range(length)]

    pad = max_len - length
    return IndexedSample(
        token_ids=tuple(ids) + (PAD_ID,) * pad,
        head_rel_pos=tuple(head_pos) + (0,) * pad,
        tail_rel_pos=tuple(tail_pos) + (0,) * pad,
        length=length,
    )


@dataclass
class IndexedDataset:
    """Indexed samples grouped by relation, ready for episode sampling."""

    relations: dict[str, list[IndexedSample]]
    vocab: Vocab
    max_len: int
    pos_clip: int

    def relation_ids(self) -> list[str]:
        return sorted(self.relations)


def index_dataset(
    dataset: Dataset,
    vocab: Vocab,
    max_len: int = DEFAULT_MAX_LEN,
    pos_clip: int = DEFAULT_POS_CLIP,
    lowercase: bool = True,
) -> IndexedDataset:
    """Index every sample, silently dropping the ones truncation invalidates."""
    relations: dict[str, list[IndexedSample]] = {}
    for rel, samples in dataset.relations.items():
        kept = []
        for s in samples:
            try:
                kept.append(index_sample(s, vocab, max_len, pos_clip, lowercase))
            except SampleSkipped:
                continue
        if kept:
            relations[rel] = kept
    return IndexedDataset(relations, vocab, max_len, pos_clip)
