"""Encoder and training losses.

The classifier is a prototype network over CNN sentence embeddings. On top
of it sit three optional training signals:

- a support->query distribution constraint: each support instance's
  dot-product attention over the query set should look alike within a class
  and differ across classes (intra/inter variance ratio over the pairwise
  class matrix);
- query-conditioned prototypes: support instances are reweighted per query
  by a tanh-projection attention instead of the plain mean;
- a contrastive loss over instance embeddings using a cosine-logistic
  distance, applied to the support set, the query set, or both.

The total objective is a weighted sum of cross-entropy and the two
auxiliary losses.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .data import IndexedSample
from .episodes import Episode
from .errors import CheckpointMismatch, ConfigError, ContractError, DataFormatError, DomainError
from .numerics import NumArray, Tape

logger = logging.getLogger(__name__)

RATIO_EPS = 1e-8  # denominator guard for the ratio losses
NORM_EPS = 1e-12

CL_MODES = ("off", "support", "query", "support_and_query")


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture hyperparameters; the checkpoint fingerprint hashes these."""

    vocab_size: int
    word_dim: int = 50
    pos_dim: int = 5
    hidden: int = 230
    window: int = 3
    max_len: int = 128
    pos_clip: int = 40

    def __post_init__(self):
        if min(self.vocab_size, self.word_dim, self.pos_dim, self.hidden, self.window) < 1:
            raise ConfigError(f"encoder dimensions must be positive: {self}")

    @property
    def feature_dim(self) -> int:
        return self.word_dim + 2 * self.pos_dim

    def fingerprint(self) -> str:
        blob = json.dumps(self.__dict__, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class EncoderParams:
    word_emb: np.ndarray  # (V, Dw)
    pos_emb_head: np.ndarray  # (2*pos_clip+1, Dp)
    pos_emb_tail: np.ndarray
    conv_filters: np.ndarray  # (H, window * feature_dim)
    conv_bias: np.ndarray  # (H,)


@dataclass
class AttentionParams:
    proj_weight: np.ndarray  # (H, H)
    proj_bias: np.ndarray  # (H,)


@dataclass
class ModelParams:
    config: EncoderConfig
    encoder: EncoderParams
    attention: AttentionParams

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {
            "word_emb": self.encoder.word_emb,
            "pos_emb_head": self.encoder.pos_emb_head,
            "pos_emb_tail": self.encoder.pos_emb_tail,
            "conv_filters": self.encoder.conv_filters,
            "conv_bias": self.encoder.conv_bias,
            "proj_weight": self.attention.proj_weight,
            "proj_bias": self.attention.proj_bias,
        }


@dataclass(frozen=True)
class LossWeights:
    lambda_ce: float = 1.0
    lambda_dist: float = 0.1
    lambda_cl: float = 0.1
    cl_mode: str = "support_and_query"

    def __post_init__(self):
        if min(self.lambda_ce, self.lambda_dist, self.lambda_cl) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.lambda_ce + self.lambda_dist + self.lambda_cl <= 0:
            raise ConfigError("at least one loss weight must be positive")
        if self.cl_mode not in CL_MODES:
            raise ConfigError(f"cl_mode must be one of {CL_MODES}, got {self.cl_mode!r}")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(
    config: EncoderConfig, rng: np.random.Generator, word_init: np.ndarray | None = None
) -> ModelParams:
    """Initialize trainable parameters (word rows optionally from pretrained vectors)."""
    if word_init is not None:
        if word_init.shape != (config.vocab_size, config.word_dim):
            raise ConfigError(
                f"word_init shape {word_init.shape} does not match "
                f"({config.vocab_size}, {config.word_dim})"
            )
        word = word_init.astype(np.float64).copy()
    else:
        word = 0.1 * rng.standard_normal((config.vocab_size, config.word_dim))
    n_pos = 2 * config.pos_clip + 1
    fdim = config.feature_dim
    enc = EncoderParams(
        word_emb=word,
        pos_emb_head=rng.uniform(-0.1, 0.1, size=(n_pos, config.pos_dim)),
        pos_emb_tail=rng.uniform(-0.1, 0.1, size=(n_pos, config.pos_dim)),
        conv_filters=_glorot(
            rng, config.window * fdim, config.hidden, (config.hidden, config.window * fdim)
        ),
        conv_bias=np.zeros(config.hidden),
    )
    attn = AttentionParams(
        proj_weight=_glorot(rng, config.hidden, config.hidden, (config.hidden, config.hidden)),
        proj_bias=np.zeros(config.hidden),
    )
    return ModelParams(config=config, encoder=enc, attention=attn)


@dataclass
class TapedParams:
    """ModelParams wrapped as leaves on a tape (or as constants for eval)."""

    word_emb: NumArray
    pos_emb_head: NumArray
    pos_emb_tail: NumArray
    conv_filters: NumArray
    conv_bias: NumArray
    proj_weight: NumArray
    proj_bias: NumArray
    config: EncoderConfig

    @classmethod
    def wrap(cls, params: ModelParams, tape: Tape | None) -> "TapedParams":
        named = params.named_arrays()
        return cls(
            **{k: nm.array(v, tape) for k, v in named.items()}, config=params.config
        )

    def leaves(self) -> dict[str, NumArray]:
        return {
            "word_emb": self.word_emb,
            "pos_emb_head": self.pos_emb_head,
            "pos_emb_tail": self.pos_emb_tail,
            "conv_filters": self.conv_filters,
            "conv_bias": self.conv_bias,
            "proj_weight": self.proj_weight,
            "proj_bias": self.proj_bias,
        }


# ---------------------------------------------------------------------------
# encoder


def encode_batch(samples: list[IndexedSample], p: TapedParams) -> NumArray:
    """Encode a batch of indexed samples into (B, H) sentence embeddings.

    Per position: word + two position embeddings, concatenated; 1-D
    convolution (zero padded, stride 1); ReLU; max-pool over the true length
    (padding excluded).
    """
    cfg = p.config
    b = len(samples)
    if b == 0:
        raise ContractError("encode_batch requires at least one sample")
    lengths = np.array([s.length for s in samples], dtype=np.int64)
    if np.any(lengths < 1):
        raise ContractError("cannot encode a zero-length sample")
    max_len = cfg.max_len
    ids = np.array([s.token_ids for s in samples], dtype=np.int64)
    hpos = np.array([s.head_rel_pos for s in samples], dtype=np.int64) + cfg.pos_clip
    tpos = np.array([s.tail_rel_pos for s in samples], dtype=np.int64) + cfg.pos_clip
    if ids.shape[1] != max_len:
        raise ContractError(
            f"samples indexed with max_len={ids.shape[1]}, encoder expects {max_len}"
        )

    wv = nm.gather_rows(p.word_emb, ids.ravel())
    hv = nm.gather_rows(p.pos_emb_head, hpos.ravel())
    tv = nm.gather_rows(p.pos_emb_tail, tpos.ravel())
    feats = nm.concat([wv, hv, tv], axis=1)  # (B*L, Dw + 2*Dp)
    windows = nm.window_concat(nm.reshape(feats, (b, max_len, cfg.feature_dim)), cfg.window)
    flat = nm.reshape(windows, (b * max_len, cfg.window * cfg.feature_dim))
    conv = nm.add(nm.matmul(flat, nm.transpose(p.conv_filters)), p.conv_bias)
    activ = nm.relu(conv)
    return nm.masked_max(nm.reshape(activ, (b, max_len, cfg.hidden)), lengths)


def encode(sample: IndexedSample, p: TapedParams) -> NumArray:
    """Encode one sample to an (H,) embedding."""
    out = encode_batch([sample], p)
    return nm.reshape(out, (p.config.hidden,))


# ---------------------------------------------------------------------------
# prototypes and classification


def _group_indices(labels) -> list[np.ndarray]:
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if classes.size and not np.array_equal(classes, np.arange(classes.size)):
        raise ContractError(f"labels must cover 0..N-1, got classes {classes.tolist()}")
    groups = [np.flatnonzero(labels == c) for c in classes]
    if any(g.size == 0 for g in groups):
        raise ContractError("every class needs at least one sample")
    return groups


def prototypes_mean(support_embs: NumArray, labels) -> NumArray:
    """Per-class arithmetic mean of support embeddings -> (N, H)."""
    groups = _group_indices(labels)
    m = support_embs.values.shape[0]
    weights = np.zeros((len(groups), m))
    for c, idx in enumerate(groups):
        weights[c, idx] = 1.0 / idx.size
    return nm.matmul(nm.constant(weights), support_embs)


def classify(query_emb: NumArray, prototypes: NumArray) -> NumArray:
    """Probability vector over classes: softmax of negative squared distances."""
    h = query_emb.values.shape[-1]
    diff = nm.sub(prototypes, nm.reshape(query_emb, (1, h)))
    logits = nm.neg(nm.reduce_sum(nm.square(diff), axis=1))
    return nm.softmax(logits, axis=-1)


def cross_attention_prototypes(
    support_embs: NumArray, labels, query_emb: NumArray, attn_w: NumArray, attn_b: NumArray
) -> NumArray:
    """Query-conditioned prototypes: within each class, support instances are
    weighted by softmax of sum-of-dims tanh(h(s) * h(q)) -> (N, H).

    With a single support instance per class this reduces exactly to the mean
    prototype (softmax over one element is 1).
    """
    groups = _group_indices(labels)
    h = query_emb.values.shape[-1]
    hs = nm.add(nm.matmul(support_embs, nm.transpose(attn_w)), attn_b)
    hq = nm.add(nm.matmul(nm.reshape(query_emb, (1, h)), nm.transpose(attn_w)), attn_b)
    scores = nm.reduce_sum(nm.tanh(nm.mul(hs, hq)), axis=1)  # (M,)

    counts = {g.size for g in groups}
    if len(counts) == 1 and all(
        np.array_equal(g, np.arange(c * g.size, (c + 1) * g.size))
        for c, g in enumerate(groups)
    ):
        # class-major layout with equal shots: fully vectorized
        n, k = len(groups), groups[0].size
        alpha = nm.softmax(nm.reshape(scores, (n, k)), axis=1)
        weighted = nm.mul(support_embs, nm.reshape(alpha, (n * k, 1)))
        return nm.reduce_sum(nm.reshape(weighted, (n, k, h)), axis=1)

    rows = []
    score_col = nm.reshape(scores, (scores.values.shape[0], 1))
    for idx in groups:
        alpha = nm.softmax(nm.gather_rows(score_col, idx), axis=0)  # (k, 1)
        rows.append(
            nm.reduce_sum(nm.mul(nm.gather_rows(support_embs, idx), alpha), axis=0, keepdims=True)
        )
    return nm.concat(rows, axis=0)


# ---------------------------------------------------------------------------
# support -> query distribution constraint


@dataclass
class DistributionMatrix:
    """Row (r, i): softmax-normalized attention of support instance i of
    class r over the query set."""

    rows: NumArray  # (N*K, |Q|)
    class_of_row: np.ndarray = field(default=None)  # type: ignore[assignment]


def support_query_distributions(
    support_embs: NumArray, query_embs: NumArray, labels=None
) -> DistributionMatrix:
    """Dot-product attention of each support instance over all queries,
    softmax-normalized per row so rows are comparable as distributions."""
    n_query = query_embs.values.shape[0]
    if n_query < 2:
        raise ConfigError(
            f"support->query distributions need at least 2 queries, got {n_query}"
        )
    raw = nm.matmul(support_embs, nm.transpose(query_embs))
    rows = nm.softmax(raw, axis=1)
    class_of_row = None if labels is None else np.asarray(labels, dtype=np.int64)
    return DistributionMatrix(rows=rows, class_of_row=class_of_row)


def _pair_masks(labels) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels, dtype=np.int64)
    if np.unique(labels).size < 2:
        raise ContractError("pairwise ratio losses need at least 2 classes")
    same = (labels[:, None] == labels[None, :]).astype(np.float64)
    return same, 1.0 - same


def _pairwise_sqdist(x: NumArray) -> NumArray:
    """All-pairs squared Euclidean distances between rows of x -> (M, M)."""
    sq = nm.reduce_sum(nm.square(x), axis=1, keepdims=True)  # (M, 1)
    gram = nm.matmul(x, nm.transpose(x))
    return nm.sub(nm.add(sq, nm.transpose(sq)), nm.mul(gram, 2.0))


def distribution_loss(dmat: DistributionMatrix, metric: str = "sqeuclid") -> NumArray:
    """Intra-class over inter-class sum of pairwise distribution distances.

    Ordered pairs, i=j included in the numerator (contributing zero); the
    denominator carries a small epsilon so collapsed embeddings stay finite.
    """
    if dmat.class_of_row is None:
        raise ContractError("distribution matrix has no class labels attached")
    same, diff = _pair_masks(dmat.class_of_row)
    if metric == "sqeuclid":
        dists = _pairwise_sqdist(dmat.rows)
    elif metric == "sym_kl":
        logs = nm.log(dmat.rows)
        cross = nm.matmul(dmat.rows, nm.transpose(logs))  # (i,j): sum_k a_ik log a_jk
        self_term = nm.reduce_sum(nm.mul(dmat.rows, logs), axis=1, keepdims=True)
        dists = nm.sub(
            nm.add(self_term, nm.transpose(self_term)), nm.add(cross, nm.transpose(cross))
        )
    else:
        raise ConfigError(f"unknown distribution metric {metric!r}")
    num = nm.reduce_sum(nm.mul(dists, nm.constant(same)))
    den = nm.add(nm.reduce_sum(nm.mul(dists, nm.constant(diff))), RATIO_EPS)
    if den.values < 10 * RATIO_EPS:
        logger.warning("distribution loss denominator is epsilon-dominated (collapsed rows)")
    return nm.div(num, den)


# ---------------------------------------------------------------------------
# contrastive loss


def contrastive_distance(a: NumArray, b: NumArray) -> NumArray:
    """Cosine-logistic distance 1 / (1 + exp(cos(a, b))).

    Bounded in (1/(1+e), 1/(1+1/e)); strictly decreasing in cosine
    similarity; invariant under positive rescaling of either argument.
    """
    cos = nm.reduce_sum(nm.mul(nm.l2_normalize(a), nm.l2_normalize(b)))
    return nm.div(1.0, nm.add(nm.exp(cos), 1.0))


def contrastive_loss(embs: NumArray, labels) -> NumArray:
    """Ratio of exp(distance) sums: same-class ordered pairs (i=j included)
    over cross-class ordered pairs, epsilon-guarded."""
    same, diff = _pair_masks(labels)
    norms = np.linalg.norm(embs.values, axis=1)
    if np.any(norms <= NORM_EPS):
        raise DomainError("contrastive loss hit a near-zero embedding")
    unit = nm.div(embs, nm.sqrt(nm.reduce_sum(nm.square(embs), axis=1, keepdims=True)))
    cos = nm.matmul(unit, nm.transpose(unit))
    dist = nm.div(1.0, nm.add(nm.exp(cos), 1.0))
    e = nm.exp(dist)
    num = nm.reduce_sum(nm.mul(e, nm.constant(same)))
    den = nm.add(nm.reduce_sum(nm.mul(e, nm.constant(diff))), RATIO_EPS)
    return nm.div(num, den)


# ---------------------------------------------------------------------------
# episode objective


def _log_softmax(logits: NumArray, axis: int) -> NumArray:
    shift = nm.constant(logits.values.max(axis=axis, keepdims=True))
    z = nm.sub(logits, shift)
    lse = nm.add(nm.log(nm.reduce_sum(nm.exp(z), axis=axis, keepdims=True)), shift)
    return nm.sub(logits, lse)


@dataclass
class EpisodeLoss:
    total: NumArray
    probs: np.ndarray  # (|Q|, N)
    ce: float
    dist: float
    cl: float


def episode_loss(
    episode: Episode,
    params: TapedParams,
    weights: LossWeights,
    use_cross_attention: bool = False,
) -> EpisodeLoss:
    """Weighted total of cross-entropy, distribution, and contrastive losses.

    Auxiliary losses with zero weight are skipped entirely, so a (1, 0, 0)
    weighting with cross-attention off is computationally identical to a
    vanilla prototype-network objective.
    """
    s_samples = [s for s, _ in episode.support]
    q_samples = [s for s, _ in episode.query]
    s_labels = np.array([c for _, c in episode.support], dtype=np.int64)
    q_labels = np.array([c for _, c in episode.query], dtype=np.int64)
    n_way = len(episode.class_to_relation)
    n_s, n_q = len(s_samples), len(q_samples)

    embs = encode_batch(s_samples + q_samples, params)
    s_embs = nm.gather_rows(embs, np.arange(n_s))
    q_embs = nm.gather_rows(embs, np.arange(n_s, n_s + n_q))
    h = params.config.hidden

    if use_cross_attention:
        terms = []
        probs = np.empty((n_q, n_way))
        for j in range(n_q):
            q_j = nm.reshape(nm.gather_rows(q_embs, [j]), (h,))
            protos = cross_attention_prototypes(
                s_embs, s_labels, q_j, params.proj_weight, params.proj_bias
            )
            diff = nm.sub(protos, nm.reshape(q_j, (1, h)))
            logits = nm.reshape(nm.neg(nm.reduce_sum(nm.square(diff), axis=1)), (1, n_way))
            logp = _log_softmax(logits, axis=1)
            onehot = np.zeros((1, n_way))
            onehot[0, q_labels[j]] = 1.0
            terms.append(nm.neg(nm.reduce_sum(nm.mul(logp, nm.constant(onehot)))))
            probs[j] = nm.softmax(logits, axis=1).values[0]
        stacked = nm.concat([nm.reshape(t, (1,)) for t in terms], axis=0)
        ce = nm.reduce_mean(stacked)
    else:
        protos = prototypes_mean(s_embs, s_labels)
        dists = _pairwise_sqdist_cross(q_embs, protos)
        logits = nm.neg(dists)
        logp = _log_softmax(logits, axis=1)
        onehot = np.zeros((n_q, n_way))
        onehot[np.arange(n_q), q_labels] = 1.0
        ce = nm.neg(nm.reduce_mean(nm.reduce_sum(nm.mul(logp, nm.constant(onehot)), axis=1)))
        probs = nm.softmax(logits, axis=1).values

    total = nm.mul(ce, weights.lambda_ce)
    dist_val = 0.0
    if weights.lambda_dist > 0:
        dmat = support_query_distributions(s_embs, q_embs, s_labels)
        l_dist = distribution_loss(dmat)
        dist_val = l_dist.item()
        total = nm.add(total, nm.mul(l_dist, weights.lambda_dist))
    cl_val = 0.0
    if weights.lambda_cl > 0 and weights.cl_mode != "off":
        if weights.cl_mode == "support":
            cl_embs, cl_labels = s_embs, s_labels
        elif weights.cl_mode == "query":
            cl_embs, cl_labels = q_embs, q_labels
        else:
            cl_embs, cl_labels = embs, np.concatenate([s_labels, q_labels])
        l_cl = contrastive_loss(cl_embs, cl_labels)
        cl_val = l_cl.item()
        total = nm.add(total, nm.mul(l_cl, weights.lambda_cl))

    return EpisodeLoss(total=total, probs=probs, ce=ce.item(), dist=dist_val, cl=cl_val)


def _pairwise_sqdist_cross(a: NumArray, b: NumArray) -> NumArray:
    """Squared distances between rows of a (Q, H) and rows of b (N, H) -> (Q, N)."""
    sa = nm.reduce_sum(nm.square(a), axis=1, keepdims=True)
    sb = nm.reduce_sum(nm.square(b), axis=1, keepdims=True)
    gram = nm.matmul(a, nm.transpose(b))
    return nm.sub(nm.add(sa, nm.transpose(sb)), nm.mul(gram, 2.0))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ModelParams) -> None:
    """Versioned JSON record of named arrays; decimals at 17 significant
    digits so values round-trip bit-exactly."""
    record = {
        "version": 1,
        "fingerprint": params.config.fingerprint(),
        "config": dict(params.config.__dict__),
        "arrays": {
            name: {
                "shape": list(arr.shape),
                "values": [format(x, ".17g") for x in arr.ravel()],
            }
            for name, arr in params.named_arrays().items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh)


def load_checkpoint(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        record = json.load(fh)
    if record.get("version") != 1:
        raise DataFormatError(f"{path}: unsupported checkpoint version {record.get('version')}")
    config = EncoderConfig(**record["config"])
    if record["fingerprint"] != config.fingerprint():
        raise CheckpointMismatch(
            f"checkpoint fingerprint {record['fingerprint']} does not match "
            f"config fingerprint {config.fingerprint()}"
        )

    def arr(name):
        entry = record["arrays"][name]
        return np.array([float(x) for x in entry["values"]]).reshape(entry["shape"])

    enc = EncoderParams(
        word_emb=arr("word_emb"),
        pos_emb_head=arr("pos_emb_head"),
        pos_emb_tail=arr("pos_emb_tail"),
        conv_filters=arr("conv_filters"),
        conv_bias=arr("conv_bias"),
    )
    attn = AttentionParams(proj_weight=arr("proj_weight"), proj_bias=arr("proj_bias"))
    return ModelParams(config=config, encoder=enc, attention=attn)
