"""Episodic optimization, evaluation, and experiment grids."""

from __future__ import annotations

import csv
import io
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import IndexedDataset
from .episodes import EpisodeConfig, InconsistentPlan, episode_rng, sample_episode
from .errors import ConfigError, TrainingDiverged
from .model import (
    EncoderConfig,
    LossWeights,
    ModelParams,
    TapedParams,
    classify,
    cross_attention_prototypes,
    encode_batch,
    init_params,
    prototypes_mean,
)
from .numerics import NumArray, Tape
from . import numerics as nm

GRID_COLUMNS = [
    "cell_id",
    "N1",
    "K1",
    "N2",
    "K2",
    "q_per_class",
    "model_variant",
    "iterations",
    "seed",
    "accuracy_mean",
    "accuracy_std",
    "wall_seconds",
    "error",
]


@dataclass(frozen=True)
class TrainConfig:
    plan: InconsistentPlan
    iterations: int = 2000
    eval_iterations: int = 500
    learning_rate: float = 0.1
    weight_decay: float = 1e-5
    grad_clip: float | None = 10.0
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    use_cross_attention: bool = False

    def __post_init__(self):
        if self.iterations < 1 or self.eval_iterations < 1:
            raise ConfigError("iterations and eval_iterations must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate and weight_decay must be nonnegative")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive or None")

    def variant_name(self) -> str:
        """Short tag used in grid reports."""
        ca = self.use_cross_attention or self.weights.lambda_dist > 0
        cl = self.weights.lambda_cl > 0 and self.weights.cl_mode != "off"
        if ca and cl:
            return "cacl"
        if ca:
            return "ca_only"
        if cl:
            return f"cl_{self.weights.cl_mode}"
        return "proto"


@dataclass
class TraceRow:
    iteration: int
    ce: float
    dist: float
    cl: float
    total: float


@dataclass
class TrainResult:
    params: ModelParams
    trace: list[TraceRow]


@dataclass
class EvalReport:
    accuracy_mean: float
    accuracy_std: float
    episodes: int
    config: EpisodeConfig


def _init_rng(seed: int) -> np.random.Generator:
    # separate substream from the episode rng so ablations with the same seed
    # see identical episode sequences
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0x1A17,)))


def train(
    dataset: IndexedDataset,
    config: TrainConfig,
    encoder_config: EncoderConfig | None = None,
    word_init: np.ndarray | None = None,
) -> TrainResult:
    """Plain SGD over one episode per iteration.

    Weight decay is added to the (optionally norm-clipped) gradients; a
    non-finite loss aborts with the iteration index and the per-component
    breakdown.
    """
    from .model import episode_loss  # local import to keep module load cheap

    if encoder_config is None:
        encoder_config = EncoderConfig(
            vocab_size=len(dataset.vocab), max_len=dataset.max_len, pos_clip=dataset.pos_clip
        )
    params = init_params(encoder_config, _init_rng(config.seed), word_init=word_init)
    named = params.named_arrays()
    trace: list[TraceRow] = []

    for it in range(config.iterations):
        episode = sample_episode(dataset, config.plan.train, episode_rng(config.seed, it))
        tape = Tape()
        taped = TapedParams.wrap(params, tape)
        result = episode_loss(episode, taped, config.weights, config.use_cross_attention)
        total = result.total.item()
        if not np.isfinite(total):
            raise TrainingDiverged(
                f"non-finite loss at iteration {it}: "
                f"ce={result.ce} dist={result.dist} cl={result.cl}"
            )
        trace.append(TraceRow(it, result.ce, result.dist, result.cl, total))

        grads = tape.backward(result.total)
        leaf = taped.leaves()
        gmap = {
            name: grads.get(leaf[name].node_id, np.zeros_like(arr))
            for name, arr in named.items()
        }
        if config.grad_clip is not None:
            gnorm = np.sqrt(sum(float(np.sum(g * g)) for g in gmap.values()))
            if gnorm > config.grad_clip:
                scale = config.grad_clip / gnorm
                gmap = {name: g * scale for name, g in gmap.items()}
        for name, arr in named.items():
            arr -= config.learning_rate * (gmap[name] + config.weight_decay * arr)

    return TrainResult(params=params, trace=trace)


def evaluate(
    dataset: IndexedDataset,
    params: ModelParams,
    config: EpisodeConfig,
    episodes: int,
    seed: int,
    use_cross_attention: bool = False,
) -> EvalReport:
    """Mean and std of per-episode query accuracy; parameters untouched."""
    taped = TapedParams.wrap(params, tape=None)
    accs = np.empty(episodes)
    for i in range(episodes):
        episode = sample_episode(dataset, config, episode_rng(seed, i))
        s_samples = [s for s, _ in episode.support]
        q_samples = [s for s, _ in episode.query]
        s_labels = np.array([c for _, c in episode.support])
        q_labels = np.array([c for _, c in episode.query])
        embs = encode_batch(s_samples + q_samples, taped)
        n_s = len(s_samples)
        s_embs = nm.gather_rows(embs, np.arange(n_s))
        q_embs = nm.gather_rows(embs, np.arange(n_s, n_s + len(q_samples)))
        correct = 0
        if use_cross_attention:
            for j in range(len(q_samples)):
                q_j = nm.reshape(nm.gather_rows(q_embs, [j]), (params.config.hidden,))
                protos = cross_attention_prototypes(
                    s_embs, s_labels, q_j, taped.proj_weight, taped.proj_bias
                )
                probs = classify(q_j, protos)
                correct += int(np.argmax(probs.values) == q_labels[j])
        else:
            protos = prototypes_mean(s_embs, s_labels)
            d = _sqdist(q_embs.values, protos.values)
            correct = int(np.sum(np.argmin(d, axis=1) == q_labels))
        accs[i] = correct / len(q_samples)
    return EvalReport(
        accuracy_mean=float(accs.mean()),
        accuracy_std=float(accs.std()) if episodes > 1 else 0.0,
        episodes=episodes,
        config=config,
    )


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)


# ---------------------------------------------------------------------------
# experiment grids


@dataclass
class GridSpec:
    cells: list[tuple[str, TrainConfig]]
    axis: str | None = None  # which of N1/K1/N2/K2 varies, for trend checks

    def __post_init__(self):
        ids = [cid for cid, _ in self.cells]
        if len(set(ids)) != len(ids):
            raise ConfigError("grid cell ids must be unique")


def run_grid(
    dataset: IndexedDataset,
    spec: GridSpec,
    jobs: int = 1,
    encoder_config: EncoderConfig | None = None,
    word_init: np.ndarray | None = None,
) -> list[dict]:
    """Train and evaluate every cell; per-cell failures are recorded in the
    row and do not abort the remaining cells. Row order follows the spec."""

    def run_cell(item):
        cell_id, cfg = item
        row = {
            "cell_id": cell_id,
            "N1": cfg.plan.train.n_way,
            "K1": cfg.plan.train.k_shot,
            "N2": cfg.plan.infer.n_way,
            "K2": cfg.plan.infer.k_shot,
            "q_per_class": cfg.plan.infer.q_per_class,
            "model_variant": cfg.variant_name(),
            "iterations": cfg.iterations,
            "seed": cfg.seed,
            "accuracy_mean": "",
            "accuracy_std": "",
            "wall_seconds": "",
            "error": "",
        }
        start = time.perf_counter()
        try:
            trained = train(dataset, cfg, encoder_config=encoder_config, word_init=word_init)
            report = evaluate(
                dataset,
                trained.params,
                cfg.plan.infer,
                cfg.eval_iterations,
                # disjoint from the training stream
                seed=cfg.seed + 1_000_003,
                use_cross_attention=cfg.use_cross_attention,
            )
            row["accuracy_mean"] = report.accuracy_mean
            row["accuracy_std"] = report.accuracy_std
        except Exception:
            row["error"] = traceback.format_exc(limit=1).strip().splitlines()[-1]
        row["wall_seconds"] = round(time.perf_counter() - start, 3)
        return row

    if jobs <= 1:
        return [run_cell(item) for item in spec.cells]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_cell, spec.cells))


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=GRID_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in GRID_COLUMNS})
    return buf.getvalue()


def rows_to_markdown(rows: list[dict]) -> str:
    lines = ["| " + " | ".join(GRID_COLUMNS) + " |", "|" + "---|" * len(GRID_COLUMNS)]
    for row in rows:
        lines.append("| " + " | ".join(str(row.get(k, "")) for k in GRID_COLUMNS) + " |")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# trend verification


@dataclass
class TrendReport:
    axis: str
    direction: str
    passed: bool
    vacuous: bool
    margins: list[tuple[float, float, float]]  # (axis value step end, prev acc, margin)


def trend_check(rows: list[dict], axis: str, direction: str) -> TrendReport:
    """Verify a directional accuracy claim along one grid axis.

    Cells sharing an axis value (e.g. different seeds) are averaged before
    the comparison. ``direction`` is one of increasing / decreasing /
    non-increasing / non-decreasing; strict directions use strict
    comparisons. A single-point axis passes vacuously.
    """
    if axis not in ("N1", "K1", "N2", "K2"):
        raise ConfigError(f"unknown trend axis {axis!r}")
    ok_rows = [r for r in rows if r.get("error", "") in ("", None) and r.get("accuracy_mean") != ""]
    if not ok_rows:
        raise ConfigError("no successful cells to check")
    by_value: dict[float, list[float]] = {}
    for r in ok_rows:
        by_value.setdefault(float(r[axis]), []).append(float(r["accuracy_mean"]))
    points = sorted((v, float(np.mean(accs))) for v, accs in by_value.items())
    if len(points) < 2:
        return TrendReport(axis, direction, passed=True, vacuous=True, margins=[])

    checks = {
        "increasing": lambda d: d > 0,
        "decreasing": lambda d: d < 0,
        "non-increasing": lambda d: d <= 0,
        "non-decreasing": lambda d: d >= 0,
    }
    if direction not in checks:
        raise ConfigError(f"unknown direction {direction!r}")
    margins = []
    passed = True
    for (_, prev_acc), (value, acc) in zip(points, points[1:]):
        delta = acc - prev_acc
        margins.append((value, prev_acc, delta))
        if not checks[direction](delta):
            passed = False
    return TrendReport(axis, direction, passed=passed, vacuous=False, margins=margins)


# ---------------------------------------------------------------------------
# grid builders mirroring the shapes of the inconsistent-K / inconsistent-N /
# ablation experiments


def inconsistent_k_grid(
    n_way: int, train_shots, test_shots, base: TrainConfig
) -> GridSpec:
    cells = []
    for k1 in train_shots:
        for k2 in test_shots:
            plan = InconsistentPlan(
                train=replace(base.plan.train, n_way=n_way, k_shot=k1),
                infer=replace(base.plan.infer, n_way=n_way, k_shot=k2),
            )
            cells.append((f"{n_way}-{n_way}-{k1}-{k2}", replace(base, plan=plan)))
    return GridSpec(cells=cells, axis="K2")


def inconsistent_n_grid(
    k_shot: int, train_ways, test_ways, base: TrainConfig
) -> GridSpec:
    cells = []
    for n1 in train_ways:
        for n2 in test_ways:
            plan = InconsistentPlan(
                train=replace(base.plan.train, n_way=n1, k_shot=k_shot),
                infer=replace(base.plan.infer, n_way=n2, k_shot=k_shot),
            )
            cells.append((f"{n1}-{n2}-{k_shot}-{k_shot}", replace(base, plan=plan)))
    return GridSpec(cells=cells, axis="N2")


def ablation_grid(base: TrainConfig) -> GridSpec:
    """Six rows: plain prototypes, the three contrastive-only modes, the
    no-contrastive variant, and the full model."""
    def variant(use_ca: bool, lam_dist: float, lam_cl: float, cl_mode: str) -> TrainConfig:
        return replace(
            base,
            use_cross_attention=use_ca,
            weights=LossWeights(
                lambda_ce=base.weights.lambda_ce,
                lambda_dist=lam_dist,
                lambda_cl=lam_cl,
                cl_mode=cl_mode,
            ),
        )

    lam_d, lam_c = base.weights.lambda_dist, base.weights.lambda_cl
    cells = [
        ("proto", variant(False, 0.0, 0.0, "off")),
        ("proto_cl_support", variant(False, 0.0, lam_c, "support")),
        ("proto_cl_query", variant(False, 0.0, lam_c, "query")),
        ("proto_cl_both", variant(False, 0.0, lam_c, "support_and_query")),
        ("no_cl", variant(True, lam_d, 0.0, "off")),
        ("full", variant(True, lam_d, lam_c, "support_and_query")),
    ]
    return GridSpec(cells=cells)
