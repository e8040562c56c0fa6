"""Training loop, evaluation, grids, and trend checks."""

import numpy as np
import pytest

from protoep.data import Vocab, index_dataset, synth_generate
from protoep.episodes import EpisodeConfig, InconsistentPlan
from protoep.errors import ConfigError
from protoep.model import EncoderConfig, LossWeights, init_params, save_checkpoint
from protoep.training import (
    GridSpec,
    TrainConfig,
    ablation_grid,
    evaluate,
    inconsistent_k_grid,
    inconsistent_n_grid,
    rows_to_csv,
    rows_to_markdown,
    run_grid,
    train,
    trend_check,
)
from conftest import TOY_ENCODER


def _plan(n1=2, k1=2, n2=2, k2=2, q=2):
    return InconsistentPlan(
        train=EpisodeConfig(n1, k1, q), infer=EpisodeConfig(n2, k2, q)
    )


def _encoder(toy_corpus):
    _, table, vocab, _ = toy_corpus
    config = EncoderConfig(vocab_size=len(vocab), word_dim=table.dim, **TOY_ENCODER)
    return config, 0.2 * vocab.embedding_matrix(table)


def _config(**kw):
    defaults = dict(
        plan=_plan(),
        iterations=5,
        eval_iterations=5,
        weights=LossWeights(1.0, 0.0, 0.0, "off"),
        use_cross_attention=False,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


def test_config_validation():
    with pytest.raises(ConfigError):
        _config(iterations=0)
    with pytest.raises(ConfigError):
        _config(learning_rate=-1.0)
    with pytest.raises(ConfigError):
        _config(grad_clip=0.0)


def test_variant_names():
    assert _config().variant_name() == "proto"
    assert _config(use_cross_attention=True).variant_name() == "ca_only"
    assert _config(weights=LossWeights(1.0, 0.0, 0.1, "query")).variant_name() == "cl_query"
    assert (
        _config(
            use_cross_attention=True, weights=LossWeights(1.0, 0.1, 0.1, "support_and_query")
        ).variant_name()
        == "cacl"
    )


def test_lr_zero_is_noop(toy_corpus, toy_indexed):
    enc, word_init = _encoder(toy_corpus)
    cfg = _config(learning_rate=0.0, weight_decay=0.0, iterations=3)
    result = train(toy_indexed, cfg, encoder_config=enc, word_init=word_init)
    # rebuild the exact initial parameters from the same init rng stream
    from protoep.training import _init_rng

    fresh = init_params(enc, _init_rng(cfg.seed), word_init=word_init)
    for name, arr in result.params.named_arrays().items():
        assert np.array_equal(arr, fresh.named_arrays()[name]), name


def test_training_loss_decreases(toy_corpus, toy_indexed):
    enc, word_init = _encoder(toy_corpus)
    cfg = _config(iterations=300)
    result = train(toy_indexed, cfg, encoder_config=enc, word_init=word_init)
    first = np.mean([r.total for r in result.trace[:100]])
    last = np.mean([r.total for r in result.trace[-100:]])
    assert last < first


def test_trace_determinism(toy_corpus, toy_indexed):
    enc, word_init = _encoder(toy_corpus)
    cfg = _config(iterations=20)
    a = train(toy_indexed, cfg, encoder_config=enc, word_init=word_init)
    b = train(toy_indexed, cfg, encoder_config=enc, word_init=word_init)
    assert [r.total for r in a.trace] == [r.total for r in b.trace]


def test_weight_decay_shrinks_norm(toy_corpus, toy_indexed):
    """A parameter with zero gradient (the attention projection is unused in
    plain prototype mode) must strictly shrink under weight decay."""
    enc, word_init = _encoder(toy_corpus)
    cfg = _config(iterations=1, learning_rate=0.5, weight_decay=0.1)
    result = train(toy_indexed, cfg, encoder_config=enc, word_init=word_init)
    from protoep.training import _init_rng

    fresh = init_params(enc, _init_rng(cfg.seed), word_init=word_init)
    before = np.linalg.norm(fresh.attention.proj_weight)
    after = np.linalg.norm(result.params.attention.proj_weight)
    assert 0.0 < after < before


def test_evaluate_untrained_near_chance():
    """On a corpus where every relation draws from the same token
    distribution there is nothing to learn, so an untrained encoder must
    score at chance."""
    from protoep.data import Dataset, Sample

    rng = np.random.default_rng(123)
    pool = [f"w{i}" for i in range(30)]
    relations = {}
    for r in range(4):
        samples = []
        for _ in range(12):
            tokens = tuple(rng.choice(pool, size=6))
            spots = rng.choice(6, size=2, replace=False)
            samples.append(
                Sample(tokens, (int(spots[0]), int(spots[0]) + 1),
                       (int(spots[1]), int(spots[1]) + 1), f"r{r}")
            )
        relations[f"r{r}"] = samples
    vocab = Vocab(pool)
    indexed = index_dataset(Dataset(relations), vocab, max_len=6, pos_clip=4)
    enc = EncoderConfig(vocab_size=len(vocab), word_dim=6, **TOY_ENCODER)
    params = init_params(enc, np.random.default_rng(5))
    report = evaluate(indexed, params, EpisodeConfig(4, 1, 2), episodes=1000, seed=3)
    p = 0.25
    # episode accuracies are not independent Bernoulli draws; use the
    # empirical episode std for the standard error
    se = report.accuracy_std / np.sqrt(report.episodes)
    assert abs(report.accuracy_mean - p) <= 5 * se


def test_evaluate_std_zero_single_episode(toy_corpus, toy_indexed):
    enc, word_init = _encoder(toy_corpus)
    params = init_params(enc, np.random.default_rng(0), word_init=word_init)
    report = evaluate(toy_indexed, params, EpisodeConfig(2, 1, 2), episodes=1, seed=0)
    assert report.accuracy_std == 0.0
    assert report.episodes == 1


def test_evaluate_does_not_mutate_params(toy_corpus, toy_indexed, tmp_path):
    enc, word_init = _encoder(toy_corpus)
    params = init_params(enc, np.random.default_rng(1), word_init=word_init)
    before = tmp_path / "before.json"
    after = tmp_path / "after.json"
    save_checkpoint(before, params)
    evaluate(
        toy_indexed, params, EpisodeConfig(2, 2, 2), episodes=10, seed=1,
        use_cross_attention=True,
    )
    save_checkpoint(after, params)
    assert before.read_bytes() == after.read_bytes()


def test_grid_spec_unique_ids():
    with pytest.raises(ConfigError):
        GridSpec(cells=[("a", _config()), ("a", _config())])


def test_inconsistent_k_grid_twelve_rows():
    spec = inconsistent_k_grid(5, [5, 10, 20], [1, 5, 10, 20], _config())
    assert len(spec.cells) == 12
    assert spec.axis == "K2"
    _, first = spec.cells[0]
    assert first.plan.train.k_shot == 5 and first.plan.infer.k_shot == 1


def test_inconsistent_n_grid_shape():
    spec = inconsistent_n_grid(5, [5, 10, 20], [5, 10], _config())
    assert len(spec.cells) == 6
    assert spec.axis == "N2"


def test_ablation_grid_six_rows():
    base = _config(
        use_cross_attention=True, weights=LossWeights(1.0, 0.1, 0.1, "support_and_query")
    )
    spec = ablation_grid(base)
    ids = [cid for cid, _ in spec.cells]
    assert ids == ["proto", "proto_cl_support", "proto_cl_query", "proto_cl_both", "no_cl", "full"]
    variants = [cfg.variant_name() for _, cfg in spec.cells]
    assert variants == ["proto", "cl_support", "cl_query", "cl_support_and_query", "ca_only", "cacl"]


def test_run_grid_empty():
    assert run_grid(None, GridSpec(cells=[])) == []
    assert rows_to_csv([]).strip().split(",")[0] == "cell_id"


def test_run_grid_rows_and_error_isolation(toy_corpus, toy_indexed):
    enc, word_init = _encoder(toy_corpus)
    good = _config(iterations=3, eval_iterations=2)
    # needs 20-shot support from 20-sample relations plus queries: impossible
    bad = _config(plan=_plan(k1=20, q=5), iterations=3, eval_iterations=2)
    spec = GridSpec(cells=[("bad", bad), ("good", good)])
    rows = run_grid(toy_indexed, spec, encoder_config=enc, word_init=word_init)
    assert [r["cell_id"] for r in rows] == ["bad", "good"]
    assert rows[0]["error"] != "" and rows[0]["accuracy_mean"] == ""
    assert rows[1]["error"] == "" and 0.0 <= rows[1]["accuracy_mean"] <= 1.0


def test_run_grid_jobs_independent(toy_corpus, toy_indexed):
    enc, word_init = _encoder(toy_corpus)
    spec = GridSpec(
        cells=[(f"s{seed}", _config(seed=seed, iterations=4, eval_iterations=3)) for seed in range(3)]
    )

    def accs(jobs):
        rows = run_grid(toy_indexed, spec, jobs=jobs, encoder_config=enc, word_init=word_init)
        return [(r["cell_id"], r["accuracy_mean"], r["accuracy_std"]) for r in rows]

    assert accs(1) == accs(3)


def test_rows_to_markdown_header():
    rows = [{"cell_id": "x", "accuracy_mean": 0.5}]
    md = rows_to_markdown(rows)
    assert md.splitlines()[0].startswith("| cell_id |")
    assert "| x |" in md


def _trend_rows(axis, values, accs):
    return [
        {"cell_id": str(i), "N1": 5, "K1": 5, "N2": 5, "K2": 5, axis: v,
         "accuracy_mean": a, "error": ""}
        for i, (v, a) in enumerate(zip(values, accs))
    ]


def test_trend_check_figure_values_decreasing_in_k1():
    # published pilot accuracies at fixed test shots for increasing train shots
    rows = _trend_rows("K1", [1, 5, 10], [76.70, 75.67, 75.39])
    report = trend_check(rows, "K1", "decreasing")
    assert report.passed and not report.vacuous
    assert len(report.margins) == 2
    assert report.margins[0][2] == pytest.approx(75.67 - 76.70)


def test_trend_check_averages_seeds():
    rows = _trend_rows("K2", [1, 1, 5, 5], [0.4, 0.6, 0.8, 0.9])
    report = trend_check(rows, "K2", "increasing")
    assert report.passed
    assert report.margins[0][2] == pytest.approx(0.85 - 0.5)


def test_trend_check_vacuous_single_point():
    report = trend_check(_trend_rows("N2", [5], [0.9]), "N2", "increasing")
    assert report.passed and report.vacuous


def test_trend_check_failure_and_errors():
    rows = _trend_rows("N2", [5, 10], [0.7, 0.9])
    assert not trend_check(rows, "N2", "decreasing").passed
    with pytest.raises(ConfigError):
        trend_check(rows, "Q", "decreasing")
    with pytest.raises(ConfigError):
        trend_check(rows, "N2", "sideways")
    with pytest.raises(ConfigError):
        trend_check([], "N2", "decreasing")


def test_trend_check_skips_failed_cells():
    rows = _trend_rows("K2", [1, 5], [0.4, 0.8])
    rows.append({"cell_id": "x", "K2": 9, "accuracy_mean": "", "error": "boom"})
    report = trend_check(rows, "K2", "increasing")
    assert report.passed and len(report.margins) == 1
