"""Command-line entry points.

Exit codes: 0 success, 1 runtime failure, 2 config error, 3 acceptance-check
failure (gradcheck / trend).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import _merge as _deep_merge
from .config import build_context, load_config, resolve
from .data import save_dataset, synth_generate
from .diagnostics import gradient_report
from .errors import CheckpointMismatch, ConfigError, DataFormatError, ProtoepError
from .model import load_checkpoint, save_checkpoint
from .training import (
    GridSpec,
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

EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_CHECK = 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_resolved(config_path, seed_override):
    try:
        return resolve(load_config(config_path), seed_override=seed_override)
    except (ConfigError, DataFormatError, OSError) as err:
        _fail(EXIT_CONFIG, str(err))


def _build(resolved):
    try:
        return build_context(resolved)
    except (ConfigError, DataFormatError) as err:
        _fail(EXIT_CONFIG, str(err))
    except ProtoepError as err:
        _fail(EXIT_RUNTIME, str(err))


def _outdir(out) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(outdir: Path, resolved: dict):
    (outdir / "config_echo.json").write_text(json.dumps(resolved, indent=2, sort_keys=True))


def _jobs_option(jobs: int | None) -> int:
    if jobs is not None:
        return jobs
    return int(os.environ.get("PROTOEP_JOBS", "1"))


@click.group()
@click.version_option(__version__)
def main():
    """Few-shot relation classification experiments with inconsistent
    train/test episode shapes."""


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", default="runs/train", show_default=True)
@click.option("--seed", type=int, default=None, help="Override train.seed.")
def cmd_train(config_path, out, seed):
    """Train a model; writes checkpoint, loss trace, and a config echo."""
    resolved = _load_resolved(config_path, seed)
    ctx = _build(resolved)
    outdir = _outdir(out)
    _echo_config(outdir, ctx.config)
    try:
        result = train(
            ctx.dataset,
            ctx.train_config,
            encoder_config=ctx.encoder_config,
            word_init=ctx.word_init,
        )
    except ProtoepError as err:
        _fail(EXIT_RUNTIME, str(err))
    save_checkpoint(outdir / "checkpoint.json", result.params)
    with open(outdir / "trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "loss_ce", "loss_dist", "loss_cl", "loss_total"])
        for row in result.trace:
            writer.writerow(
                [row.iteration] + [format(v, ".17g") for v in (row.ce, row.dist, row.cl, row.total)]
            )
    click.echo(f"wrote {outdir}/checkpoint.json and trace.csv ({len(result.trace)} iterations)")


@main.command("eval")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", default="runs/eval", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option(
    "--format", "formats", multiple=True, type=click.Choice(["csv", "markdown", "json"])
)
def cmd_eval(checkpoint_path, config_path, out, seed, formats):
    """Evaluate a checkpoint; refuses on architecture fingerprint mismatch."""
    resolved = _load_resolved(config_path, seed)
    ctx = _build(resolved)
    try:
        params = load_checkpoint(checkpoint_path)
    except (DataFormatError, CheckpointMismatch) as err:
        _fail(EXIT_CONFIG, str(err))
    want, got = ctx.encoder_config.fingerprint(), params.config.fingerprint()
    if want != got:
        _fail(
            EXIT_CONFIG,
            f"checkpoint fingerprint {got} does not match config fingerprint {want}",
        )
    try:
        report = evaluate(
            ctx.dataset,
            params,
            ctx.train_config.plan.infer,
            ctx.train_config.eval_iterations,
            seed=ctx.train_config.seed + 1_000_003,
            use_cross_attention=ctx.train_config.use_cross_attention,
        )
    except ProtoepError as err:
        _fail(EXIT_RUNTIME, str(err))
    outdir = _outdir(out)
    _echo_config(outdir, ctx.config)
    payload = {
        "accuracy_mean": report.accuracy_mean,
        "accuracy_std": report.accuracy_std,
        "episodes": report.episodes,
        "n_way": report.config.n_way,
        "k_shot": report.config.k_shot,
        "q_per_class": report.config.q_per_class,
    }
    formats = formats or tuple(resolved.get("formats", ["json"]))
    if "json" in formats or not formats:
        (outdir / "report.json").write_text(json.dumps(payload, indent=2))
    if "csv" in formats:
        keys = list(payload)
        (outdir / "report.csv").write_text(
            ",".join(keys) + "\n" + ",".join(str(payload[k]) for k in keys) + "\n"
        )
    if "markdown" in formats:
        lines = ["| metric | value |", "|---|---|"] + [
            f"| {k} | {v} |" for k, v in payload.items()
        ]
        (outdir / "report.md").write_text("\n".join(lines) + "\n")
    click.echo(
        f"accuracy {report.accuracy_mean:.4f} +/- {report.accuracy_std:.4f} "
        f"over {report.episodes} episodes"
    )


def _grid_spec_from_config(resolved, ctx) -> GridSpec:
    grid = resolved.get("grid")
    if not isinstance(grid, dict) or "kind" not in grid:
        raise ConfigError("grid config needs a 'grid' object with a 'kind' field")
    base = ctx.train_config
    kind = grid["kind"]
    if kind == "inconsistent_k":
        return inconsistent_k_grid(
            n_way=int(grid.get("n_way", base.plan.train.n_way)),
            train_shots=grid.get("train_shots", [5, 10, 20]),
            test_shots=grid.get("test_shots", [1, 5, 10, 20]),
            base=base,
        )
    if kind == "inconsistent_n":
        return inconsistent_n_grid(
            k_shot=int(grid.get("k_shot", base.plan.train.k_shot)),
            train_ways=grid.get("train_ways", [5, 10, 20]),
            test_ways=grid.get("test_ways", [5, 10]),
            base=base,
        )
    if kind == "ablation":
        return ablation_grid(base)
    if kind == "cells":
        cells = []
        for cell in grid.get("cells", []):
            cell = dict(cell)
            cell_id = cell.pop("cell_id", None)
            if cell_id is None:
                raise ConfigError("each grid cell needs a cell_id")
            override = {k: v for k, v in cell.items() if k in ("train", "infer")}
            merged = resolve({**resolved, **{k: _deep_merge(resolved[k], v) for k, v in override.items()}})
            cells.append((cell_id, build_context(merged).train_config))
        return GridSpec(cells=cells)
    raise ConfigError(f"unknown grid kind {kind!r}")


@main.command("grid")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", default="runs/grid", show_default=True)
@click.option("--jobs", type=int, default=None, help="Worker threads (or PROTOEP_JOBS).")
@click.option(
    "--format", "formats", multiple=True, type=click.Choice(["csv", "markdown", "json"])
)
@click.option("--seed", type=int, default=None)
def cmd_grid(config_path, out, jobs, formats, seed):
    """Run a grid of train+eval cells; one report row per cell."""
    resolved = _load_resolved(config_path, seed)
    ctx = _build(resolved)
    try:
        spec = _grid_spec_from_config(resolved, ctx)
    except ConfigError as err:
        _fail(EXIT_CONFIG, str(err))
    rows = run_grid(
        ctx.dataset,
        spec,
        jobs=_jobs_option(jobs),
        encoder_config=ctx.encoder_config,
        word_init=ctx.word_init,
    )
    outdir = _outdir(out)
    _echo_config(outdir, ctx.config)
    formats = formats or tuple(resolved.get("formats", ["csv"]))
    if "csv" in formats:
        (outdir / "grid.csv").write_text(rows_to_csv(rows))
    if "markdown" in formats:
        (outdir / "grid.md").write_text(rows_to_markdown(rows))
    if "json" in formats:
        (outdir / "grid.json").write_text(json.dumps(rows, indent=2))
    failures = [r for r in rows if r["error"]]
    click.echo(f"{len(rows)} cells, {len(failures)} failed; reports in {outdir}")
    if failures:
        sys.exit(EXIT_RUNTIME)


@main.command("trend")
@click.option("--table", required=True, type=click.Path(exists=True), help="grid.csv path")
@click.option("--axis", required=True, type=click.Choice(["N1", "K1", "N2", "K2"]))
@click.option(
    "--direction",
    required=True,
    type=click.Choice(["increasing", "decreasing", "non-increasing", "non-decreasing"]),
)
def cmd_trend(table, axis, direction):
    """Check a directional accuracy claim along one axis of a grid table."""
    with open(table, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        report = trend_check(rows, axis, direction)
    except ConfigError as err:
        _fail(EXIT_CONFIG, str(err))
    for value, prev_acc, margin in report.margins:
        click.echo(f"{axis}={value:g}: accuracy {prev_acc + margin:.4f} (step {margin:+.4f})")
    if report.vacuous:
        click.echo("warning: single point on axis, vacuous pass", err=True)
    click.echo(f"trend {direction} along {axis}: {'PASS' if report.passed else 'FAIL'}")
    if not report.passed:
        sys.exit(EXIT_CHECK)


@main.command("gradcheck")
@click.option("--n-way", type=int, default=2, show_default=True)
@click.option("--k-shot", type=int, default=2, show_default=True)
@click.option("--q-per-class", type=int, default=2, show_default=True)
@click.option("--hidden", type=int, default=8, show_default=True)
@click.option("--eps", type=float, default=1e-5, show_default=True)
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
def cmd_gradcheck(n_way, k_shot, q_per_class, hidden, eps, seed, tolerance):
    """Finite-difference check of every loss; exit 3 if any error exceeds
    the tolerance."""
    report = gradient_report(n_way, k_shot, q_per_class, hidden, eps, seed)
    worst = max(report.values())
    for label, err in report.items():
        click.echo(f"{label}: max relative error {err:.3e}")
    click.echo(f"worst {worst:.3e} (tolerance {tolerance:g})")
    if worst > tolerance:
        sys.exit(EXIT_CHECK)


@main.command("synth")
@click.option("--num-relations", type=int, default=5, show_default=True)
@click.option("--per-relation", type=int, default=100, show_default=True)
@click.option("--vocab-size", type=int, default=500, show_default=True)
@click.option("--sentence-len", type=int, default=16, show_default=True)
@click.option("--signal-strength", type=float, default=2.0, show_default=True)
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--emb-dim", type=int, default=16, show_default=True)
@click.option("--out", required=True, help="Dataset JSON path.")
@click.option("--emb-out", default=None, help="Embedding text file path.")
def cmd_synth(num_relations, per_relation, vocab_size, sentence_len, signal_strength, seed,
              emb_dim, out, emb_out):
    """Generate a synthetic separable corpus in the standard JSON layout."""
    try:
        dataset, table = synth_generate(
            num_relations, per_relation, vocab_size, sentence_len, signal_strength, seed,
            emb_dim=emb_dim,
        )
    except ConfigError as err:
        _fail(EXIT_CONFIG, str(err))
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)
    if emb_out:
        with open(emb_out, "w", encoding="utf-8") as fh:
            for token in sorted(table.vectors):
                vec = " ".join(format(x, ".17g") for x in table.vectors[token])
                fh.write(f"{token} {vec}\n")
    click.echo(f"wrote {len(dataset)} samples across {len(dataset.relations)} relations to {out}")


if __name__ == "__main__":
    main()
