"""Command-line entry point: ``attrprune <command> [options]``.

Every config field is also a flag (``--noise-level 5``); flags win over
``--config``. Stage commands pass models and partitions between each other
as files, so a run can be replayed one stage at a time.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .attribution import attribution_vectors, read_attribution_csv, write_attribution_csv
from .config import ExperimentConfig, coerce, load_config
from .data import Dataset, load_csv
from .errors import ConfigError, ParseError, ShapeError, UsageError
from .finetune import FinetuneConfig, finetune_full, finetune_layer, train_from_scratch
from .metrics import balanced_accuracy
from .nn import apply_prune_mask, forward, load_model, save_model
from .partition import read_partition_csv, write_partition_csv
from .pipeline import (
    SWEEP_AXES,
    _subseeds,
    architecture,
    build_data,
    evaluate,
    format_stages,
    partition_samples,
    run_pipeline,
    run_sweep,
    stage,
    write_summary_csv,
)
from .pruning import score_neurons, write_score_csv

log = logging.getLogger("attrprune")

USER_ERRORS = (ConfigError, ParseError, ShapeError, UsageError, FileNotFoundError, IndexError)


def _config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("experiment config")
    group.add_argument("--config", metavar="PATH", help="key = value config file")
    for f in fields(ExperimentConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f.name, metavar="VALUE")


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {
        f.name: coerce(f.name, getattr(args, f.name))
        for f in fields(ExperimentConfig)
        if getattr(args, f.name) is not None
    }
    return cfg.replace(**changes) if changes else cfg


def _metrics_table(metrics: dict) -> str:
    return "\n".join(f"{k:>14}  {v:.4f}" for k, v in metrics.items() if v is not None)


def _training_set(cfg: ExperimentConfig) -> Dataset:
    return build_data(cfg).train.without_mask()


def _clean_subset(cfg: ExperimentConfig, partition_path: str):
    data = _training_set(cfg)
    quality = read_partition_csv(partition_path)
    if len(quality) != len(data):
        raise UsageError(f"partition has {len(quality)} rows but the training set has {len(data)}")
    keep = np.flatnonzero(quality == 1)
    return data, quality, data.features[keep], data.labels[keep]


def cmd_train(args, cfg):
    splits = build_data(cfg)
    data = splits.train.without_mask()
    widths = architecture(cfg, data)
    result = train_from_scratch(widths, data.features, data.labels, cfg.epochs, cfg.lr,
                                _subseeds(cfg.seed)["model"], cfg.batch_size)
    save_model(result.model, args.out)
    print(f"trained {widths} for {cfg.epochs} epochs; final loss {result.losses[-1]:.4f}")
    print(_metrics_table(evaluate(result.model, splits.test)))


def cmd_attribute(args, cfg):
    model = load_model(args.model)
    data = _training_set(cfg)
    vectors = attribution_vectors(model, data.features, cfg.target_layer)
    write_attribution_csv(args.out, vectors, cfg.target_layer)
    print(f"wrote {vectors.shape[0]} x {vectors.shape[1]} attribution scores to {args.out}")


def cmd_partition(args, cfg):
    model = load_model(args.model)
    splits = build_data(cfg)
    data = splits.train.without_mask()
    vectors = None
    if args.attributions:
        vectors, layer = read_attribution_csv(args.attributions)
        if layer != cfg.target_layer:
            log.warning("attributions were computed at layer %d, config says %d", layer, cfg.target_layer)
    result, _, trace = partition_samples(model, data, cfg, vectors)
    write_partition_csv(args.out, result)
    line = f"clean={len(result.clean_idx)} noisy={len(result.noisy_idx)} em_iterations={len(trace) - 1}"
    if splits.train.corruption_mask is not None:
        line += f" balanced_accuracy={balanced_accuracy(result.quality == 0, splits.train.corruption_mask):.4f}"
    print(line)


def cmd_prune(args, cfg):
    model = load_model(args.model)
    data, quality, _, _ = _clean_subset(cfg, args.partition)
    activations = forward(model, data.features).h(cfg.target_layer)
    results = {m: score_neurons(m, activations, quality, cfg.alpha, cfg.lam, cfg.eps) for m in cfg.methods}
    chosen = cfg.methods[0]
    pruned = apply_prune_mask(model, cfg.target_layer, results[chosen].prune)
    save_model(pruned, args.out)
    if args.scores:
        write_score_csv(args.scores, results)
    print(f"{chosen}: zeroed {len(results[chosen].prune)} neurons of layer {cfg.target_layer}: "
          f"{results[chosen].prune}")


def cmd_finetune(args, cfg):
    model = load_model(args.model)
    _, _, x, y = _clean_subset(cfg, args.partition)
    ft = FinetuneConfig(
        strategy="layer" if args.strategy == "L-FT" else "full", layer=cfg.target_layer,
        lam_reg=cfg.lam_reg, epochs=cfg.finetune_epochs, lr=cfg.lr,
        seed=_subseeds(cfg.seed)["finetune"], batch_size=cfg.batch_size,
    )
    if args.strategy == "L-FT":
        result = finetune_layer(model, cfg.target_layer, x, y, ft)
    else:
        result = finetune_full(model, x, y, ft)
    save_model(result.model, args.out)
    print(f"{args.strategy} on {len(y)} clean samples; final loss {result.losses[-1]:.4f}")


def cmd_eval(args, cfg):
    model = load_model(args.model)
    data = load_csv(args.data).without_mask() if args.data else build_data(cfg).test
    metrics = evaluate(model, data)
    print(_metrics_table(metrics))
    if args.out:
        Path(args.out).write_text(json.dumps(metrics, indent=2))


def cmd_run(args, cfg):
    record = run_pipeline(cfg, workdir=args.workdir)
    if args.out:
        record.save(args.out)
    print(format_stages(record))


def cmd_sweep(args, cfg):
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    records, rows = run_sweep(cfg, args.axis, values)
    write_summary_csv(args.out, rows)
    if args.records_dir:
        out = Path(args.records_dir)
        out.mkdir(parents=True, exist_ok=True)
        for value, record in zip(values, records):
            record.save(out / f"{args.axis}_{value}.json")
    for value, record in zip(values, records):
        print(f"== {args.axis} = {value}")
        print(format_stages(record))
    print(f"summary written to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attrprune", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        _config_flags(p)
        return p

    p = add("train", cmd_train, "train the initial model on the noisy training split")
    p.add_argument("--out", required=True, help="model JSON to write")
    p = add("attribute", cmd_attribute, "dump per-sample neuron attribution vectors")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="attribution CSV to write")
    p = add("partition", cmd_partition, "split the training set into clean and noisy subsets")
    p.add_argument("--model", required=True)
    p.add_argument("--attributions", help="reuse an attribution CSV instead of recomputing")
    p.add_argument("--out", required=True, help="partition CSV to write")
    p = add("prune", cmd_prune, "score neurons and zero the top-alpha set")
    p.add_argument("--model", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--out", required=True, help="pruned model JSON to write")
    p.add_argument("--scores", help="score CSV to write")
    p = add("finetune", cmd_finetune, "anchored fine-tuning of a pruned model on the clean subset")
    p.add_argument("--model", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--strategy", choices=["L-FT", "F-FT"], default="F-FT")
    p.add_argument("--out", required=True)
    p = add("eval", cmd_eval, "test-set metrics for a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="labelled CSV to score instead of the config's test split")
    p.add_argument("--out", help="metrics JSON to write")
    p = add("run", cmd_run, "the full pipeline with every configured method and strategy")
    p.add_argument("--out", help="RunRecord JSON to write")
    p.add_argument("--workdir", help="where to dump diagnostics on failure")
    p = add("sweep", cmd_sweep, "repeat the pipeline along one axis")
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--out", required=True, help="summary CSV to write")
    p.add_argument("--records-dir", help="directory for one RunRecord JSON per value")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _resolve_config(args)
        with stage(args.command):
            args.func(args, cfg)
    except USER_ERRORS as exc:
        where = getattr(exc, "stage", "config")
        print(f"attrprune: {where} stage failed: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, FloatingPointError) as exc:
        where = getattr(exc, "stage", args.command)
        print(f"attrprune: {where} stage failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
