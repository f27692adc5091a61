"""End-to-end runs: partition, prune, fine-tune, and compare against baselines.

The corruption mask never reaches a pipeline stage. It is split off before
training and only used afterwards to score the partition.
"""

from __future__ import annotations

import csv
import json
import logging
import statistics
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .attribution import attribution_vectors
from .config import ExperimentConfig
from .data import Dataset, NoiseSpec, gen_blobs, inject_noise, load_csv, train_test_split
from .errors import PartitionDegeneracyError, UsageError
from .finetune import FinetuneConfig, finetune_full, finetune_layer, retrain_baseline, train_from_scratch
from .metrics import balanced_accuracy, compute_metrics, top3_accuracy
from .nn import FnnModel, apply_prune_mask, forward, zeroed_neurons
from .partition import (
    PartitionResult,
    assign_partition,
    em_fit,
    kmeanspp_init,
    kmeans_refine,
    standardize,
    write_partition_csv,
)
from .pruning import SensitivityScores, score_neurons

log = logging.getLogger(__name__)

SWEEP_AXES = ("noise-level", "train-size", "method", "seed")
METRIC_KEYS = ("accuracy", "precision", "recall", "f1", "top3_accuracy")


def _subseeds(seed: int) -> dict[str, int]:
    names = ("split", "subsample", "noise", "model", "gmm", "finetune")
    states = np.random.SeedSequence(seed).generate_state(len(names))
    return {name: int(s) for name, s in zip(names, states)}


@dataclass
class Splits:
    train: Dataset  # carries the ground-truth corruption mask
    test: Dataset


def build_data(cfg: ExperimentConfig) -> Splits:
    seeds = _subseeds(cfg.seed)
    if cfg.dataset_path:
        clean = load_csv(cfg.dataset_path).without_mask()
    else:
        clean = gen_blobs(
            cfg.n_per_class, cfg.classes, cfg.dim, cfg.spread,
            cfg.effective_data_seed, cfg.separation,
        )
    train, test = train_test_split(clean, cfg.test_fraction, seeds["split"])
    if cfg.train_fraction < 1:
        rng = np.random.default_rng(seeds["subsample"])
        keep = int(round(cfg.train_fraction * len(train)))
        train = train.subset(np.sort(rng.choice(len(train), size=keep, replace=False)))
    spec = NoiseSpec(cfg.noise_kind, cfg.noise_level, cfg.noise_fraction)
    return Splits(inject_noise(train, spec, seeds["noise"]), test)


def architecture(cfg: ExperimentConfig, data: Dataset) -> list[int]:
    return [data.dim] + list(cfg.hidden) + [data.n_classes]


def evaluate(model: FnnModel, data: Dataset) -> dict:
    logits = forward(model, data.features).logits
    report = compute_metrics(np.argmax(logits, axis=1), data.labels, data.n_classes)
    if data.n_classes >= 3:
        report.top3_accuracy = top3_accuracy(logits, data.labels)
    return report.as_dict()


def partition_samples(model: FnnModel, data: Dataset, cfg: ExperimentConfig, vectors=None):
    """Attribution vectors -> standardized -> 2-component GMM -> clean/noisy split.

    Pass ``vectors`` to reuse attribution vectors computed earlier.
    """
    if vectors is None:
        vectors = attribution_vectors(model, data.features, cfg.target_layer)
    z, _, _ = standardize(vectors)
    init = kmeans_refine(z, kmeanspp_init(z, 2, _subseeds(cfg.seed)["gmm"]))
    params, ll_trace = em_fit(
        z, init, cfg.gmm_max_iter, cfg.gmm_tol, cfg.gmm_jitter, cfg.covariance
    )
    result = assign_partition(params, z, data.features, data.labels, model)
    return result, params, ll_trace


@dataclass
class RunRecord:
    config: dict
    seed: int
    stages: dict[str, dict] = field(default_factory=dict)
    partition: dict = field(default_factory=dict)
    pruning: dict[str, dict] = field(default_factory=dict)
    epoch_seconds: dict[str, list[float]] = field(default_factory=dict)
    losses: dict[str, list[float]] = field(default_factory=dict)
    timestamps: dict[str, str] = field(default_factory=dict)

    def numeric_payload(self) -> dict:
        """Everything except wall-clock fields."""
        return {
            "config": self.config,
            "seed": self.seed,
            "stages": self.stages,
            "partition": self.partition,
            "pruning": self.pruning,
            "losses": self.losses,
        }

    def to_json(self) -> str:
        doc = self.numeric_payload()
        doc["epoch_seconds"] = self.epoch_seconds
        doc["timestamps"] = self.timestamps
        return json.dumps(doc, indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    def mean_epoch_seconds(self, stage: str) -> float | None:
        times = self.epoch_seconds.get(stage)
        return float(np.mean(times)) if times else None


@contextmanager
def stage(name: str):
    """Tag any exception escaping the block with the pipeline stage it came from."""
    try:
        yield
    except Exception as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name
        raise


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _partition_summary(result: PartitionResult, ll_trace, params, truth) -> dict:
    out = {
        "n_clean": int(len(result.clean_idx)),
        "n_noisy": int(len(result.noisy_idx)),
        "clean_component": result.clean_component,
        "cluster_losses": result.cluster_losses,
        "weights": params.weights.tolist(),
        "diagonal_covariance": params.diagonal,
        "em_iterations": len(ll_trace) - 1,
        "log_likelihood": ll_trace[-1],
    }
    if truth is not None:
        out["balanced_accuracy"] = balanced_accuracy(result.quality == 0, truth)
    return out


def run_pipeline(cfg: ExperimentConfig, workdir: str | Path | None = None) -> RunRecord:
    """Train, partition, prune and recover for every configured method.

    When ``workdir`` is given, the partition dump is written there if the
    split comes out degenerate.
    """
    seeds = _subseeds(cfg.seed)
    record = RunRecord(cfg.as_dict(), cfg.seed)
    record.timestamps["start"] = _now()
    with stage("data"):
        splits = build_data(cfg)
    truth = splits.train.corruption_mask
    visible = splits.train.without_mask()
    test = splits.test
    x, y = visible.features, visible.labels
    widths = architecture(cfg, visible)
    l = cfg.target_layer

    def keep(stage, result):
        record.losses[stage] = result.losses
        record.epoch_seconds[stage] = result.epoch_seconds
        return result.model

    log.info("phase 1: training initial model %s on %d samples", widths, len(y))
    with stage("train"):
        initial = keep("initial", train_from_scratch(widths, x, y, cfg.epochs, cfg.lr, seeds["model"], cfg.batch_size))
    record.stages["initial"] = evaluate(initial, test)

    log.info("phase 1: attribution partition at layer %d", l)
    with stage("partition"):
        part, params, ll_trace = partition_samples(initial, visible, cfg)
        record.partition = _partition_summary(part, ll_trace, params, truth)
        if len(part.clean_idx) == 0 or len(part.noisy_idx) == 0:
            if workdir is not None:
                write_partition_csv(Path(workdir) / "partition_degenerate.csv", part)
            raise PartitionDegeneracyError(
                f"partition put all {len(y)} samples in one subset "
                f"(clean={len(part.clean_idx)}, noisy={len(part.noisy_idx)})",
                gamma=part.gamma,
            )
    z = part.quality
    x_clean, y_clean = x[part.clean_idx], y[part.clean_idx]
    activations = forward(initial, x).h(l)

    ft = FinetuneConfig(
        strategy="full", layer=l, lam_reg=cfg.lam_reg, epochs=cfg.finetune_epochs,
        lr=cfg.lr, seed=seeds["finetune"], batch_size=cfg.batch_size,
    )
    for method in cfg.methods:
        log.info("phase 2: pruning with %s", method)
        with stage("prune"):
            scores: SensitivityScores = score_neurons(method, activations, z, cfg.alpha, cfg.lam, cfg.eps)
            pruned = apply_prune_mask(initial, l, scores.prune)
        record.pruning[method] = {
            "neurons": scores.prune,
            "zeroed_rows": len(zeroed_neurons(pruned, l)) - len(zeroed_neurons(initial, l)),
            "scores": scores.scores.tolist(),
        }
        record.stages[f"{method}/pruned"] = evaluate(pruned, test)
        log.info("phase 3: fine-tuning (%s)", method)
        with stage("finetune"):
            if "L-FT" in cfg.strategies:
                model = keep(f"{method}/L-FT", finetune_layer(pruned, l, x_clean, y_clean, ft))
                record.stages[f"{method}/L-FT"] = evaluate(model, test)
            if "F-FT" in cfg.strategies:
                model = keep(f"{method}/F-FT", finetune_full(pruned, x_clean, y_clean, ft))
                record.stages[f"{method}/F-FT"] = evaluate(model, test)

    if "retrain" in cfg.strategies:
        log.info("baseline: retraining on %d clean samples", len(y_clean))
        with stage("retrain"):
            model = keep("retrain", retrain_baseline(widths, x_clean, y_clean, cfg.epochs, cfg.lr, seeds["model"], cfg.batch_size))
        record.stages["retrain"] = evaluate(model, test)
    record.timestamps["end"] = _now()
    return record


def axis_changes(axis: str, value) -> dict:
    if axis == "noise-level":
        return {"noise_level": float(value)}
    if axis == "train-size":
        return {"train_fraction": float(value)}
    if axis == "method":
        return {"methods": [str(value)]}
    if axis == "seed":
        return {"seed": int(value)}
    raise UsageError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")


def summary_row(axis: str, value, record: RunRecord) -> dict:
    row = {axis: value}
    for stage, metrics in record.stages.items():
        for key in METRIC_KEYS:
            if metrics.get(key) is not None:
                row[f"{stage}:{key}"] = metrics[key]
    for stage in record.epoch_seconds:
        row[f"{stage}:epoch_seconds"] = record.mean_epoch_seconds(stage)
    if "balanced_accuracy" in record.partition:
        row["partition:balanced_accuracy"] = record.partition["balanced_accuracy"]
    return row


def run_sweep(base: ExperimentConfig, axis: str, values) -> tuple[list[RunRecord], list[dict]]:
    records, rows = [], []
    for value in values:
        cfg = base.replace(**axis_changes(axis, value))
        started = time.perf_counter()
        record = run_pipeline(cfg)
        log.info("sweep %s=%s done in %.1fs", axis, value, time.perf_counter() - started)
        records.append(record)
        rows.append(summary_row(axis, value, record))
    return records, rows


def write_summary_csv(path: str | Path, rows: list[dict]) -> None:
    columns: list[str] = []
    for row in rows:
        columns.extend(k for k in row if k not in columns)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def format_stages(record: RunRecord) -> str:
    keys = [k for k in METRIC_KEYS if any(m.get(k) is not None for m in record.stages.values())]
    name_w = max(len(s) for s in record.stages) if record.stages else 5
    lines = ["stage".ljust(name_w) + "".join(f"  {k:>13}" for k in keys)]
    for stage, metrics in record.stages.items():
        lines.append(stage.ljust(name_w) + "".join(f"  {metrics[k]:>13.4f}" for k in keys))
    if record.partition:
        p = record.partition
        line = f"partition: clean={p['n_clean']} noisy={p['n_noisy']}"
        if "balanced_accuracy" in p:
            line += f" balanced_accuracy={p['balanced_accuracy']:.4f}"
        lines.append(line)
    return "\n".join(lines)


def median(values) -> float:
    return float(statistics.median(values))
