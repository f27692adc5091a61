import csv
import json

import numpy as np
import pytest

import attrprune.pipeline as pipeline
from attrprune.config import ExperimentConfig
from attrprune.errors import DivergenceError, PartitionDegeneracyError
from attrprune.partition import PartitionResult
from attrprune.pipeline import build_data, run_pipeline, run_sweep, write_summary_csv

SMALL = dict(n_per_class=60, hidden=[16, 8], epochs=4, finetune_epochs=2)


def small(**kw) -> ExperimentConfig:
    return ExperimentConfig(**{**SMALL, **kw})


def test_record_has_every_stage():
    record = run_pipeline(small(methods=["ours", "abs"]))
    assert set(record.stages) == {
        "initial", "ours/pruned", "ours/L-FT", "ours/F-FT",
        "abs/pruned", "abs/L-FT", "abs/F-FT", "retrain",
    }
    for metrics in record.stages.values():
        assert all(0 <= v <= 1 for v in metrics.values())
    assert set(record.losses) == set(record.epoch_seconds)
    assert len(record.losses["initial"]) == 4
    assert len(record.losses["ours/F-FT"]) == 2
    assert 0 <= record.partition["balanced_accuracy"] <= 1
    json.loads(record.to_json())


def test_pruned_stage_zeroes_exact_count():
    record = run_pipeline(small(hidden=[200, 8], strategies=["F-FT"]))
    assert record.pruning["ours"]["zeroed_rows"] == 30
    assert len(record.pruning["ours"]["neurons"]) == 30


def test_split_sizes_and_noise_on_train_only():
    splits = build_data(small())
    assert len(splits.train) == 192 and len(splits.test) == 48
    assert splits.train.corruption_mask.sum() == 96
    assert splits.test.corruption_mask is None


def test_train_fraction_subsamples():
    splits = build_data(small(train_fraction=0.25))
    assert len(splits.train) == 48


def test_reproducible_numeric_payload():
    a = run_pipeline(small(seed=3))
    b = run_pipeline(small(seed=3))
    assert json.dumps(a.numeric_payload()) == json.dumps(b.numeric_payload())
    c = run_pipeline(small(seed=4))
    assert json.dumps(a.numeric_payload()) != json.dumps(c.numeric_payload())


def test_pipeline_never_reads_the_mask(monkeypatch):
    real = pipeline.build_data

    def scrambled(cfg):
        splits = real(cfg)
        rng = np.random.default_rng(0)
        splits.train.corruption_mask = rng.permutation(splits.train.corruption_mask)
        return splits

    honest = run_pipeline(small(seed=2))
    monkeypatch.setattr(pipeline, "build_data", scrambled)
    lied_to = run_pipeline(small(seed=2))
    assert lied_to.stages == honest.stages
    assert lied_to.pruning == honest.pruning


def test_degenerate_partition_aborts_with_dump(monkeypatch, tmp_path):
    def all_clean(params, x, features, labels, model):
        m = len(labels)
        gamma = np.column_stack([np.ones(m), np.zeros(m)])
        return PartitionResult(gamma, np.zeros(m, dtype=int), 0, [0.1, float("inf")])

    monkeypatch.setattr(pipeline, "assign_partition", all_clean)
    with pytest.raises(PartitionDegeneracyError) as info:
        run_pipeline(small(), workdir=tmp_path)
    assert info.value.gamma.shape == (192, 2)
    assert info.value.stage == "partition"
    assert (tmp_path / "partition_degenerate.csv").exists()


def test_divergence_is_tagged_with_stage(monkeypatch):
    def blow_up(*args, **kwargs):
        raise DivergenceError(1, float("nan"))

    monkeypatch.setattr(pipeline, "train_from_scratch", blow_up)
    with pytest.raises(DivergenceError) as info:
        run_pipeline(small())
    assert info.value.stage == "train"


def test_clean_control_does_not_degrade():
    cfg = ExperimentConfig(noise_fraction=0.0, strategies=["F-FT"])
    try:
        record = run_pipeline(cfg)
    except PartitionDegeneracyError:
        return  # allowed on clean data
    n_test = 800
    before = round(record.stages["initial"]["accuracy"] * n_test)
    after = round(record.stages["ours/F-FT"]["accuracy"] * n_test)
    assert before - after <= 0.02 * n_test


@pytest.mark.parametrize(
    "axis,values",
    [
        ("noise-level", [2, 3, 4, 5, 6, 7, 8, 9]),
        ("train-size", [1.0, 0.5, 0.25]),
        ("method", ["ours", "abs", "rms", "freq", "std"]),
    ],
)
def test_sweep_one_record_per_value(axis, values, tmp_path):
    base = small(strategies=["F-FT"], epochs=2, finetune_epochs=1)
    records, rows = run_sweep(base, axis, values)
    assert len(records) == len(rows) == len(values)
    assert [row[axis] for row in rows] == values
    write_summary_csv(tmp_path / "s.csv", rows)
    with open(tmp_path / "s.csv") as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == len(values)
    assert "initial:accuracy" in table[0]


def test_method_sweep_columns_follow_method():
    _, rows = run_sweep(small(strategies=["F-FT"], epochs=2, finetune_epochs=1), "method", ["rms"])
    assert "rms/F-FT:accuracy" in rows[0]


def test_sweep_rejects_unknown_axis():
    with pytest.raises(ValueError):
        run_sweep(small(), "depth", [1])
