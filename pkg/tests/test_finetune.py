import numpy as np
import pytest

from attrprune.data import gen_blobs
from attrprune.errors import UsageError
from attrprune.finetune import (
    FinetuneConfig,
    finetune_full,
    finetune_layer,
    retrain_baseline,
    train_from_scratch,
)
from attrprune.nn import ParamAnchor, apply_prune_mask, objective, train


@pytest.fixture
def setup():
    ds = gen_blobs(60, 3, 6, 1.0, seed=2, separation=3.0)
    x, y = ds.features, ds.labels
    base = train_from_scratch([6, 16, 12, 3], x, y, epochs=5, lr=0.05, seed=4).model
    pruned = apply_prune_mask(base, 1, [0, 3, 7])
    return pruned, x, y


def params_equal(a, b, layers):
    return all(
        np.array_equal(a.layer(l).weight, b.layer(l).weight) and np.array_equal(a.layer(l).bias, b.layer(l).bias)
        for l in layers
    )


def test_zero_epochs_is_identity(setup):
    pruned, x, y = setup
    for run in (
        lambda c: finetune_layer(pruned, 1, x, y, c),
        lambda c: finetune_full(pruned, x, y, c),
    ):
        out = run(FinetuneConfig(epochs=0, layer=1)).model
        assert params_equal(out, pruned, [1, 2, 3])


def test_layer_finetune_freezes_other_layers(setup):
    pruned, x, y = setup
    out = finetune_layer(pruned, 2, x, y, FinetuneConfig("layer", 2, epochs=3)).model
    assert params_equal(out, pruned, [1, 3])
    assert not params_equal(out, pruned, [2])


def test_huge_lambda_pins_layer_to_anchor(setup):
    pruned, x, y = setup
    out = finetune_layer(pruned, 1, x, y, FinetuneConfig("layer", 1, lam_reg=1e9, epochs=3)).model
    w, w0 = out.layer(1).weight, pruned.layer(1).weight
    assert np.linalg.norm(w - w0) <= 1e-3 * np.linalg.norm(w0)
    assert np.abs(w[[0, 3, 7]]).max() < 1e-3
    assert np.abs(out.layer(1).bias[[0, 3, 7]]).max() < 1e-3


def test_pruned_relu_rows_stay_dead_without_penalty(setup):
    # a zeroed relu unit has pre-activation 0 and relu'(0) = 0, so no gradient reaches its row
    pruned, x, y = setup
    out = finetune_full(pruned, x, y, FinetuneConfig(lam_reg=0.0, epochs=2)).model
    assert np.all(out.layer(1).weight[[0, 3, 7]] == 0)
    assert np.all(out.layer(1).bias[[0, 3, 7]] == 0)
    assert not params_equal(out, pruned, [1])


def test_finetune_lowers_clean_loss(setup):
    pruned, x, y = setup
    cfg = FinetuneConfig(epochs=5, lr=0.02)
    anchor = ParamAnchor.of(pruned)
    before = objective(pruned, x, y, cfg.lam_reg, anchor)
    out = finetune_full(pruned, x, y, cfg).model
    assert objective(out, x, y, cfg.lam_reg, anchor) <= before


def test_zero_lambda_full_is_plain_training(setup):
    pruned, x, y = setup
    cfg = FinetuneConfig(lam_reg=0.0, epochs=3, seed=8)
    a = finetune_full(pruned, x, y, cfg).model
    b = train(pruned, x, y, 3, cfg.lr, seed=8).model
    assert params_equal(a, b, [1, 2, 3])


def test_anchor_distance_monotone_in_lambda(setup):
    pruned, x, y = setup
    anchor = ParamAnchor.of(pruned)
    dist = []
    for lam in (0, 0.01, 1, 100, 1e9):
        out = finetune_full(pruned, x, y, FinetuneConfig(lam_reg=lam, epochs=3)).model
        dist.append(anchor.sq_distance(out))
    assert all(a >= b for a, b in zip(dist, dist[1:]))
    assert dist[-1] < 1e-6 * dist[0]


def test_empty_clean_set_is_usage_error(setup):
    pruned, x, y = setup
    empty_x, empty_y = x[:0], y[:0]
    with pytest.raises(UsageError, match="partition"):
        finetune_full(pruned, empty_x, empty_y, FinetuneConfig())
    with pytest.raises(UsageError):
        finetune_layer(pruned, 1, empty_x, empty_y, FinetuneConfig("layer", 1))
    with pytest.raises(UsageError):
        retrain_baseline([6, 16, 12, 3], empty_x, empty_y, 2, 0.05, seed=0)


def test_retrain_on_full_data_matches_initial(setup):
    _, x, y = setup
    a = train_from_scratch([6, 16, 12, 3], x, y, 3, 0.05, seed=11).model
    b = retrain_baseline([6, 16, 12, 3], x, y, 3, 0.05, seed=11).model
    assert params_equal(a, b, [1, 2, 3])


def test_config_validation():
    with pytest.raises(UsageError):
        FinetuneConfig(strategy="partial")
    with pytest.raises(UsageError):
        FinetuneConfig(lam_reg=-1)
    with pytest.raises(UsageError):
        FinetuneConfig(strategy="layer")
