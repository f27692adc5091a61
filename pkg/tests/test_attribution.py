import numpy as np
import pytest

from attrprune.attribution import (
    AttributionMatrix,
    attribution_matrix,
    attribution_vectors,
    integrated_gradients,
    maxpool_attribution,
    read_attribution_csv,
    write_attribution_csv,
)
from attrprune.errors import ShapeError, UsageError
from attrprune.nn import FnnModel, Layer, forward

from helpers import fd_activation_gradient, kinked, random_model


def test_matrix_arithmetic_by_hand():
    # h^1 = [1, 2], logit 0 gradient = [-3, 0.5] -> column 0 = [3, 1]
    model = FnnModel([
        Layer(np.eye(2), [0, 0], "relu"),
        Layer([[-3.0, 0.5], [1.0, 1.0]], [0, 0], "softmax"),
    ])
    a = attribution_matrix(model, np.array([1.0, 2.0]), 1)
    np.testing.assert_allclose(a.values[:, 0], [3.0, 1.0])
    np.testing.assert_allclose(a.values[:, 1], [1.0, 2.0])


def test_zero_activation_gives_zero_matrix(rng):
    model = random_model(rng, [3, 5, 4])
    model.layers[0].weight[:] = 0
    model.layers[0].bias[:] = -1  # relu clamps everything
    a = attribution_matrix(model, rng.normal(size=3), 1)
    assert np.all(a.values == 0)


def test_matrix_matches_fd_oracle(rng):
    checked = 0
    while checked < 20:
        model = random_model(rng, [6, 9, 7, 4])
        x = rng.normal(size=6)
        if kinked(model, x):
            continue
        l = int(rng.integers(1, 3))
        h = forward(model, x).h(l)
        a = attribution_matrix(model, x, l)
        if kinked(model, h, l):
            continue
        for d in range(4):
            oracle = np.abs(h * fd_activation_gradient(model, h, l, d))
            np.testing.assert_allclose(a.values[:, d], oracle, rtol=1e-4, atol=1e-8)
        checked += 1


def test_matrix_nonnegative_and_rejects_output_layer(rng):
    model = random_model(rng, [4, 6, 3])
    assert np.all(attribution_matrix(model, rng.normal(size=4), 1).values >= 0)
    with pytest.raises(IndexError):
        attribution_matrix(model, rng.normal(size=4), 2)
    with pytest.raises(ShapeError):
        attribution_matrix(model, rng.normal(size=(2, 4)), 1)


def test_maxpool_examples():
    v = maxpool_attribution(AttributionMatrix(np.array([[1.0, 4.0], [3.0, 2.0]])))
    assert v.values.tolist() == [4.0, 3.0]
    col = np.array([[0.5], [2.0], [0.0]])
    assert maxpool_attribution(AttributionMatrix(col)).values.tolist() == [0.5, 2.0, 0.0]
    with pytest.raises(ShapeError):
        maxpool_attribution(AttributionMatrix(np.zeros((0, 2))))


def test_maxpool_is_a_row_max(rng):
    m = rng.random((8, 5))
    v = maxpool_attribution(AttributionMatrix(m)).values
    assert np.all(v[:, None] >= m)
    assert all(v[i] in m[i] for i in range(8))


def test_maxpool_invariant_to_output_permutation(rng):
    m = rng.random((6, 4))
    perm = rng.permutation(4)
    a = maxpool_attribution(AttributionMatrix(m)).values
    b = maxpool_attribution(AttributionMatrix(m[:, perm])).values
    assert np.array_equal(a, b)


def test_scaling_activation_scales_row():
    h = np.array([0.3, 1.2, 2.0])
    g = np.array([[0.5, -1.0], [2.0, 0.1], [-0.7, 0.4]])  # (N, D)
    base = np.abs(h[:, None] * g)
    scaled_h = h.copy()
    scaled_h[1] *= 3.5
    scaled = np.abs(scaled_h[:, None] * g)
    np.testing.assert_allclose(scaled[1], 3.5 * base[1])
    np.testing.assert_array_equal(scaled[[0, 2]], base[[0, 2]])


def test_batched_vectors_match_per_sample(rng):
    model = random_model(rng, [5, 12, 8, 3])
    x = rng.normal(size=(37, 5))
    for l in (1, 2):
        batch = attribution_vectors(model, x, l, chunk=10)
        for i in range(37):
            single = maxpool_attribution(attribution_matrix(model, x[i], l)).values
            np.testing.assert_allclose(batch[i], single, rtol=1e-12, atol=1e-14)


def test_ig_linear_model_exact(rng):
    w = rng.normal(size=(3, 5))
    model = FnnModel([Layer(w, np.zeros(3), "softmax")])
    x = rng.normal(size=5)
    target = int(np.argmax(w @ x))
    for steps in (1, 7, 50):
        np.testing.assert_allclose(integrated_gradients(model, x, m_steps=steps), w[target] * x, rtol=1e-12)


def test_ig_zero_path(rng):
    model = random_model(rng, [4, 6, 3])
    x = rng.normal(size=4)
    assert np.all(integrated_gradients(model, x, baseline=x.copy()) == 0)


def test_ig_completeness_small_suite(rng):
    for _ in range(10):
        model = random_model(rng, [5, 16, 12, 3])
        x = 2 * rng.normal(size=5)
        target = int(np.argmax(forward(model, x).logits))
        gap = forward(model, x).logits[target] - forward(model, np.zeros(5)).logits[target]
        total = integrated_gradients(model, x, m_steps=256).sum()
        assert abs(total - gap) <= 0.01 * abs(gap)


def test_ig_refinement_converges(rng):
    model = random_model(rng, [5, 16, 12, 3])
    x = 2 * rng.normal(size=5)
    target = int(np.argmax(forward(model, x).logits))
    gap = forward(model, x).logits[target] - forward(model, np.zeros(5)).logits[target]
    sums = [integrated_gradients(model, x, m_steps=m).sum() for m in (64, 128, 256, 512)]
    diffs = np.abs(np.diff(sums))
    assert np.all(diffs < 0.01 * abs(gap))


def test_ig_argument_checks(rng):
    model = random_model(rng, [4, 6, 3])
    with pytest.raises(UsageError):
        integrated_gradients(model, np.zeros(4), m_steps=0)
    with pytest.raises(ShapeError):
        integrated_gradients(model, np.zeros(4), baseline=np.zeros(3))


def test_attribution_csv_round_trip(tmp_path, rng):
    vectors = rng.random((6, 4))
    write_attribution_csv(tmp_path / "a.csv", vectors, layer=2)
    back, layer = read_attribution_csv(tmp_path / "a.csv")
    assert layer == 2
    assert np.array_equal(back, vectors)
