"""Neuron attribution (|activation x gradient|) and Integrated Gradients.

Gradients are taken of the pre-softmax logits: softmax saturation would
otherwise flatten the signal for confidently classified samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError, UsageError
from .nn import FnnModel, backprop_to_layer, forward, output_jacobian


@dataclass
class AttributionMatrix:
    values: np.ndarray  # (N, D); entry (n, d) is neuron n's score for output d
    sample_id: int = 0
    layer: int = 0


@dataclass
class AttributionVector:
    values: np.ndarray  # (N,)
    sample_id: int = 0
    layer: int = 0


def _check_hidden(model: FnnModel, l: int) -> None:
    if not 1 <= l <= model.depth - 1:
        raise IndexError(f"layer {l} is not a hidden layer (1..{model.depth - 1})")


def attribution_matrix(model: FnnModel, x: np.ndarray, l: int, sample_id: int = 0) -> AttributionMatrix:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("attribution_matrix takes a single sample")
    _check_hidden(model, l)
    trace = forward(model, x)
    jac = output_jacobian(model, trace, l)  # (D, N)
    return AttributionMatrix(np.abs(trace.h(l)[None, :] * jac).T, sample_id, l)


def maxpool_attribution(a: AttributionMatrix) -> AttributionVector:
    if a.values.ndim != 2 or a.values.size == 0:
        raise ShapeError("attribution matrix must be a non-empty 2-D array")
    return AttributionVector(a.values.max(axis=1), a.sample_id, a.layer)


def attribution_vectors(model: FnnModel, x: np.ndarray, l: int, chunk: int = 1024) -> np.ndarray:
    """Max-pooled attribution vectors for every row of ``x``: shape ``(M, N)``.

    Same arithmetic as ``maxpool_attribution(attribution_matrix(...))`` per
    sample, batched in fixed-size chunks so results are order-independent.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("attribution_vectors takes a 2-D sample matrix")
    _check_hidden(model, l)
    out = np.empty((x.shape[0], model.widths[l]))
    for lo in range(0, x.shape[0], chunk):
        trace = forward(model, x[lo : lo + chunk])
        jac = output_jacobian(model, trace, l)  # (B, D, N)
        out[lo : lo + chunk] = np.max(np.abs(trace.h(l)[:, None, :] * jac), axis=1)
    return out


def integrated_gradients(
    model: FnnModel,
    x: np.ndarray,
    baseline: np.ndarray | None = None,
    m_steps: int = 50,
    target: int | None = None,
) -> np.ndarray:
    """Right-Riemann Integrated Gradients of one logit along the straight path.

    ``target`` defaults to the class the model predicts for ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    if m_steps < 1:
        raise UsageError("m_steps must be at least 1")
    baseline = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if baseline.shape != x.shape or x.ndim != 1:
        raise ShapeError("x and baseline must be 1-D vectors of equal width")
    if target is None:
        target = int(np.argmax(forward(model, x).logits))
    alphas = np.arange(1, m_steps + 1) / m_steps
    path = baseline[None, :] + alphas[:, None] * (x - baseline)[None, :]
    trace = forward(model, path)
    seed = np.zeros_like(trace.logits)
    seed[:, target] = 1.0
    grads = backprop_to_layer(model, trace, 0, seed)
    return (x - baseline) * grads.mean(axis=0)


def write_attribution_csv(path: str | Path, vectors: np.ndarray, layer: int, sample_ids=None) -> None:
    vectors = np.asarray(vectors)
    ids = range(len(vectors)) if sample_ids is None else sample_ids
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "layer", "neuron", "score"])
        for sid, row in zip(ids, vectors):
            for n, score in enumerate(row):
                writer.writerow([int(sid), layer, n, repr(float(score))])


def read_attribution_csv(path: str | Path) -> tuple[np.ndarray, int]:
    rows: dict[int, dict[int, float]] = {}
    layer = 0
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            layer = int(rec["layer"])
            rows.setdefault(int(rec["sample_id"]), {})[int(rec["neuron"])] = float(rec["score"])
    ids = sorted(rows)
    n = max(len(r) for r in rows.values()) if rows else 0
    return np.array([[rows[i][k] for k in range(n)] for i in ids]), layer
