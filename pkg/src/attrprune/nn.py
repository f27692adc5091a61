"""Dense feedforward network with exact reverse-mode gradients.

Layers are indexed from 1 to L as in ``h^l = act(W^l h^{l-1} + b^l)`` with
``h^0 = x``. ``W^l`` has shape ``(d_l, d_{l-1})`` so row ``j`` holds the
incoming weights of neuron ``j``. Everything runs in float64.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DivergenceError, ParseError, ShapeError, UsageError

ACTIVATIONS = ("relu", "identity", "softmax")
MODEL_FORMAT = "attrprune-fnn"


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match weight {self.weight.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"unknown activation {self.activation!r}")

    @property
    def fan_in(self) -> int:
        return self.weight.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[0]


@dataclass
class FnnModel:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a model needs at least one layer")
        for k in range(1, len(self.layers)):
            if self.layers[k].fan_in != self.layers[k - 1].fan_out:
                raise ShapeError(
                    f"layer {k + 1} expects {self.layers[k].fan_in} inputs, "
                    f"layer {k} produces {self.layers[k - 1].fan_out}"
                )
        for k, layer in enumerate(self.layers[:-1], start=1):
            if layer.activation == "softmax":
                raise UsageError(f"softmax is only allowed on the final layer (layer {k})")

    @classmethod
    def init(
        cls,
        widths: Sequence[int],
        seed: int,
        hidden: str = "relu",
        output: str = "softmax",
    ) -> "FnnModel":
        """Glorot-uniform weights and zero biases drawn from ``seed``."""
        if len(widths) < 2:
            raise UsageError("widths must list the input width and at least one layer")
        rng = np.random.default_rng(seed)
        layers = []
        for k in range(1, len(widths)):
            fan_in, fan_out = int(widths[k - 1]), int(widths[k])
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            act = output if k == len(widths) - 1 else hidden
            layers.append(Layer(w, np.zeros(fan_out), act))
        return cls(layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].fan_in] + [layer.fan_out for layer in self.layers]

    def layer(self, l: int) -> Layer:
        if not 1 <= l <= self.depth:
            raise IndexError(f"layer index {l} outside 1..{self.depth}")
        return self.layers[l - 1]

    def copy(self) -> "FnnModel":
        return copy.deepcopy(self)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x).logits

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_logits(x), axis=-1)


@dataclass
class ParamAnchor:
    """Frozen snapshot of a model's parameters, used as a penalty centre."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def of(cls, model: FnnModel) -> "ParamAnchor":
        return cls(
            [layer.weight.copy() for layer in model.layers],
            [layer.bias.copy() for layer in model.layers],
        )

    def check(self, model: FnnModel) -> None:
        if len(self.weights) != model.depth or any(
            w.shape != layer.weight.shape or b.shape != layer.bias.shape
            for w, b, layer in zip(self.weights, self.biases, model.layers)
        ):
            raise ShapeError("anchor shapes do not match the model")

    def sq_distance(self, model: FnnModel, trainable: Iterable[int] | None = None) -> float:
        idx = range(1, model.depth + 1) if trainable is None else trainable
        total = 0.0
        for l in idx:
            layer = model.layers[l - 1]
            total += float(np.sum((layer.weight - self.weights[l - 1]) ** 2))
            total += float(np.sum((layer.bias - self.biases[l - 1]) ** 2))
        return total


@dataclass
class ForwardTrace:
    """Post-activations ``h^0..h^L`` and pre-activations ``z^1..z^L``.

    Works for a single sample (1-D arrays) or a batch (2-D, rows are samples).
    """

    activations: list[np.ndarray]
    preactivations: list[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]

    @property
    def logits(self) -> np.ndarray:
        return self.preactivations[-1]

    def h(self, l: int) -> np.ndarray:
        return self.activations[l]


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax(z: np.ndarray) -> np.ndarray:
    return _activate(z, "softmax")


def forward(model: FnnModel, x: np.ndarray) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != model.widths[0]:
        raise ShapeError(f"input of shape {x.shape} does not match input width {model.widths[0]}")
    hs, zs = [x], []
    h = x
    for layer in model.layers:
        z = h @ layer.weight.T + layer.bias
        h = _activate(z, layer.activation)
        zs.append(z)
        hs.append(h)
    return ForwardTrace(hs, zs)


def forward_from(model: FnnModel, h: np.ndarray, l: int) -> ForwardTrace:
    """Run layers ``l+1..L`` starting from a given ``h^l``."""
    h = np.asarray(h, dtype=np.float64)
    hs, zs = [h], []
    for layer in model.layers[l:]:
        z = h @ layer.weight.T + layer.bias
        h = _activate(z, layer.activation)
        zs.append(z)
        hs.append(h)
    return ForwardTrace(hs, zs)


def _hidden_derivative(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


def backprop_to_layer(model: FnnModel, trace: ForwardTrace, l: int, grad_z: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. the final pre-activation ``z^L`` back to ``h^l``.

    ``grad_z`` may carry extra leading axes (e.g. one seed per output dim);
    its last axis must be ``d_L``. Per-sample relu masks broadcast over them.
    """
    g = grad_z
    for k in range(model.depth, l, -1):
        g = g @ model.layers[k - 1].weight
        if k - 1 > l:
            mask = _hidden_derivative(trace.preactivations[k - 2], model.layers[k - 2].activation)
            if g.ndim == mask.ndim + 1:
                mask = mask[..., None, :]
            g = g * mask
    return g


def _output_seed(model: FnnModel, trace: ForwardTrace, d: int, target: str) -> np.ndarray:
    z = trace.logits
    seed = np.zeros_like(z)
    seed[..., d] = 1.0
    if target == "logit":
        return seed
    if target != "output":
        raise UsageError(f"unknown gradient target {target!r}")
    kind = model.layers[-1].activation
    if kind == "softmax":
        y = trace.output
        return y[..., d : d + 1] * (seed - y)
    return seed * _hidden_derivative(z, kind)


def activation_gradient(
    model: FnnModel, trace: ForwardTrace, l: int, d: int, target: str = "logit"
) -> np.ndarray:
    """Gradient of output ``d`` with respect to the hidden activation ``h^l``.

    ``target="logit"`` differentiates the pre-softmax score; ``"output"``
    differentiates the post-activation output.
    """
    if not 1 <= l <= model.depth - 1:
        raise IndexError(f"layer {l} is not a hidden layer (1..{model.depth - 1})")
    n_out = model.widths[-1]
    if not 0 <= d < n_out:
        raise IndexError(f"output dim {d} outside 0..{n_out - 1}")
    return backprop_to_layer(model, trace, l, _output_seed(model, trace, d, target))


def output_jacobian(model: FnnModel, trace: ForwardTrace, l: int) -> np.ndarray:
    """All logit gradients at once: shape ``(..., D, d_l)``."""
    if not 0 <= l <= model.depth - 1:
        raise IndexError(f"layer {l} outside 0..{model.depth - 1}")
    n_out = model.widths[-1]
    lead = trace.logits.shape[:-1]
    seed = np.broadcast_to(np.eye(n_out), lead + (n_out, n_out))
    return backprop_to_layer(model, trace, l, seed)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy of softmax(logits) against integer labels."""
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    return log_norm - shifted[np.arange(len(labels)), labels]


def loss_and_grads(model: FnnModel, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over a batch and its gradients for every layer.

    Returns ``(loss, [(dW^1, db^1), ..., (dW^L, db^L)])``.
    """
    trace = forward(model, x)
    logits = trace.logits
    loss = float(np.mean(cross_entropy(logits, y)))
    m = len(y)
    g = softmax(logits)
    g[np.arange(m), y] -= 1.0
    g /= m
    grads = [None] * model.depth
    for k in range(model.depth, 0, -1):
        h_prev = trace.activations[k - 1]
        grads[k - 1] = (g.T @ h_prev, g.sum(axis=0))
        if k > 1:
            g = (g @ model.layers[k - 1].weight) * _hidden_derivative(
                trace.preactivations[k - 2], model.layers[k - 2].activation
            )
    return loss, grads


def objective(
    model: FnnModel,
    x: np.ndarray,
    y: np.ndarray,
    lam: float = 0.0,
    anchor: ParamAnchor | None = None,
    trainable: Iterable[int] | None = None,
) -> float:
    """Mean cross-entropy plus ``lam * ||theta - anchor||^2`` over trainable layers."""
    loss = float(np.mean(cross_entropy(forward(model, x).logits, y)))
    if anchor is not None and lam > 0:
        loss += lam * anchor.sq_distance(model, trainable)
    return loss


@dataclass
class TrainResult:
    model: FnnModel
    losses: list[float]
    epoch_seconds: list[float]


def _trainable_set(model: FnnModel, trainable: Iterable[int] | None) -> list[int]:
    if trainable is None:
        return list(range(1, model.depth + 1))
    out = sorted(set(int(l) for l in trainable))
    for l in out:
        model.layer(l)
    return out


def _run_epoch(model, x, y, order, layers, lr, lam, anchor, batch_size) -> float:
    """One pass over ``order``; returns the sample-weighted mean batch objective."""
    shrink = 1.0 + 2.0 * lr * lam
    total = 0.0
    for lo in range(0, len(order), batch_size):
        idx = order[lo : lo + batch_size]
        loss, grads = loss_and_grads(model, x[idx], y[idx])
        if lam > 0:
            loss += lam * anchor.sq_distance(model, layers)
        total += loss * len(idx)
        for l in layers:
            layer = model.layers[l - 1]
            gw, gb = grads[l - 1]
            if lam > 0:
                # argmin_w  <g, w> + |w - w_t|^2 / (2 lr) + lam |w - anchor|^2
                layer.weight = (layer.weight - lr * gw + 2.0 * lr * lam * anchor.weights[l - 1]) / shrink
                layer.bias = (layer.bias - lr * gb + 2.0 * lr * lam * anchor.biases[l - 1]) / shrink
            else:
                layer.weight = layer.weight - lr * gw
                layer.bias = layer.bias - lr * gb
    return total / len(order)


def train(
    model: FnnModel,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    lr: float,
    lam: float = 0.0,
    anchor: ParamAnchor | None = None,
    trainable: Iterable[int] | None = None,
    seed: int = 0,
    batch_size: int = 32,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Mini-batch gradient descent on the anchored cross-entropy objective.

    The quadratic anchor penalty is applied as an exact proximal step, so the
    update is stable for any ``lam`` (a plain gradient step on the penalty
    diverges once ``2 * lr * lam > 2``). With ``lam == 0`` or no anchor this is
    ordinary SGD. The input model is left untouched; a trained copy is
    returned. Layers outside ``trainable`` are never written.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise UsageError("cannot train on an empty dataset")
    if x.ndim != 2 or x.shape[0] != len(y):
        raise ShapeError(f"features {x.shape} do not match {len(y)} labels")
    if lr <= 0:
        raise UsageError("lr must be positive")
    if lam < 0:
        raise UsageError("lam must be non-negative")
    if batch_size < 1:
        raise UsageError("batch_size must be at least 1")
    if anchor is not None:
        anchor.check(model)
    model = model.copy()
    layers = _trainable_set(model, trainable)
    if anchor is None:
        lam = 0.0
    rng = np.random.default_rng(seed)
    m = len(y)
    losses, seconds = [], []
    for epoch in range(1, epochs + 1):
        start = time.perf_counter()
        with np.errstate(over="ignore", invalid="ignore"):
            mean_loss = _run_epoch(model, x, y, rng.permutation(m), layers, lr, lam, anchor, batch_size)
        if not np.isfinite(mean_loss) or not model.is_finite():
            raise DivergenceError(epoch, mean_loss)
        elapsed = time.perf_counter() - start
        losses.append(mean_loss)
        seconds.append(elapsed)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss, elapsed)
    return TrainResult(model, losses, seconds)


def apply_prune_mask(model: FnnModel, l: int, indices: Iterable[int]) -> FnnModel:
    """Zero the incoming weights and bias of the given neurons of layer ``l``."""
    layer = model.layer(l)
    idx = np.asarray(sorted(set(int(i) for i in indices)), dtype=np.int64)
    if idx.size and (idx[0] < 0 or idx[-1] >= layer.fan_out):
        raise IndexError(f"neuron index outside 0..{layer.fan_out - 1} in layer {l}")
    out = model.copy()
    if idx.size:
        target = out.layers[l - 1]
        target.weight[idx, :] = 0.0
        target.bias[idx] = 0.0
    return out


def zeroed_neurons(model: FnnModel, l: int) -> list[int]:
    layer = model.layer(l)
    dead = np.all(layer.weight == 0.0, axis=1) & (layer.bias == 0.0)
    return [int(i) for i in np.flatnonzero(dead)]


def save_model(model: FnnModel, path: str | Path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": 1,
        "widths": model.widths,
        "activations": [layer.activation for layer in model.layers],
        "layers": [
            {"weight": layer.weight.ravel().tolist(), "bias": layer.bias.tolist()}
            for layer in model.layers
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path: str | Path) -> FnnModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not a model file ({exc.msg})", exc.lineno) from exc
    if doc.get("format") != MODEL_FORMAT:
        raise ParseError(f"{path}: unrecognised model format {doc.get('format')!r}")
    widths = doc["widths"]
    layers = []
    for k, (entry, act) in enumerate(zip(doc["layers"], doc["activations"]), start=1):
        w = np.array(entry["weight"], dtype=np.float64)
        if w.size != widths[k] * widths[k - 1]:
            raise ParseError(f"{path}: layer {k} weight has {w.size} values")
        layers.append(Layer(w.reshape(widths[k], widths[k - 1]), entry["bias"], act))
    return FnnModel(layers)
