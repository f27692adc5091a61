"""Shared oracles and model generators for the test suite."""

import numpy as np

from attrprune.nn import FnnModel, Layer, forward_from


def random_model(rng: np.random.Generator, widths, output="softmax", bias_scale=0.5) -> FnnModel:
    layers = []
    for k in range(1, len(widths)):
        w = rng.normal(size=(widths[k], widths[k - 1])) / np.sqrt(widths[k - 1])
        b = bias_scale * rng.normal(size=widths[k])
        layers.append(Layer(w, b, output if k == len(widths) - 1 else "relu"))
    return FnnModel(layers)


def random_widths(rng: np.random.Generator, max_layers=4, max_width=32, min_out=2):
    n_layers = int(rng.integers(2, max_layers + 1))
    widths = [int(rng.integers(2, max_width + 1)) for _ in range(n_layers)]
    widths.append(int(rng.integers(min_out, 6)))
    return widths


def fd_activation_gradient(model: FnnModel, h: np.ndarray, l: int, d: int, step=1e-5) -> np.ndarray:
    """Central differences of logit ``d`` w.r.t. ``h^l``, re-running layers l+1..L."""
    g = np.zeros_like(h)
    for i in range(h.size):
        hp, hm = h.copy(), h.copy()
        hp[i] += step
        hm[i] -= step
        g[i] = (forward_from(model, hp, l).logits[d] - forward_from(model, hm, l).logits[d]) / (2 * step)
    return g


def rel_err(a, b) -> float:
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)``; 0 when both vanish."""
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def kinked(model: FnnModel, x: np.ndarray, l: int = 0, margin=1e-4) -> bool:
    """True if some relu pre-activation downstream of ``h^l`` is within ``margin`` of 0."""
    trace = forward_from(model, x, l)
    return any(
        np.any(np.abs(z) < margin)
        for z, layer in zip(trace.preactivations, model.layers[l:])
        if layer.activation == "relu"
    )


def fd_param_grads(model: FnnModel, x, y, lam=0.0, anchor=None, step=1e-5):
    """Central differences of the anchored objective w.r.t. every weight and bias."""
    from attrprune.nn import objective

    out = []
    for layer in model.layers:
        pair = []
        for arr in (layer.weight, layer.bias):
            g = np.zeros_like(arr)
            flat, gflat = arr.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + step
                up = objective(model, x, y, lam, anchor)
                flat[i] = keep - step
                down = objective(model, x, y, lam, anchor)
                flat[i] = keep
                gflat[i] = (up - down) / (2 * step)
            pair.append(g)
        out.append(tuple(pair))
    return out


def analytic_param_grads(model: FnnModel, x, y, lam=0.0, anchor=None):
    """Backprop gradients plus the closed-form anchor penalty gradient."""
    from attrprune.nn import loss_and_grads

    _, grads = loss_and_grads(model, x, y)
    if anchor is None or lam == 0:
        return grads
    return [
        (gw + 2 * lam * (layer.weight - aw), gb + 2 * lam * (layer.bias - ab))
        for (gw, gb), layer, aw, ab in zip(grads, model.layers, anchor.weights, anchor.biases)
    ]


def batch_kinked(model: FnnModel, x: np.ndarray, margin=1e-4) -> bool:
    from attrprune.nn import forward

    trace = forward(model, x)
    return any(
        np.any(np.abs(z) < margin)
        for z, layer in zip(trace.preactivations, model.layers)
        if layer.activation == "relu"
    )


def normal_equation_oracle(f: np.ndarray, z: np.ndarray, ridge=1e-8):
    """Solve the augmented system ``[F 1]^T [F 1] beta = [F 1]^T z``.

    The ridge term touches only the coefficient block, never the intercept.
    """
    x = np.column_stack([f, np.ones(len(z))])
    gram = x.T @ x
    gram[np.arange(f.shape[1]), np.arange(f.shape[1])] += ridge
    beta = np.linalg.solve(gram, x.T @ z)
    return beta[:-1], float(beta[-1])


def planted_activations(rng: np.random.Generator, m=1000, n=50, n_planted=5):
    """Relu-like activations where ``n_planted`` neurons fire only on z = 0 rows."""
    z = (rng.random(m) < 0.5).astype(np.int64)
    f = np.maximum(rng.normal(size=(m, n)), 0)
    planted = np.sort(rng.choice(n, size=n_planted, replace=False))
    fires = (z == 0) & (rng.random((n_planted, m)) < 0.5)
    f[:, planted] = (fires * rng.exponential(1.0, size=(n_planted, m))).T
    return f, z, planted.tolist()
