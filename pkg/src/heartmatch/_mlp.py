"""Plain-numpy multilayer perceptron used by potential models.

Architecture: LeakyReLU hidden layers, identity scalar output. Parameters
live in one flat float64 vector (per layer: weight matrix row-major, then
bias) so optimizers and finite-difference checks can treat the model as a
function of a single vector. All-zero parameters give output exactly 0.
"""

from __future__ import annotations

import numpy as np

LEAK = 0.01


def layer_shapes(input_dim: int, hidden: tuple[int, ...]) -> list[tuple[int, int]]:
    dims = [input_dim, *hidden, 1]
    return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


def param_count(input_dim: int, hidden: tuple[int, ...]) -> int:
    return sum(a * b + b for a, b in layer_shapes(input_dim, hidden))


def unpack(params: np.ndarray, input_dim: int, hidden: tuple[int, ...]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views into the flat vector; writing through them mutates `params`."""
    layers = []
    offset = 0
    for a, b in layer_shapes(input_dim, hidden):
        w = params[offset : offset + a * b].reshape(a, b)
        offset += a * b
        bias = params[offset : offset + b]
        offset += b
        layers.append((w, bias))
    if offset != params.size:
        raise ValueError(f"parameter vector has {params.size} entries, architecture needs {offset}")
    return layers


def forward(
    params: np.ndarray,
    x: np.ndarray,
    input_dim: int,
    hidden: tuple[int, ...],
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
):
    """Batched forward pass; x is (n, input_dim). Returns (out (n,), cache).

    Dropout (inverted, on hidden activations) is applied only when a rate and
    rng are given, i.e. during training steps.
    """
    layers = unpack(params, input_dim, hidden)
    h = x
    cache = {"inputs": [], "preacts": [], "masks": [], "x": x}
    for li, (w, b) in enumerate(layers):
        cache["inputs"].append(h)
        z = h @ w + b
        if li < len(layers) - 1:
            cache["preacts"].append(z)
            h = np.where(z > 0.0, z, LEAK * z)
            if dropout_rate > 0.0 and rng is not None:
                mask = (rng.random(h.shape) >= dropout_rate) / (1.0 - dropout_rate)
                h = h * mask
                cache["masks"].append(mask)
            else:
                cache["masks"].append(None)
        else:
            h = z
    out = h[:, 0]
    cache["hidden"] = hidden
    cache["input_dim"] = input_dim
    cache["params"] = params
    return out, cache


def backward(cache, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of sum(grad_out * out) w.r.t. the flat parameter vector."""
    params = cache["params"]
    layers = unpack(params, cache["input_dim"], cache["hidden"])
    grad = np.zeros_like(params)
    gview = unpack(grad, cache["input_dim"], cache["hidden"])

    delta = grad_out[:, None]  # (n, 1) gradient at the output layer input
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        gw, gb = gview[li]
        h_in = cache["inputs"][li]
        gw += h_in.T @ delta
        gb += delta.sum(axis=0)
        if li == 0:
            break
        delta = delta @ w.T
        mask = cache["masks"][li - 1]
        if mask is not None:
            delta = delta * mask
        z = cache["preacts"][li - 1]
        delta = delta * np.where(z > 0.0, 1.0, LEAK)
    return grad


def glorot_init(input_dim: int, hidden: tuple[int, ...], seed: int) -> np.ndarray:
    """Random hidden layers, final layer exactly zero: the initial potential
    is identically 0 (myopic-equivalent) but hidden features are trainable."""
    rng = np.random.default_rng(seed)
    parts = []
    shapes = layer_shapes(input_dim, hidden)
    for li, (a, b) in enumerate(shapes):
        if li == len(shapes) - 1:
            parts.append(np.zeros(a * b + b))
        else:
            bound = np.sqrt(6.0 / (a + b))
            parts.append(np.concatenate([rng.uniform(-bound, bound, a * b), np.zeros(b)]))
    return np.concatenate(parts)
