import numpy as np

from heartmatch import _mlp


def test_layer_shapes_and_param_count():
    assert _mlp.layer_shapes(5, ()) == [(5, 1)]
    assert _mlp.layer_shapes(4, (64, 32)) == [(4, 64), (64, 32), (32, 1)]
    assert _mlp.param_count(4, (64, 32)) == (4 * 64 + 64) + (64 * 32 + 32) + (32 * 1 + 1)
    assert _mlp.param_count(5, ()) == 6


def test_unpack_views_flat_vector():
    dim, hidden = 3, (2,)
    n = _mlp.param_count(dim, hidden)
    params = np.arange(n, dtype=float)
    layers = _mlp.unpack(params, dim, hidden)
    assert [w.shape for w, _ in layers] == [(3, 2), (2, 1)]
    flat_again = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])
    assert np.array_equal(flat_again, params)
    # views share memory with the flat vector
    layers[0][0][0, 0] = -99.0
    assert params[0] == -99.0


def test_forward_no_hidden_is_affine():
    params = np.array([2.0, -1.0, 0.5])  # W = [[2], [-1]], b = [0.5]
    x = np.array([[1.0, 3.0], [0.0, 0.0]])
    out, _ = _mlp.forward(params, x, 2, ())
    assert np.allclose(out, [2.0 - 3.0 + 0.5, 0.5])


def test_forward_matches_manual_composition():
    rng = np.random.default_rng(0)
    dim, hidden = 4, (3, 2)
    params = rng.normal(size=_mlp.param_count(dim, hidden))
    x = rng.normal(size=(6, dim))
    out, _ = _mlp.forward(params, x, dim, hidden)

    def leaky(z):
        return np.where(z > 0, z, _mlp.LEAK * z)

    layers = _mlp.unpack(params, dim, hidden)
    h = x
    for w, b in layers[:-1]:
        h = leaky(h @ w + b)
    w, b = layers[-1]
    want = (h @ w + b)[:, 0]
    assert np.allclose(out, want, rtol=1e-12, atol=0)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    dim, hidden = 3, (5, 4)
    n = _mlp.param_count(dim, hidden)
    params = rng.normal(scale=0.6, size=n)
    x = rng.normal(size=(7, dim))
    weights = rng.normal(size=7)  # loss = weights . out

    out, cache = _mlp.forward(params, x, dim, hidden)
    grad = _mlp.backward(cache, weights)
    assert grad.shape == (n,)

    h = 1e-6
    worst = 0.0
    for i in range(n):
        up, down = params.copy(), params.copy()
        up[i] += h
        down[i] -= h
        f_up = float(weights @ _mlp.forward(up, x, dim, hidden)[0])
        f_down = float(weights @ _mlp.forward(down, x, dim, hidden)[0])
        numeric = (f_up - f_down) / (2 * h)
        worst = max(worst, abs(numeric - grad[i]) / max(abs(numeric), abs(grad[i]), 1.0))
    assert worst < 1e-6


def test_glorot_init_zero_output_layer():
    for hidden in ((), (8,), (16, 8)):
        params = _mlp.glorot_init(6, hidden, seed=3)
        out, _ = _mlp.forward(params, np.random.default_rng(4).normal(size=(10, 6)), 6, hidden)
        assert np.array_equal(out, np.zeros(10))
    assert np.array_equal(_mlp.glorot_init(6, (8,), 5), _mlp.glorot_init(6, (8,), 5))
    assert not np.array_equal(_mlp.glorot_init(6, (8,), 5), _mlp.glorot_init(6, (8,), 6))


def test_dropout_deterministic_and_unbiased():
    rng = np.random.default_rng(2)
    dim, hidden = 4, (32,)
    params = rng.normal(scale=0.5, size=_mlp.param_count(dim, hidden))
    x = rng.normal(size=(5, dim))

    a, _ = _mlp.forward(params, x, dim, hidden, dropout_rate=0.3, rng=np.random.default_rng(9))
    b, _ = _mlp.forward(params, x, dim, hidden, dropout_rate=0.3, rng=np.random.default_rng(9))
    assert np.array_equal(a, b)

    clean, _ = _mlp.forward(params, x, dim, hidden)
    c, _ = _mlp.forward(params, x, dim, hidden, dropout_rate=0.3, rng=np.random.default_rng(10))
    assert not np.array_equal(clean, c)
    # inverted scaling keeps the expectation: average over many masks
    acc = np.zeros(5)
    draws = 4000
    for k in range(draws):
        out_k, _ = _mlp.forward(params, x, dim, hidden, dropout_rate=0.3, rng=np.random.default_rng(100 + k))
        acc += out_k
    assert np.allclose(acc / draws, clean, atol=0.15)


def test_dropout_needs_rng():
    params = _mlp.glorot_init(4, (8,), seed=0)
    x = np.ones((2, 4))
    out_rate_only, _ = _mlp.forward(params, x, 4, (8,), dropout_rate=0.5, rng=None)
    out_clean, _ = _mlp.forward(params, x, 4, (8,))
    assert np.array_equal(out_rate_only, out_clean)
