"""Finite-difference gradient checking used across the test suite.

Each case builds a scalar loss from float64 input arrays twice: once through
the autodiff engine and once through plain numpy evaluation perturbed by
central differences. Float64 keeps the difference quotient itself accurate,
so the comparison isolates errors in the recorded backward rules.
"""

from __future__ import annotations

import numpy as np

from mutelab import tensor as T


def numeric_grad(f, arrays: list[np.ndarray], i: int, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f(arrays) w.r.t. arrays[i]."""
    base = [a.copy() for a in arrays]
    g = np.zeros_like(base[i])
    flat = base[i].reshape(-1)
    gflat = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(base)
        flat[k] = orig - h
        fm = f(base)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2.0 * h)
    return g


def run_case(builder, seed: int, rtol: float = 1e-4, atol: float = 1e-6) -> None:
    """Compare autodiff and finite-difference gradients for one case."""
    rng = np.random.default_rng(seed)
    arrays, graph = builder(rng)
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]

    def scalar(vals: list[np.ndarray]) -> float:
        ts = [T.Tensor(v, dtype=np.float64) for v in vals]
        return graph(ts).item()

    tensors = [T.Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    loss = graph(tensors)
    auto = T.gradients(loss, tensors)
    for i in range(len(arrays)):
        num = numeric_grad(scalar, arrays, i)
        err = np.abs(auto[i] - num)
        bound = atol + rtol * np.maximum(np.abs(auto[i]), np.abs(num))
        assert np.all(err <= bound), (
            f"gradient mismatch for input {i}: max err {err.max():.3e}, "
            f"allowed {bound[err.argmax() // 1].max():.3e}"
        )


def _weighted(rng, shape):
    """Random constant weights so every output element matters in the loss."""
    return rng.standard_normal(shape)


def _loss(out: "T.Tensor", w: np.ndarray) -> "T.Tensor":
    return (out * T.Tensor(w, dtype=np.float64)).sum()


# -- one builder per differentiable op ----------------------------------------


def case_add(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    w = _weighted(rng, (3, 4))
    return [a, b], lambda ts: _loss(ts[0] + ts[1], w)


def case_add_broadcast(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4,))
    w = _weighted(rng, (3, 4))
    return [a, b], lambda ts: _loss(ts[0] + ts[1], w)


def case_mul(rng):
    a, b = rng.standard_normal((2, 5)), rng.standard_normal((2, 5))
    w = _weighted(rng, (2, 5))
    return [a, b], lambda ts: _loss(ts[0] * ts[1], w)


def case_div(rng):
    a = rng.standard_normal((3, 3))
    b = rng.uniform(0.5, 2.0, (3, 3))
    w = _weighted(rng, (3, 3))
    return [a, b], lambda ts: _loss(ts[0] / ts[1], w)


def case_pow(rng):
    a = rng.uniform(0.2, 2.0, (4,))
    w = _weighted(rng, (4,))
    return [a], lambda ts: _loss(ts[0] ** 3.0, w)


def case_exp(rng):
    a = rng.standard_normal((3, 2))
    w = _weighted(rng, (3, 2))
    return [a], lambda ts: _loss(T.exp(ts[0]), w)


def case_log(rng):
    a = rng.uniform(0.1, 3.0, (5,))
    w = _weighted(rng, (5,))
    return [a], lambda ts: _loss(T.log(ts[0]), w)


def case_tanh(rng):
    a = rng.standard_normal((4, 2))
    w = _weighted(rng, (4, 2))
    return [a], lambda ts: _loss(T.tanh(ts[0]), w)


def case_maximum(rng):
    a = rng.standard_normal((6,)) * 2.0
    w = _weighted(rng, (6,))
    return [a], lambda ts: _loss(T.maximum(ts[0], 0.3), w)


def case_relu(rng):
    a = rng.standard_normal((6,)) + 0.05
    w = _weighted(rng, (6,))
    return [a], lambda ts: _loss(T.relu(ts[0]), w)


def case_gelu(rng):
    a = rng.standard_normal((3, 3))
    w = _weighted(rng, (3, 3))
    return [a], lambda ts: _loss(T.gelu(ts[0]), w)


def case_matmul(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    w = _weighted(rng, (3, 2))
    return [a, b], lambda ts: _loss(ts[0] @ ts[1], w)


def case_matmul_batched(rng):
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 3))
    w = _weighted(rng, (2, 3, 3))
    return [a, b], lambda ts: _loss(ts[0] @ ts[1], w)


def case_matmul_broadcast(rng):
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))
    w = _weighted(rng, (2, 3, 5))
    return [a, b], lambda ts: _loss(ts[0] @ ts[1], w)


def case_softmax(rng):
    a = rng.standard_normal((3, 5)) * 2.0
    w = _weighted(rng, (3, 5))
    return [a], lambda ts: _loss(T.softmax(ts[0]), w)


def case_log_softmax(rng):
    a = rng.standard_normal((2, 6)) * 2.0
    w = _weighted(rng, (2, 6))
    return [a], lambda ts: _loss(T.log_softmax(ts[0]), w)


def case_layer_norm(rng):
    a = rng.standard_normal((3, 8))
    g = rng.uniform(0.5, 1.5, (8,))
    b = rng.standard_normal((8,)) * 0.1
    w = _weighted(rng, (3, 8))
    return [a, g, b], lambda ts: _loss(T.layer_norm(ts[0], ts[1], ts[2]), w)


def case_sum_axis(rng):
    a = rng.standard_normal((3, 4))
    w = _weighted(rng, (4,))
    return [a], lambda ts: _loss(ts[0].sum(axis=0), w)


def case_mean_axis(rng):
    a = rng.standard_normal((3, 4))
    w = _weighted(rng, (3,))
    return [a], lambda ts: _loss(ts[0].mean(axis=1), w)


def case_reshape(rng):
    a = rng.standard_normal((2, 6))
    w = _weighted(rng, (3, 4))
    return [a], lambda ts: _loss(ts[0].reshape(3, 4), w)


def case_swapaxes(rng):
    a = rng.standard_normal((2, 3, 4))
    w = _weighted(rng, (2, 4, 3))
    return [a], lambda ts: _loss(ts[0].swapaxes(1, 2), w)


def case_getitem(rng):
    a = rng.standard_normal((4, 5))
    w = _weighted(rng, (2, 3))
    return [a], lambda ts: _loss(ts[0][1:3, 2:5], w)


def case_concat(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((4, 3))
    w = _weighted(rng, (6, 3))
    return [a, b], lambda ts: _loss(T.concat([ts[0], ts[1]], axis=0), w)


def case_take_rows(rng):
    a = rng.standard_normal((5, 3))
    ids = np.array([0, 2, 2, 4])
    w = _weighted(rng, (4, 3))
    return [a], lambda ts: _loss(T.take_rows(ts[0], ids), w)


def case_frame_signal(rng):
    a = rng.standard_normal((20,))
    w = _weighted(rng, (5, 8))
    return [a], lambda ts: _loss(T.frame_signal(ts[0], window=8, hop=3), w)


def case_frame_signal_batched(rng):
    a = rng.standard_normal((2, 20))
    w = _weighted(rng, (2, 5, 8))
    return [a], lambda ts: _loss(T.frame_signal(ts[0], window=8, hop=3), w)


def case_softmax_cross_entropy(rng):
    logits = rng.standard_normal((4,)) * 2.0
    return [logits], lambda ts: -T.log_softmax(ts[0].reshape(1, 4))[0, 2]


OP_CASES = {
    name[len("case_"):]: fn
    for name, fn in sorted(globals().items())
    if name.startswith("case_")
}
