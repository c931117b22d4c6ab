"""Random-geometry finite-difference checks shared by unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from ganforge import tensor as T
from ganforge.conv import conv2d, conv_transpose2d
from ganforge.layers import BatchNormState, batchnorm_forward
from ganforge.tensor import Tensor

from oracles import gradcheck_total as gradcheck



def _conv_case(rng, dtype, h):
    n = int(rng.integers(1, 3))
    c, o = (int(v) for v in rng.integers(1, 4, 2))
    k = int(rng.integers(1, 5))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, k))
    size = int(rng.integers(max(k - 2 * pad, 1), 7))
    x = rng.standard_normal((n, c, size, size))
    w = rng.standard_normal((o, c, k, k))
    b = rng.standard_normal(o)
    out_shape = conv2d(Tensor(x, dtype=dtype), Tensor(w, dtype=dtype), stride=stride, padding=pad).shape
    r = rng.standard_normal(out_shape)
    return gradcheck(
        lambda x, w, b: T.sum(conv2d(x, w, b, stride, pad) * _projection_of(r, x.dtype)),
        [x, w, b], dtype, h,
    )


def _convt_case(rng, dtype, h):
    n = int(rng.integers(1, 3))
    c, o = (int(v) for v in rng.integers(1, 4, 2))
    k = int(rng.integers(1, 5))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, k))
    size = int(rng.integers(1, 5))
    while (size - 1) * stride - 2 * pad + k <= 0:
        size += 1
    x = rng.standard_normal((n, c, size, size))
    w = rng.standard_normal((c, o, k, k))
    b = rng.standard_normal(o)
    out_shape = conv_transpose2d(Tensor(x, dtype=dtype), Tensor(w, dtype=dtype), stride=stride, padding=pad).shape
    r = rng.standard_normal(out_shape)
    return gradcheck(
        lambda x, w, b: T.sum(conv_transpose2d(x, w, b, stride, pad) * _projection_of(r, x.dtype)),
        [x, w, b], dtype, h,
    )


def _bn_case(mode):
    def case(rng, dtype, h):
        n = int(rng.integers(2, 5))
        c = int(rng.integers(1, 4))
        size = int(rng.integers(1, 4))
        if n * size * size < 4:
            # with 2 values per channel the outputs are +-1 whatever x is, so
            # the x-gradient is O(eps) and a relative error only measures noise
            size = 2
        x = rng.standard_normal((n, c, size, size)) * 2 + 0.5
        gamma = rng.normal(1.0, 0.3, c)
        beta = rng.standard_normal(c)
        rm = rng.standard_normal(c) * 0.1
        rv = rng.uniform(0.5, 2.0, c)
        r = rng.standard_normal(x.shape)

        def fn(x, g, b):
            state = BatchNormState(g, b, rm.astype(x.dtype), rv.astype(x.dtype))
            return T.sum(batchnorm_forward(x, state, mode) * _projection_of(r, x.dtype))

        return gradcheck(fn, [x, gamma, beta], dtype, h)

    return case


def _pointwise_case(op, avoid_kink=False, scale=1.0):
    def case(rng, dtype, h):
        shape = tuple(int(v) for v in rng.integers(1, 5, 3))
        x = rng.standard_normal(shape) * scale
        if avoid_kink:
            x = np.where(np.abs(x) < 10 * h, x + 0.1, x)
        r = rng.standard_normal(shape)
        return gradcheck(lambda x: T.sum(op(x) * _projection_of(r, x.dtype)), [x], dtype, h)

    return case


def _sigmoid_head_case(rng, dtype, h):
    # log-probability head as used by the losses: mean(log(sigmoid(a)))
    n = int(rng.integers(2, 9))
    a = rng.standard_normal(n) * 2
    return gradcheck(lambda a: T.mean(T.log(T.sigmoid(a))), [a], dtype, h)


def _projection_of(r, dtype):
    return Tensor(r, dtype=dtype)


CASES = {
    "conv2d": _conv_case,
    "conv_transpose2d": _convt_case,
    "batchnorm_train": _bn_case("train"),
    "batchnorm_eval": _bn_case("eval"),
    "leaky_relu": _pointwise_case(lambda x: T.leaky_relu(x, 0.2), avoid_kink=True),
    "relu": _pointwise_case(T.relu, avoid_kink=True),
    "tanh": _pointwise_case(T.tanh),
    "sigmoid_head": _sigmoid_head_case,
}


def worst_errors(name: str, trials: int, dtype, h: float, seed: int = 0) -> list[float]:
    """Whole-gradient relative error of each of ``trials`` random geometries."""
    rng = np.random.default_rng(seed)
    return [CASES[name](rng, dtype, h) for _ in range(trials)]
