"""Trainable layers: convolution, transposed convolution, batch norm, activations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .conv import conv2d, conv_transpose2d
from .errors import ConfigError, ShapeError, StatisticsError
from .tensor import Tensor, _result

__all__ = [
    "LayerSpec",
    "BatchNormState",
    "batchnorm_forward",
    "init_parameters",
    "build_layer",
    "Layer",
    "Conv2d",
    "ConvTranspose2d",
    "BatchNorm2d",
    "Activation",
    "Sequential",
    "conv_layers",
    "INIT_STD",
]

INIT_STD = 0.02
CONV_KINDS = ("conv", "conv_transpose")
ACTIVATION_KINDS = ("leaky_relu", "relu", "tanh", "sigmoid")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    bias: bool = False
    slope: float = 0.2
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        if self.kind in CONV_KINDS:
            if min(self.in_channels, self.out_channels, self.kernel, self.stride) <= 0:
                raise ConfigError(f"{self.kind} geometry must be strictly positive: {self}")
            if self.padding < 0:
                raise ConfigError(f"{self.kind} padding must be non-negative: {self}")
        elif self.kind == "batchnorm":
            if self.out_channels <= 0:
                raise ConfigError(f"batchnorm needs a positive channel count: {self}")
            if not 0.0 < self.momentum < 1.0 or self.eps <= 0:
                raise ConfigError(f"batchnorm momentum must lie in (0,1) and eps > 0: {self}")
        elif self.kind == "leaky_relu":
            if not 0.0 < self.slope < 1.0:
                raise ConfigError(f"leaky slope must lie in (0, 1), got {self.slope}")
        elif self.kind not in ACTIVATION_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        c = self.gamma.shape[0]
        shapes = {self.beta.shape, self.running_mean.shape, self.running_var.shape, self.gamma.shape}
        if shapes != {(c,)}:
            raise ShapeError(f"batch-norm state vectors disagree in length: {shapes}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def batchnorm_forward(x: Tensor, state: BatchNormState, mode: str = "train") -> Tensor:
    """Per-channel batch normalization of an [N, C, ...] tensor.

    ``train`` normalizes with the biased batch variance and folds the batch
    statistics into the running estimates (unbiased variance, exponential
    moving average with ``state.momentum``). ``eval`` uses the running
    estimates and leaves them untouched.
    """
    if x.ndim < 2 or x.shape[1] != state.channels:
        raise ShapeError(f"batch norm over {state.channels} channels got input {x.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    count = x.size // state.channels
    gamma = state.gamma.data.reshape(bshape)
    beta = state.beta.data.reshape(bshape)
    parents = (x, state.gamma, state.beta)

    if mode == "train":
        if count < 2:
            raise StatisticsError(
                f"batch norm in train mode needs at least 2 values per channel, got {count}"
            )
        mu = x.data.mean(axis=axes, keepdims=True)
        centered = x.data - mu
        var = (centered * centered).mean(axis=axes, keepdims=True)
        invstd = 1.0 / np.sqrt(var + state.eps)
        xhat = centered * invstd
        out = xhat * gamma + beta

        m = state.momentum
        state.running_mean[...] = (1 - m) * state.running_mean + m * mu.reshape(-1)
        state.running_var[...] = (1 - m) * state.running_var + m * var.reshape(-1) * (count / (count - 1))

        def bw(g, needs):
            gx = None
            if needs[0]:
                gxhat = g * gamma
                gx = (invstd / count) * (
                    count * gxhat
                    - gxhat.sum(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
                )
            return (
                gx,
                (g * xhat).sum(axis=axes) if needs[1] else None,
                g.sum(axis=axes) if needs[2] else None,
            )

    elif mode == "eval":
        rm = state.running_mean.reshape(bshape).astype(x.dtype)
        invstd = (1.0 / np.sqrt(state.running_var + state.eps)).reshape(bshape).astype(x.dtype)
        xhat = (x.data - rm) * invstd
        out = xhat * gamma + beta

        def bw(g, needs):
            return (
                g * gamma * invstd if needs[0] else None,
                (g * xhat).sum(axis=axes) if needs[1] else None,
                g.sum(axis=axes) if needs[2] else None,
            )

    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    return _result("batchnorm", out.astype(x.dtype, copy=False), parents, bw)


def init_parameters(spec: LayerSpec, rng_seed: int, dtype=None) -> dict[str, np.ndarray]:
    """Fresh parameter arrays for one layer, deterministic in ``rng_seed``.

    Conv weights ~ N(0, 0.02), batch-norm gamma ~ N(1, 0.02), beta and biases
    zero. Activations have no parameters.
    """
    dtype = np.dtype(dtype) if dtype is not None else T.default_dtype()
    rng = np.random.default_rng(rng_seed)
    if spec.kind == "conv":
        shape = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
    elif spec.kind == "conv_transpose":
        shape = (spec.in_channels, spec.out_channels, spec.kernel, spec.kernel)
    elif spec.kind == "batchnorm":
        c = spec.out_channels
        return {
            "gamma": rng.normal(1.0, INIT_STD, c).astype(dtype),
            "beta": np.zeros(c, dtype=dtype),
        }
    else:
        return {}
    params = {"weight": rng.normal(0.0, INIT_STD, shape).astype(dtype)}
    if spec.bias:
        params["bias"] = np.zeros(spec.out_channels, dtype=dtype)
    return params


class Layer:
    """A layer owns named parameter tensors and named buffers (non-trainable state)."""

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec})"


class Conv2d(Layer):
    def __init__(self, spec: LayerSpec, params: dict[str, np.ndarray]):
        super().__init__(spec)
        self.params = {k: Tensor(v, requires_grad=True, name=k, dtype=v.dtype) for k, v in params.items()}

    def forward(self, x):
        return conv2d(x, self.params["weight"], self.params.get("bias"),
                      stride=self.spec.stride, padding=self.spec.padding)


class ConvTranspose2d(Conv2d):
    def forward(self, x):
        return conv_transpose2d(x, self.params["weight"], self.params.get("bias"),
                                stride=self.spec.stride, padding=self.spec.padding)


class BatchNorm2d(Layer):
    def __init__(self, spec: LayerSpec, params: dict[str, np.ndarray]):
        super().__init__(spec)
        dtype = params["gamma"].dtype
        c = spec.out_channels
        self.state = BatchNormState(
            gamma=Tensor(params["gamma"], requires_grad=True, name="gamma", dtype=dtype),
            beta=Tensor(params["beta"], requires_grad=True, name="beta", dtype=dtype),
            running_mean=np.zeros(c, dtype=dtype),
            running_var=np.ones(c, dtype=dtype),
            eps=spec.eps,
            momentum=spec.momentum,
        )
        self.params = {"gamma": self.state.gamma, "beta": self.state.beta}
        self.buffers = {"running_mean": self.state.running_mean, "running_var": self.state.running_var}

    def forward(self, x):
        return batchnorm_forward(x, self.state, "train" if self.training else "eval")


class Activation(Layer):
    def forward(self, x):
        kind = self.spec.kind
        if kind == "leaky_relu":
            return T.leaky_relu(x, self.spec.slope)
        if kind == "relu":
            return T.relu(x)
        if kind == "tanh":
            return T.tanh(x)
        return T.sigmoid(x)


def build_layer(spec: LayerSpec, rng_seed: int, dtype=None) -> Layer:
    params = init_parameters(spec, rng_seed, dtype)
    if spec.kind == "conv":
        return Conv2d(spec, params)
    if spec.kind == "conv_transpose":
        return ConvTranspose2d(spec, params)
    if spec.kind == "batchnorm":
        return BatchNorm2d(spec, params)
    return Activation(spec)


class Sequential:
    """Ordered stack of layers with dotted parameter names ("3.weight")."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def __iter__(self) -> Iterator[Layer]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"{i}.{k}": p for i, layer in enumerate(self.layers) for k, p in layer.params.items()}

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": b for i, layer in enumerate(self.layers) for k, b in layer.buffers.items()}

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.named_parameters().values()))

    def train(self, mode: bool = True):
        self.training = mode
        for layer in self.layers:
            layer.training = mode
        return self

    def eval(self):
        return self.train(False)

    def requires_grad_(self, flag: bool = True):
        for p in self.named_parameters().values():
            p.requires_grad = flag
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters then buffers, in declaration order."""
        state = {k: p.data for k, p in self.named_parameters().items()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = set(params) | set(buffers)
        if strict and set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch; missing={missing} unexpected={extra}")
        for k, p in params.items():
            if k in state:
                if state[k].shape != p.shape:
                    raise ShapeError(f"{k}: stored shape {state[k].shape} != {p.shape}")
                p.data = np.array(state[k], dtype=p.dtype)
        for k, b in buffers.items():
            if k in state:
                if state[k].shape != b.shape:
                    raise ShapeError(f"{k}: stored shape {state[k].shape} != {b.shape}")
                b[...] = state[k]


def conv_layers(net: Sequential) -> list[Layer]:
    return [layer for layer in net if layer.spec.kind in CONV_KINDS]

