"""DC-GAN generator and discriminator.

Both networks carry exactly five convolution-type layers. For a square
output of side R the generator projects the latent vector to an s x s map
with s = R / 16 (a stride-1 transposed conv whose kernel equals s, applied to
a 1 x 1 input), then doubles the spatial extent four times with 4x4,
stride-2, padding-1 transposed convolutions. The discriminator mirrors the
ladder and ends with an s x s convolution down to a single logit.

For R = 64 and base_channels = 64 this is the canonical ladder:
4 -> 8 -> 16 -> 32 -> 64 with 512 -> 256 -> 128 -> 64 -> 1 channels.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .errors import GeometryError, ShapeError
from .layers import LayerSpec, Sequential, build_layer, conv_layers
from .tensor import Tensor

__all__ = [
    "GeneratorNet",
    "DiscriminatorNet",
    "build_generator",
    "build_discriminator",
    "generate",
    "discriminate",
    "start_size",
]

N_CONV_LAYERS = 5


def start_size(resolution: int) -> int:
    """Side of the smallest feature map in the ladder for a given resolution."""
    if not isinstance(resolution, (int, np.integer)) or resolution < 16 or resolution % 16:
        raise GeometryError(
            f"resolution {resolution} cannot be reached by four stride-2 doublings "
            "from an integer start size; use a multiple of 16"
        )
    return resolution // 16


def _layer_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def _build(specs: list[LayerSpec], seed: int) -> list:
    seeds = _layer_seeds(seed, len(specs))
    return [build_layer(spec, s) for spec, s in zip(specs, seeds)]


class GeneratorNet(Sequential):
    """Maps latent vectors [B, latent_dim] to images [B, channels, R, R] in [-1, 1]."""

    def __init__(self, latent_dim: int = 100, resolution: int = 64, base_channels: int = 64,
                 channels: int = 1, strict_batchnorm: bool = False, seed: int = 0):
        s = start_size(resolution)
        if latent_dim < 1 or base_channels < 1 or channels < 1:
            raise ShapeError("latent_dim, base_channels and channels must be positive")
        self.latent_dim = latent_dim
        self.resolution = resolution
        self.base_channels = base_channels
        self.channels = channels
        self.strict_batchnorm = strict_batchnorm
        self.seed = seed

        widths = [latent_dim] + [base_channels * m for m in (8, 4, 2, 1)] + [channels]
        specs: list[LayerSpec] = []
        for i in range(N_CONV_LAYERS):
            last = i == N_CONV_LAYERS - 1
            kernel, stride, padding = (s, 1, 0) if i == 0 else (4, 2, 1)
            norm = strict_batchnorm or not last
            specs.append(LayerSpec("conv_transpose", widths[i], widths[i + 1], kernel, stride,
                                   padding, bias=not norm))
            if norm:
                specs.append(LayerSpec("batchnorm", out_channels=widths[i + 1]))
            specs.append(LayerSpec("tanh" if last else "relu"))
        super().__init__(_build(specs, seed))

    def config(self) -> dict:
        return {
            "kind": "generator",
            "latent_dim": self.latent_dim,
            "resolution": self.resolution,
            "base_channels": self.base_channels,
            "channels": self.channels,
            "strict_batchnorm": self.strict_batchnorm,
            "seed": self.seed,
        }

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError(f"generator expects latents [batch, {self.latent_dim}], got {z.shape}")
        return super().forward(T.reshape(z, (z.shape[0], self.latent_dim, 1, 1)))


class DiscriminatorNet(Sequential):
    """Maps images [B, channels, R, R] to probabilities [B] of being real."""

    def __init__(self, resolution: int = 64, base_channels: int = 64, channels: int = 1,
                 strict_batchnorm: bool = False, leaky_slope: float = 0.2, seed: int = 0):
        s = start_size(resolution)
        self.resolution = resolution
        self.base_channels = base_channels
        self.channels = channels
        self.strict_batchnorm = strict_batchnorm
        self.leaky_slope = leaky_slope
        self.seed = seed

        widths = [channels] + [base_channels * m for m in (1, 2, 4, 8)] + [1]
        specs: list[LayerSpec] = []
        for i in range(N_CONV_LAYERS):
            first, last = i == 0, i == N_CONV_LAYERS - 1
            kernel, stride, padding = (s, 1, 0) if last else (4, 2, 1)
            norm = strict_batchnorm or not (first or last)
            specs.append(LayerSpec("conv", widths[i], widths[i + 1], kernel, stride, padding,
                                   bias=not norm))
            if norm:
                specs.append(LayerSpec("batchnorm", out_channels=widths[i + 1]))
            if last:
                specs.append(LayerSpec("sigmoid"))
            else:
                specs.append(LayerSpec("leaky_relu", slope=leaky_slope))
        super().__init__(_build(specs, seed))
        self._head = max(i for i, layer in enumerate(self.layers) if layer.spec.kind == "conv")

    def config(self) -> dict:
        return {
            "kind": "discriminator",
            "resolution": self.resolution,
            "base_channels": self.base_channels,
            "channels": self.channels,
            "strict_batchnorm": self.strict_batchnorm,
            "leaky_slope": self.leaky_slope,
            "seed": self.seed,
        }

    def _check(self, x: Tensor) -> None:
        want = (self.channels, self.resolution, self.resolution)
        if x.ndim != 4 or x.shape[1:] != want:
            raise ShapeError(f"discriminator expects images [batch, {want}], got {x.shape}")

    def features(self, x: Tensor) -> Tensor:
        """Flattened activations feeding the scalar head, [B, 8 * base * s * s]."""
        self._check(x)
        for layer in self.layers[: self._head]:
            x = layer(x)
        return T.flatten(x)

    def logits(self, x: Tensor) -> Tensor:
        self._check(x)
        for layer in self.layers[:-1]:
            x = layer(x)
        return T.reshape(x, (x.shape[0],))

    def forward(self, x: Tensor) -> Tensor:
        return T.sigmoid(self.logits(x))


def build_generator(latent_dim: int = 100, resolution: int = 64, base_channels: int = 64,
                    seed: int = 0, channels: int = 1, strict_batchnorm: bool = False) -> GeneratorNet:
    return GeneratorNet(latent_dim, resolution, base_channels, channels, strict_batchnorm, seed)


def build_discriminator(resolution: int = 64, base_channels: int = 64, seed: int = 0,
                        channels: int = 1, strict_batchnorm: bool = False,
                        leaky_slope: float = 0.2) -> DiscriminatorNet:
    return DiscriminatorNet(resolution, base_channels, channels, strict_batchnorm, leaky_slope, seed)


def _with_mode(net: Sequential, mode: Optional[str]):
    if mode is None:
        return None
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    previous = net.training
    net.train(mode == "train")
    return previous


def generate(net: GeneratorNet, z: Tensor, mode: Optional[str] = None) -> Tensor:
    """Run the generator; ``mode`` temporarily overrides its train/eval setting."""
    if not isinstance(z, Tensor):
        z = Tensor(z)
    previous = _with_mode(net, mode)
    try:
        return net(z)
    finally:
        if previous is not None:
            net.train(previous)


def discriminate(net: DiscriminatorNet, x: Tensor, mode: Optional[str] = None) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    previous = _with_mode(net, mode)
    try:
        return net(x)
    finally:
        if previous is not None:
            net.train(previous)


def census(net: Sequential) -> int:
    """Number of weight-bearing convolution-type layers."""
    return len(conv_layers(net))
