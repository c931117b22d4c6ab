"""Fréchet distance between Gaussian fits of image features.

All arithmetic here is float64. Feature extraction is pluggable because no
pretrained classifier ships with the package:

* :class:`RandomConvExtractor` - a small conv net with frozen, seeded random
  weights; the default.
* :class:`DiscriminatorExtractor` - activations feeding a trained
  discriminator's scalar head.
* :class:`PixelExtractor` - average-pooled raw pixels.

Absolute values therefore depend on the extractor and are only comparable
within one extractor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from . import tensor as T
from .conv import conv2d
from .errors import NotPSDError, ShapeError, StatisticsError
from .tensor import Tensor

__all__ = [
    "GaussianStats",
    "FIDResult",
    "FeatureExtractor",
    "RandomConvExtractor",
    "PixelExtractor",
    "DiscriminatorExtractor",
    "as_feature_set",
    "fit_gaussian",
    "matrix_sqrt_psd",
    "frechet_distance",
    "compute_fid",
    "make_extractor",
]

log = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-8
PSD_ERROR_TOL = 1e-6
CLAMP_TOL = 1e-8


def as_feature_set(features) -> np.ndarray:
    """Validate an n x d feature matrix and return it as float64."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ShapeError(f"features must be an n x d matrix, got shape {f.shape}")
    if not np.isfinite(f).all():
        raise StatisticsError("features contain non-finite entries")
    return f


@dataclass(frozen=True)
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        d = mu.shape[0]
        if sigma.shape != (d, d):
            raise ShapeError(f"covariance shape {sigma.shape} does not match mean length {d}")
        if np.abs(sigma - sigma.T).max(initial=0.0) > SYMMETRY_TOL * max(1.0, np.abs(sigma).max(initial=0.0)):
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def fit_gaussian(features) -> GaussianStats:
    """Sample mean and unbiased (n - 1) covariance, symmetrized."""
    f = as_feature_set(features)
    n, d = f.shape
    if n < 2:
        raise StatisticsError(f"need at least 2 samples to fit a covariance, got {n}")
    if n < d + 1:
        log.warning("fitting a %d-dimensional covariance from only %d samples; it will be singular", d, n)
    mu = f.mean(axis=0)
    centered = f - mu
    s = centered.T @ centered / (n - 1)
    return GaussianStats(mu, (s + s.T) / 2)


def matrix_sqrt_psd(m: np.ndarray) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues in [-1e-6, 0) are treated as roundoff and clamped to zero.
    """
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"matrix_sqrt_psd needs a square matrix, got {m.shape}")
    scale = max(1.0, np.abs(m).max(initial=0.0))
    if np.abs(m - m.T).max(initial=0.0) > 1e-8 * scale:
        raise ValueError("matrix_sqrt_psd: matrix is not symmetric")
    w, q = np.linalg.eigh((m + m.T) / 2)
    if w.size and w.min() < -PSD_ERROR_TOL * scale:
        raise NotPSDError(f"matrix has eigenvalue {w.min():.3e} < 0")
    root = (q * np.sqrt(np.clip(w, 0.0, None))) @ q.T
    return (root + root.T) / 2


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a) + Tr(S_b) - 2 Tr((S_a S_b)^(1/2)).

    The cross term is evaluated as the sum of singular values of
    S_a^(1/2) S_b^(1/2), which equals Tr((S_a S_b)^(1/2)). Swapping the
    arguments only transposes that product, and roundoff in its small singular
    values is not amplified by a further square root.
    """
    if a.dim != b.dim:
        raise ShapeError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    diff = a.mu - b.mu
    cross = np.linalg.svd(matrix_sqrt_psd(a.sigma) @ matrix_sqrt_psd(b.sigma), compute_uv=False).sum()
    value = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * cross)
    if value < 0:
        if value < -CLAMP_TOL:
            log.warning("Frechet distance %.3e below zero beyond roundoff; clamped", value)
        value = 0.0
    return value


class FeatureExtractor(Protocol):
    id: str
    dim: int

    def __call__(self, images: np.ndarray) -> np.ndarray:
        """Map [n, C, R, R] images in [-1, 1] to an [n, dim] float64 matrix."""


def _batched(fn, images: np.ndarray, batch: int = 100) -> np.ndarray:
    out = [fn(images[i:i + batch]) for i in range(0, images.shape[0], batch)]
    return np.concatenate(out, axis=0)


class RandomConvExtractor:
    """Frozen random conv net: three 3x3 stride-2 conv + leaky ReLU stages.

    Features are the per-channel spatial mean and standard deviation of every
    stage, so d = 2 * (w + 2w + 4w) for width w.
    """

    def __init__(self, channels: int = 1, width: int = 8, seed: int = 0):
        rng = np.random.default_rng(seed)
        widths = [channels, width, 2 * width, 4 * width]
        self.weights = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            std = np.sqrt(2.0 / (cin * 9))
            self.weights.append(rng.normal(0.0, std, (cout, cin, 3, 3)))
        self.channels = channels
        self.dim = 2 * sum(widths[1:])
        self.id = f"randconv-w{width}-s{seed}"

    def _extract(self, images: np.ndarray) -> np.ndarray:
        feats = []
        with T.precision(np.float64):
            x = Tensor(images, dtype=np.float64)
            for w in self.weights:
                x = T.leaky_relu(conv2d(x, Tensor(w, dtype=np.float64), stride=2, padding=1), 0.2)
                feats.append(x.data.mean(axis=(2, 3)))
                feats.append(x.data.std(axis=(2, 3)))
        return np.concatenate(feats, axis=1)

    def __call__(self, images: np.ndarray) -> np.ndarray:
        images = _as_images(images, self.channels)
        return _batched(self._extract, images)


class PixelExtractor:
    """Raw pixels average-pooled down to ``size`` x ``size``."""

    def __init__(self, size: int = 8, channels: int = 1):
        self.size = size
        self.channels = channels
        self.dim = channels * size * size
        self.id = f"pixels-{size}"

    def __call__(self, images: np.ndarray) -> np.ndarray:
        images = _as_images(images, self.channels)
        n, c, h, w = images.shape
        if h % self.size or w % self.size:
            raise ShapeError(f"image side {h} is not a multiple of pooled size {self.size}")
        k = h // self.size
        pooled = images.reshape(n, c, self.size, k, self.size, k).mean(axis=(3, 5))
        return pooled.reshape(n, -1)


class DiscriminatorExtractor:
    """Activations before a discriminator's scalar head, evaluated in eval mode."""

    def __init__(self, discriminator, name: str = "discriminator"):
        self.net = discriminator
        s = discriminator.resolution // 16
        self.dim = 8 * discriminator.base_channels * s * s
        self.channels = discriminator.channels
        self.id = f"disc-{name}"

    def _extract(self, images: np.ndarray) -> np.ndarray:
        previous = self.net.training
        self.net.eval()
        try:
            return self.net.features(Tensor(images, dtype=np.float32)).data.astype(np.float64)
        finally:
            self.net.train(previous)

    def __call__(self, images: np.ndarray) -> np.ndarray:
        images = _as_images(images, self.channels)
        return _batched(self._extract, images)


def _as_images(images, channels: int) -> np.ndarray:
    arr = images.data if isinstance(images, Tensor) else np.asarray(images)
    if arr.ndim != 4 or arr.shape[1] != channels:
        raise ShapeError(f"expected [n, {channels}, R, R] images, got {arr.shape}")
    return arr


def make_extractor(kind: str, channels: int = 1, seed: int = 0, discriminator=None) -> FeatureExtractor:
    if kind == "randconv":
        return RandomConvExtractor(channels=channels, seed=seed)
    if kind == "pixels":
        return PixelExtractor(channels=channels)
    if kind == "discriminator":
        if discriminator is None:
            raise ValueError("the discriminator extractor needs a trained discriminator")
        return DiscriminatorExtractor(discriminator)
    raise ValueError(f"unknown extractor {kind!r}; choose randconv, pixels or discriminator")


@dataclass(frozen=True)
class FIDResult:
    fid: float
    n_real: int
    n_gen: int
    extractor: str
    feature_dim: int

    HEADER = "fid,n_real,n_gen,extractor,feature_dim"

    def to_csv(self) -> str:
        return f"{self.fid!r},{self.n_real},{self.n_gen},{self.extractor},{self.feature_dim}"


def compute_fid(real, generated, extractor: Optional[FeatureExtractor] = None) -> FIDResult:
    """FID between two image sets ([n, C, R, R] in [-1, 1]) under ``extractor``."""
    extractor = extractor or RandomConvExtractor()
    real = real.data if isinstance(real, Tensor) else np.asarray(real)
    generated = generated.data if isinstance(generated, Tensor) else np.asarray(generated)
    if real.shape[0] == 0 or generated.shape[0] == 0:
        raise StatisticsError("both image sets must be non-empty")
    if real.shape[1:] != generated.shape[1:]:
        raise ShapeError(f"image geometry differs: {real.shape[1:]} vs {generated.shape[1:]}")
    fr = fit_gaussian(extractor(real))
    fg = fit_gaussian(extractor(generated))
    return FIDResult(frechet_distance(fr, fg), real.shape[0], generated.shape[0], extractor.id, fr.dim)
