"""Image ingestion, latent sampling and image-grid output.

Pixels p in [0, 255] map to p / 127.5 - 1 in [-1, 1] on the way in and back
via round((v + 1) * 127.5) clamped to [0, 255] on the way out. Emitted files
are always PNG so they can be compared byte for byte.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DatasetError, ShapeError
from .tensor import Tensor

__all__ = [
    "DatasetHandle",
    "load_dataset",
    "sample_latent",
    "save_image_grid",
    "save_image",
    "read_image",
    "normalize",
    "denormalize",
    "grid_columns",
    "grid_cell",
    "GUTTER",
]

log = logging.getLogger(__name__)

GUTTER = 2


def normalize(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def denormalize(values: np.ndarray) -> np.ndarray:
    v = np.floor((np.asarray(values, dtype=np.float64) + 1.0) * 127.5 + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def _image_suffixes() -> set[str]:
    return {ext.lower() for ext in Image.registered_extensions()}


def _find_images(root: Path) -> list[Path]:
    suffixes = _image_suffixes()
    return sorted(
        p for p in root.rglob("*")
        if p.is_file() and p.suffix.lower() in suffixes and not p.name.startswith(".")
    )


def _center_crop(img: Image.Image) -> Image.Image:
    w, h = img.size
    side = min(w, h)
    left = (w - side) // 2
    top = (h - side) // 2
    return img.crop((left, top, left + side, top + side))


def _decode(path: Path, resolution: Optional[int]) -> np.ndarray:
    with Image.open(path) as img:
        img = _center_crop(img.convert("L"))
        if resolution is not None and img.size != (resolution, resolution):
            img = img.resize((resolution, resolution), Image.Resampling.LANCZOS)
        return np.asarray(img, dtype=np.uint8).copy()


@dataclass
class DatasetHandle:
    """Decoded grayscale images held as uint8, normalized on demand."""

    source: Path
    resolution: int
    pixels: np.ndarray  # [n, R, R] uint8
    files: list[Path] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    def __len__(self) -> int:
        return self.pixels.shape[0]

    @property
    def count(self) -> int:
        return len(self)

    def images(self, indices=None) -> Tensor:
        """Normalized images [k, 1, R, R] (all of them by default)."""
        px = self.pixels if indices is None else self.pixels[indices]
        return Tensor(normalize(px)[:, None], dtype=np.float32)

    def batches(self, batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator[Tensor]:
        """One shuffled epoch of full batches; a trailing partial batch is dropped."""
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        rng = self._rng if rng is None else rng
        order = rng.permutation(len(self))
        for start in range(0, len(order) - batch_size + 1, batch_size):
            yield self.images(order[start:start + batch_size])


def load_dataset(directory: Union[str, Path], resolution: Optional[int] = 64, seed: int = 0) -> DatasetHandle:
    """Decode every image below ``directory`` (recursively, sorted by path).

    Images become grayscale, are center-cropped to a square and resized to
    ``resolution``. With ``resolution=None`` the native cropped size is kept
    and all images must share it. Undecodable files are skipped with a
    warning.
    """
    root = Path(directory)
    if not root.is_dir():
        raise DatasetError(f"dataset directory {root} does not exist")
    paths = _find_images(root)
    if not paths:
        raise DatasetError(f"no image files found in {root}")
    arrays, files = [], []
    for p in paths:
        try:
            arrays.append(_decode(p, resolution))
            files.append(p)
        except (UnidentifiedImageError, OSError, ValueError) as e:
            log.warning("skipping undecodable image %s: %s", p, e)
    if not arrays:
        raise DatasetError(f"none of the {len(paths)} image files in {root} could be decoded")
    sizes = {a.shape for a in arrays}
    if len(sizes) != 1:
        raise ShapeError(f"images in {root} have differing sizes {sorted(sizes)}; pass a resolution")
    side = arrays[0].shape[0]
    return DatasetHandle(root, side, np.stack(arrays), files, seed)


def sample_latent(batch: int, dim: int, rng: Union[np.random.Generator, int, None] = None) -> Tensor:
    """Standard normal latents [batch, dim] as float32."""
    if batch < 1 or dim < 1:
        raise ValueError(f"latent batch and dim must be >= 1, got {batch}, {dim}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return Tensor(rng.standard_normal((batch, dim)), dtype=np.float32)


def save_image(pixels: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    if pixels.ndim == 3 and pixels.shape[0] == 1:
        pixels = pixels[0]
    elif pixels.ndim == 3:
        pixels = np.moveaxis(pixels, 0, -1)
    Image.fromarray(pixels).save(path, format="PNG")
    return path


def read_image(path: Union[str, Path]) -> np.ndarray:
    """Decode an image file to a uint8 array ([H, W] or [H, W, C])."""
    with Image.open(path) as img:
        return np.asarray(img).copy()


def grid_columns(count: int) -> int:
    """Smallest divisor of ``count`` that is at least its square root (8 -> 4, 16 -> 4)."""
    for c in range(1, count + 1):
        if c * c >= count and count % c == 0:
            return c
    return count


def save_image_grid(images, columns: int, path: Union[str, Path]) -> Path:
    """Tile [k, C, R, R] images in [-1, 1] row-major with 2-pixel black gutters."""
    arr = images.data if isinstance(images, Tensor) else np.asarray(images)
    if arr.ndim != 4 or arr.shape[0] < 1:
        raise ShapeError(f"expected a non-empty [k, C, R, R] batch, got {arr.shape}")
    if columns < 1:
        raise ValueError("columns must be positive")
    k, c, h, w = arr.shape
    cols = min(columns, k)
    rows = math.ceil(k / cols)
    px = denormalize(arr)
    grid = np.zeros((c, rows * h + (rows - 1) * GUTTER, cols * w + (cols - 1) * GUTTER), np.uint8)
    for i in range(k):
        r, q = divmod(i, cols)
        top, left = r * (h + GUTTER), q * (w + GUTTER)
        grid[:, top:top + h, left:left + w] = px[i]
    return save_image(grid, path)


def grid_cell(grid: np.ndarray, index: int, columns: int, size: int) -> np.ndarray:
    """Extract cell ``index`` from a decoded grayscale grid."""
    r, q = divmod(index, columns)
    top, left = r * (size + GUTTER), q * (size + GUTTER)
    return grid[top:top + size, left:left + size]
