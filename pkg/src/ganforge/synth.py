"""Procedural grayscale eye images used as a self-contained training corpus.

Each image has a dark pupil disk, an iris annulus textured with radial
spokes and seeded noise, a darker limbus ring and a bright sclera. Some get
an upper eyelid with lashes and a specular highlight inside the pupil. All
per-image parameters are drawn from the ranges in :class:`SynthIrisParams`
with a generator seeded from (corpus seed, image index).
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .data import save_image
from .errors import ConfigError

__all__ = ["SynthIrisParams", "render_iris", "generate_synthetic_dataset", "MANIFEST_NAME"]

MANIFEST_NAME = "manifest.csv"


@dataclass(frozen=True)
class SynthIrisParams:
    size: int = 64
    pupil_radius: tuple[float, float] = (0.07, 0.13)  # fraction of image side
    iris_radius: tuple[float, float] = (0.26, 0.38)
    texture_freq: tuple[float, float] = (8.0, 28.0)  # spokes per revolution
    eyelid_angle: tuple[float, float] = (0.2, 1.0)  # radians, from the iris apex
    eyelid_probability: float = 0.6
    specular_probability: float = 0.5
    background: float = 200.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("pupil_radius", "iris_radius", "texture_freq", "eyelid_angle"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name} range is inverted: ({lo}, {hi})")
        if self.pupil_radius[0] <= 0:
            raise ConfigError("pupil radius must be positive")
        if self.pupil_radius[1] >= self.iris_radius[0]:
            raise ConfigError(
                f"pupil radius range {self.pupil_radius} must lie below iris radius range {self.iris_radius}"
            )
        if self.iris_radius[1] >= 0.5:
            raise ConfigError("iris radius must stay inside the image (< 0.5)")
        if self.texture_freq[0] <= 0:
            raise ConfigError("texture frequency must be positive")
        if not (0 <= self.eyelid_angle[0] and self.eyelid_angle[1] < np.pi / 2):
            raise ConfigError("eyelid angle must lie in [0, pi/2)")
        for name in ("eyelid_probability", "specular_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0 <= self.background <= 255:
            raise ConfigError("background intensity must lie in [0, 255]")
        if self.size < 8:
            raise ConfigError("image size must be at least 8 pixels")


def _smooth_noise(rng: np.random.Generator, size: int, cell: int) -> np.ndarray:
    """Value noise: a coarse random lattice upsampled bilinearly to size x size."""
    n = size // cell + 2
    lattice = rng.standard_normal((n, n))
    coords = np.arange(size) / cell
    i0 = np.floor(coords).astype(int)
    f = coords - i0
    rows = lattice[i0] * (1 - f)[:, None] + lattice[i0 + 1] * f[:, None]
    return rows[:, i0] * (1 - f)[None, :] + rows[:, i0 + 1] * f[None, :]


def _coverage(edge: np.ndarray) -> np.ndarray:
    """Anti-aliased inside-ness from a signed distance in pixels (positive inside)."""
    return np.clip(edge + 0.5, 0.0, 1.0)


def render_iris(params: SynthIrisParams, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    """Render one eye image; returns uint8 pixels and the drawn parameters (radii in pixels)."""
    s = params.size
    c = (s - 1) / 2.0
    y, x = np.mgrid[0:s, 0:s].astype(np.float64)
    dy, dx = y - c, x - c
    r = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)

    rp = rng.uniform(*params.pupil_radius) * s
    ri = rng.uniform(*params.iris_radius) * s
    freq = rng.uniform(*params.texture_freq)

    # sclera with gentle shading toward the corners
    img = params.background + 6.0 * _smooth_noise(rng, s, max(4, s // 6))
    img -= 40.0 * np.clip((r - 0.45 * s) / (0.3 * s), 0.0, 1.0)

    # iris: spokes modulated by concentric rings, crypts from value noise, limbus
    base = rng.uniform(80.0, 130.0)
    amp = rng.uniform(12.0, 30.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    rings = rng.uniform(1.5, 4.0)
    t = np.clip((r - rp) / max(ri - rp, 1e-6), 0.0, 1.0)
    iris = base + amp * np.sin(freq * theta + phase + 1.5 * np.sin(3 * t)) * (
        0.6 + 0.4 * np.cos(2 * np.pi * rings * t)
    )
    iris += 10.0 * _smooth_noise(rng, s, max(2, s // 16))
    iris -= 35.0 * np.exp(-(((r - ri) / max(0.035 * s, 1.0)) ** 2))
    w_iris = _coverage(ri - r)
    img = img * (1 - w_iris) + iris * w_iris

    pupil_level = rng.uniform(5.0, 30.0)
    w_pupil = _coverage(rp - r)
    img = img * (1 - w_pupil) + pupil_level * w_pupil

    specular = rng.random() < params.specular_probability
    if specular:
        off = rng.uniform(0.0, 0.45) * rp
        ang = rng.uniform(0.0, 2 * np.pi)
        sr = max(rng.uniform(0.2, 0.35) * rp, 0.75)
        sx, sy = c + off * np.cos(ang), c + off * np.sin(ang)
        w_spec = _coverage(sr - np.hypot(x - sx, y - sy)) * w_pupil
        img = img * (1 - w_spec) + rng.uniform(235.0, 255.0) * w_spec

    eyelid = rng.random() < params.eyelid_probability
    lid_angle = 0.0
    if eyelid:
        lid_angle = rng.uniform(*params.eyelid_angle)
        apex = c - ri * np.cos(lid_angle)
        # keep the lid and its lashes clear of the pupil
        apex = min(apex, c - rp - 0.06 * s)
        curve = apex + rng.uniform(0.6, 1.2) * (dx ** 2) / s
        skin = rng.uniform(140.0, 185.0) + 5.0 * _smooth_noise(rng, s, max(4, s // 8))
        w_lid = _coverage(curve - y)
        img = img * (1 - w_lid) + skin * w_lid
        lash_room = (c - rp) - apex
        for _ in range(int(rng.integers(6, 14))):
            lx = c + rng.uniform(-0.8, 0.8) * ri
            top = apex + (lx - c) ** 2 / s
            length = rng.uniform(0.3, 0.8) * lash_room
            slant = rng.uniform(-0.4, 0.4)
            for k in np.linspace(0.0, length, max(2, int(length * 2) + 1)):
                py, px = int(round(top + k)), int(round(lx + slant * k))
                if 0 <= py < s and 0 <= px < s and r[py, px] > rp + 1:
                    img[py, px] = min(img[py, px], rng.uniform(15.0, 45.0))

    img += rng.normal(0.0, 2.0, img.shape)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    meta = {
        "pupil_r": rp,
        "iris_r": ri,
        "texture_freq": freq,
        "eyelid": eyelid,
        "eyelid_angle": lid_angle,
        "specular": specular,
    }
    return pixels, meta


def image_seed(corpus_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([corpus_seed, index]).generate_state(1)[0])


def generate_synthetic_dataset(params: SynthIrisParams, count: int,
                               out_dir: Union[str, Path]) -> list[Path]:
    """Write ``count`` PNG eye images plus ``manifest.csv`` into ``out_dir``."""
    params.validate()
    if count < 1:
        raise ConfigError(f"synthetic corpus needs count >= 1, got {count}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    with open(out / MANIFEST_NAME, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["filename", "seed", "pupil_r", "iris_r", "texture_freq"])
        for i in range(count):
            seed = image_seed(params.seed, i)
            pixels, meta = render_iris(params, np.random.default_rng(seed))
            name = f"iris_{i:05d}.png"
            paths.append(save_image(pixels, out / name))
            writer.writerow([name, seed, f"{meta['pupil_r']:.6f}", f"{meta['iris_r']:.6f}",
                             f"{meta['texture_freq']:.6f}"])
    return paths


def params_dict(params: SynthIrisParams) -> dict:
    return asdict(params)
