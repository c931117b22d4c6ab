import hashlib
from collections import Counter

import numpy as np
import pytest
from PIL import Image

from ganforge.data import (
    GUTTER,
    denormalize,
    grid_cell,
    grid_columns,
    load_dataset,
    normalize,
    read_image,
    sample_latent,
    save_image_grid,
)
from ganforge.errors import DatasetError, ShapeError


def write_png(path, pixels):
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path)
    return path


def test_wide_image_is_center_cropped_then_resized(tmp_path, rng):
    px = rng.integers(0, 256, (240, 320), dtype=np.uint8)
    px[:, :40] = 255  # bands outside the central 240 x 240 square
    px[:, 280:] = 0
    write_png(tmp_path / "wide.png", px)
    handle = load_dataset(tmp_path, resolution=64)
    expected = np.asarray(Image.fromarray(px[:, 40:280]).resize((64, 64), Image.Resampling.LANCZOS))
    assert handle.pixels.shape == (1, 64, 64)
    np.testing.assert_array_equal(handle.pixels[0], expected)
    assert handle.images().shape == (1, 1, 64, 64)


def test_mid_gray_maps_near_zero(tmp_path):
    write_png(tmp_path / "gray.png", np.full((32, 32), 128))
    x = load_dataset(tmp_path, resolution=16).images().data
    np.testing.assert_allclose(x, 128 / 127.5 - 1, rtol=0, atol=1e-7)
    assert x.flat[0] == pytest.approx(0.0039, abs=1e-4)


def test_endpoints():
    np.testing.assert_array_equal(normalize(np.array([0, 255], np.uint8)), [-1.0, 1.0])
    np.testing.assert_array_equal(denormalize(np.array([-1.0, 1.0])), [0, 255])
    np.testing.assert_array_equal(denormalize(np.array([-3.0, 7.0])), [0, 255])


def test_round_trip_all_byte_values():
    px = np.arange(256, dtype=np.uint8)
    np.testing.assert_array_equal(denormalize(normalize(px)), px)


def test_color_and_nested_inputs(tmp_path, rng):
    sub = tmp_path / "subject_01"
    sub.mkdir()
    rgb = rng.integers(0, 256, (20, 20, 3), dtype=np.uint8)
    Image.fromarray(rgb).save(sub / "a.jpg")
    write_png(tmp_path / "b.png", np.zeros((20, 20)))
    handle = load_dataset(tmp_path, resolution=16)
    assert len(handle) == 2
    assert [p.name for p in handle.files] == ["b.png", "a.jpg"]  # sorted by full path


def test_empty_directory(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing")


def test_undecodable_files_are_skipped(tmp_path, caplog):
    (tmp_path / "broken.png").write_bytes(b"not an image")
    write_png(tmp_path / "ok.png", np.zeros((8, 8)))
    handle = load_dataset(tmp_path, resolution=8)
    assert len(handle) == 1
    assert "broken.png" in caplog.text


def test_all_undecodable(tmp_path):
    (tmp_path / "broken.png").write_bytes(b"not an image")
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_native_resolution_requires_equal_sizes(tmp_path):
    write_png(tmp_path / "a.png", np.zeros((8, 8)))
    write_png(tmp_path / "b.png", np.zeros((10, 10)))
    with pytest.raises(ShapeError):
        load_dataset(tmp_path, resolution=None)


def test_epoch_yields_each_image_once(small_corpus):
    handle = load_dataset(small_corpus, resolution=32, seed=5)
    digest = lambda a: hashlib.sha256(a.tobytes()).hexdigest()
    everything = Counter(digest(img) for img in handle.images().data)
    seen = Counter()
    for batch in handle.batches(8):
        assert batch.shape == (8, 1, 32, 32)
        assert batch.data.min() >= -1.0 and batch.data.max() <= 1.0
        seen.update(digest(img) for img in batch.data)
    assert seen == everything


def test_partial_batch_dropped(small_corpus):
    handle = load_dataset(small_corpus, resolution=32)
    assert sum(1 for _ in handle.batches(15)) == 2


def test_shuffle_is_seeded(small_corpus):
    first = [b.data for b in load_dataset(small_corpus, 32, seed=1).batches(10)]
    again = [b.data for b in load_dataset(small_corpus, 32, seed=1).batches(10)]
    other = [b.data for b in load_dataset(small_corpus, 32, seed=2).batches(10)]
    assert all(np.array_equal(a, b) for a, b in zip(first, again))
    assert not all(np.array_equal(a, b) for a, b in zip(first, other))


def test_latent_shape_and_determinism():
    z = sample_latent(80, 100, 3)
    assert z.shape == (80, 100) and z.dtype == np.float32
    np.testing.assert_array_equal(z.data, sample_latent(80, 100, 3).data)
    with pytest.raises(ValueError):
        sample_latent(0, 100)


def test_latent_moments():
    z = sample_latent(1000, 1000, 0).data.astype(np.float64)
    assert abs(z.mean()) < 4e-3
    assert abs(z.var() - 1.0) < 1e-2


@pytest.mark.parametrize("count,cols", [(16, 4), (8, 4), (1, 1), (12, 4), (7, 7), (64, 8)])
def test_grid_columns(count, cols):
    assert grid_columns(count) == cols


def test_grid_layout_and_cell_round_trip(tmp_path, rng):
    px = rng.integers(0, 256, (16, 1, 8, 8), dtype=np.uint8)
    path = save_image_grid(normalize(px), 4, tmp_path / "grid.png")
    grid = read_image(path)
    side = 4 * 8 + 3 * GUTTER
    assert grid.shape == (side, side)
    for i in range(16):
        np.testing.assert_array_equal(grid_cell(grid, i, 4, 8), px[i, 0])
    assert not grid[8:8 + GUTTER].any() and not grid[:, 8:8 + GUTTER].any()


def test_grid_is_byte_deterministic(tmp_path, rng):
    imgs = rng.uniform(-1, 1, (4, 1, 8, 8))
    a = save_image_grid(imgs, 2, tmp_path / "a.png").read_bytes()
    b = save_image_grid(imgs, 2, tmp_path / "b.png").read_bytes()
    assert a == b


def test_grid_errors(tmp_path):
    with pytest.raises(ShapeError):
        save_image_grid(np.zeros((0, 1, 8, 8)), 2, tmp_path / "x.png")
    with pytest.raises(OSError):
        save_image_grid(np.zeros((1, 1, 8, 8)), 1, tmp_path / "missing" / "x.png")
