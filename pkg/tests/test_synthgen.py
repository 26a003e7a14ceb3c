import hashlib

import numpy as np
import pytest

from comgen.errors import ConfigurationError
from comgen.synthgen import RenderSpec, band_masks, generate_full, make_dataset, render


def translate_x(img, dx):
    """Reference shift of an image ``dx`` pixels to the right with zero fill."""
    out = np.zeros_like(img)
    out[..., dx:] = img[..., :img.shape[-1] - dx]
    return out


SPEC32 = RenderSpec(32, 32, 1)


def test_circle_centered_is_mirror_symmetric():
    ds = make_dataset("circles", posX=9, posY=9)
    img = render(ds, ds.space.vector((4, 4)), SPEC32)
    assert np.max(np.abs(img - img[..., ::-1])) == 0
    assert 0 < img.sum()


@pytest.mark.parametrize("shape", [0, 1])
def test_simple_translation_by_full_travel(shape):
    ds = make_dataset("simple")
    left = render(ds, ds.space.vector((shape, 0, 0)), SPEC32)
    right = render(ds, ds.space.vector((shape, 15, 0)), SPEC32)
    travel = 32 - 2 * 5
    assert np.array_equal(right, translate_x(left, travel))


def test_translation_equivariance_on_integer_steps():
    # 12 levels over 22 px of travel: 2 px per step
    ds = make_dataset("simple", posX=12, posY=12)
    for shape in (0, 1):
        base = render(ds, ds.space.vector((shape, 0, 5)), SPEC32)
        for i in range(1, 12):
            img = render(ds, ds.space.vector((shape, i, 5)), SPEC32)
            assert np.array_equal(img, translate_x(base, 2 * i))


def test_mirror_symmetry_for_symmetric_shapes():
    ds = make_dataset("sprites2d", posX=3, posY=3, orientation=4)
    for shape in range(3):
        img = render(ds, ds.space.vector((shape, 3, 0, 1, 1)), RenderSpec(64, 64, 1))
        assert np.max(np.abs(img - img[..., ::-1])) == 0


def test_foreground_grows_with_scale():
    ds = make_dataset("sprites2d")
    for shape in range(3):
        mass = [render(ds, ds.space.vector((shape, s, 1, 3, 3)), SPEC32).sum() for s in range(4)]
        assert np.all(np.diff(mass) >= 0)


def test_sprites_never_clipped():
    ds = make_dataset("sprites2d", orientation=5, posX=2, posY=2)
    area = {}
    for idx in ds.space.all_indices():
        img = render(ds, ds.space.vector(idx), SPEC32)
        key = (idx[0], idx[1], idx[2])
        area.setdefault(key, []).append(img.sum())
    # coverage at the corners equals coverage anywhere else: nothing falls off the canvas
    for masses in area.values():
        assert np.allclose(masses, masses[0], atol=1e-3)


def test_pixels_in_unit_interval():
    ds = make_dataset("sprites2d", posX=2, posY=2)
    imgs = generate_full(ds, SPEC32)
    assert imgs.min() >= 0 and imgs.max() <= 1
    assert imgs.dtype == np.float32


def test_bands_disjoint_supports():
    ds = make_dataset("bands")
    spec = RenderSpec(32, 32, 3)
    band, sprite = band_masks(spec)
    assert not (band & sprite).any()
    imgs = generate_full(ds, spec)
    grid = ds.space.all_indices()
    for img in imgs:
        nonzero = img.max(axis=0) > 0
        assert not (nonzero & ~(band | sprite)).any()
    # masking the strip removes every trace of band hue, and vice versa for the sprite
    by_rest = {}
    by_band = {}
    for img, (bh, sh, px) in zip(imgs, grid):
        by_rest.setdefault((sh, px), []).append(img[:, ~band])
        by_band.setdefault(bh, []).append(img[:, ~sprite])
    for group in list(by_rest.values()) + list(by_band.values()):
        assert all(np.array_equal(group[0], g) for g in group)


def test_render_rejects_foreign_vector():
    circles = make_dataset("circles")
    simple = make_dataset("simple")
    with pytest.raises(ConfigurationError):
        render(circles, simple.space.vector((0, 0, 0)), SPEC32)


def test_generate_counts():
    assert len(generate_full(make_dataset("circles"), SPEC32)) == 64
    assert len(generate_full(make_dataset("simple"), SPEC32)) == 512


def test_generate_is_deterministic():
    ds = make_dataset("simple")
    a = hashlib.sha256(generate_full(ds, SPEC32).tobytes()).hexdigest()
    b = hashlib.sha256(generate_full(ds, SPEC32).tobytes()).hexdigest()
    assert a == b


def test_parallel_generation_matches_serial(monkeypatch):
    ds = make_dataset("circles")
    serial = generate_full(ds, SPEC32)
    monkeypatch.setenv("COMGEN_THREADS", "3")
    assert np.array_equal(generate_full(ds, SPEC32), serial)


def test_memory_guard():
    with pytest.raises(MemoryError):
        generate_full(make_dataset("simple"), SPEC32, max_images=100)


def test_render_spec_validation():
    with pytest.raises(ConfigurationError):
        RenderSpec(32, 16)
    with pytest.raises(ConfigurationError):
        RenderSpec(32, 32, 2)
    with pytest.raises(ConfigurationError):
        RenderSpec(32, 32, 1, 0)
