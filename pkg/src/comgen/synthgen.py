"""Procedural renderers for the factorized sprite datasets.

Images are float32 arrays in ``[0, 1]`` laid out channels-first,
``(channels, height, width)``; an image set stacks them as
``(count, channels, height, width)`` ordered by flat combination index.

Shapes are defined in sprite-local units where the sprite's bounding circle
has radius 1, so every shape stays on canvas at every grid position and
under every rotation. Coverage is estimated on a regular ``s x s`` grid of
subpixel samples and box-averaged.
"""
from __future__ import annotations

import colorsys
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .factorspace import CATEGORICAL, FactorSpace, FactorSpec, FactorVector

DATASETS = ("circles", "simple", "sprites2d", "bands")
MAX_IMAGES = 200_000

SQRT3_2 = math.sqrt(3.0) / 2.0


@dataclass(frozen=True)
class RenderSpec:
    height: int = 64
    width: int = 64
    channels: int = 1
    supersample: int = 4

    def __post_init__(self):
        if self.height != self.width:
            raise ConfigurationError("canvas must be square")
        if self.height < 8:
            raise ConfigurationError("canvas must be at least 8 pixels")
        if self.channels not in (1, 3):
            raise ConfigurationError("channels must be 1 or 3")
        if self.supersample < 1:
            raise ConfigurationError("supersample must be >= 1")

    @property
    def size(self) -> int:
        return self.height

    def sprite_radius(self) -> float:
        # 5/32 of the canvas: an integer 5 px at 32, 10 px at 64.
        return self.size * 5 / 32

    def to_dict(self) -> dict:
        return {"height": self.height, "width": self.width,
                "channels": self.channels, "supersample": self.supersample}


@dataclass(frozen=True)
class DatasetDef:
    name: str
    space: FactorSpace

    def __post_init__(self):
        if self.name not in DATASETS:
            raise ConfigurationError(f"unknown dataset {self.name!r}; choose from {DATASETS}")
        required = {
            "circles": ("posX", "posY"),
            "simple": ("shape", "posX", "posY"),
            "sprites2d": ("shape", "scale", "orientation", "posX", "posY"),
            "bands": ("band_hue", "sprite_hue", "posX"),
        }[self.name]
        if self.space.names != required:
            raise ConfigurationError(f"{self.name} needs factors {required}, got {self.space.names}")
        if self.name in ("simple", "sprites2d"):
            shape = self.space.factor("shape")
            allowed = set(SHAPES)
            if shape.labels is None or not set(shape.labels) <= allowed:
                raise ConfigurationError(f"shape labels must be drawn from {sorted(allowed)}")

    @property
    def default_channels(self) -> int:
        return 3 if self.name == "bands" else 1


def make_dataset(name: str, **cardinalities) -> DatasetDef:
    """Dataset definition with default grid sizes, overridable per factor."""
    def k(factor, default):
        return int(cardinalities.pop(factor, default))

    if name == "circles":
        factors = [FactorSpec("posX", k("posX", 8)), FactorSpec("posY", k("posY", 8))]
    elif name == "simple":
        factors = [FactorSpec("shape", 2, CATEGORICAL, ("square", "triangle")),
                   FactorSpec("posX", k("posX", 16)), FactorSpec("posY", k("posY", 16))]
    elif name == "sprites2d":
        factors = [FactorSpec("shape", 3, CATEGORICAL, ("square", "ellipse", "triangle")),
                   FactorSpec("scale", k("scale", 4)), FactorSpec("orientation", k("orientation", 8)),
                   FactorSpec("posX", k("posX", 8)), FactorSpec("posY", k("posY", 8))]
    elif name == "bands":
        factors = [FactorSpec("band_hue", k("band_hue", 8)), FactorSpec("sprite_hue", k("sprite_hue", 8)),
                   FactorSpec("posX", k("posX", 8))]
    else:
        raise ConfigurationError(f"unknown dataset {name!r}; choose from {DATASETS}")
    if cardinalities:
        raise ConfigurationError(f"{name} has no factors {sorted(cardinalities)}")
    return DatasetDef(name, FactorSpace(factors))


# --- shape predicates in sprite-local units (y grows downwards) --------------

def _circle(u, v):
    return u * u + v * v <= 1.0


def _square(u, v):
    h = 1.0 / math.sqrt(2.0)
    return (np.abs(u) <= h) & (np.abs(v) <= h)


def _ellipse(u, v):
    return u * u + 4.0 * v * v <= 1.0


def _triangle(u, v):
    # Equilateral, point up, circumradius 1 about its centroid.
    return (v <= 0.5) & (SQRT3_2 * u - 0.5 * v <= 0.5) & (-SQRT3_2 * u - 0.5 * v <= 0.5)


SHAPES = {"circle": _circle, "square": _square, "ellipse": _ellipse, "triangle": _triangle}


def _sample_grid(n_pixels: int, supersample: int) -> np.ndarray:
    offsets = (np.arange(supersample) + 0.5) / supersample
    return (np.arange(n_pixels)[:, None] + offsets[None, :]).reshape(-1)


def _coverage(inside: np.ndarray, size: int, s: int) -> np.ndarray:
    return inside.reshape(size, s, size, s).mean(axis=(1, 3))


def _sprite_coverage(shape: str, cx: float, cy: float, radius: float, angle: float,
                     size: int, s: int) -> np.ndarray:
    pts = _sample_grid(size, s)
    dx = (pts[None, :] - cx) / radius
    dy = (pts[:, None] - cy) / radius
    if angle:
        c, sn = math.cos(angle), math.sin(angle)
        dx, dy = c * dx + sn * dy, -sn * dx + c * dy
    return _coverage(SHAPES[shape](dx, dy), size, s)


def hue_of(spec: FactorSpec, index: int) -> float:
    # Hue is periodic; spreading K levels over [0, 1) keeps them distinct.
    return index / spec.cardinality


def _band_layout(size: int) -> tuple[int, int, int]:
    """Band strip height, sprite side, sprite top row."""
    strip = size // 4
    side = size // 4
    top = strip + (size - strip - side) // 2
    return strip, side, top


def render(ds: DatasetDef, fv: FactorVector, spec: RenderSpec) -> np.ndarray:
    """Rasterize one combination as a ``(channels, H, W)`` float32 image."""
    space = ds.space
    if not space.contains(fv):
        raise ConfigurationError(f"factor vector {fv} does not belong to {space}")
    size, s = spec.size, spec.supersample
    g = dict(zip(space.names, fv.values))
    idx = dict(zip(space.names, fv.indices))

    if ds.name == "bands":
        strip, side, top = _band_layout(size)
        rgb = np.zeros((3, size, size))
        band = colorsys.hsv_to_rgb(hue_of(space.factor("band_hue"), idx["band_hue"]), 1.0, 1.0)
        rgb[:, :strip, :] = np.asarray(band)[:, None, None]
        left = g["posX"] * (size - side)
        xs = _sample_grid(size, s)
        inside_x = ((xs >= left) & (xs < left + side)).reshape(size, s).mean(axis=1)
        cover = np.zeros((size, size))
        cover[top:top + side, :] = inside_x[None, :]
        sprite = colorsys.hsv_to_rgb(hue_of(space.factor("sprite_hue"), idx["sprite_hue"]), 1.0, 1.0)
        rgb += np.asarray(sprite)[:, None, None] * cover[None]
        img = rgb if spec.channels == 3 else rgb.mean(axis=0, keepdims=True)
        return img.astype(np.float32)

    radius_max = spec.sprite_radius()
    travel = size - 2 * radius_max
    radius = radius_max
    angle = 0.0
    if ds.name == "circles":
        shape = "circle"
    else:
        shape_spec = space.factor("shape")
        shape = shape_spec.labels[idx["shape"]]
    if ds.name == "sprites2d":
        radius = radius_max * (0.5 + 0.5 * g["scale"])
        k = space.factor("orientation").cardinality
        angle = 2.0 * math.pi * idx["orientation"] / k
    cx = radius_max + g["posX"] * travel
    cy = radius_max + (1.0 - g["posY"]) * travel  # posY = 1 is the top row
    cover = _sprite_coverage(shape, cx, cy, radius, angle, size, s)
    img = np.repeat(cover[None], spec.channels, axis=0)
    return img.astype(np.float32)


def band_masks(spec: RenderSpec) -> tuple[np.ndarray, np.ndarray]:
    """Pixel supports (strip, sprite region) of the bands layout as boolean H x W masks."""
    strip, side, top = _band_layout(spec.size)
    band = np.zeros((spec.size, spec.size), dtype=bool)
    band[:strip] = True
    sprite = np.zeros_like(band)
    sprite[top:top + side] = True
    return band, sprite


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("COMGEN_THREADS", "1")))
    except ValueError:
        return 1


def generate_full(ds: DatasetDef, spec: RenderSpec, max_images: int = MAX_IMAGES) -> np.ndarray:
    """Render every combination, ordered by flat index."""
    total = ds.space.total
    if total > max_images:
        raise MemoryError(f"{total} images exceed the cap of {max_images}; raise max_images explicitly")
    out = np.empty((total, spec.channels, spec.height, spec.width), dtype=np.float32)
    rows = ds.space.all_indices()

    def work(i):
        out[i] = render(ds, ds.space.vector(rows[i]), spec)

    n = _threads()
    if n == 1:
        for i in range(total):
            work(i)
    else:
        with ThreadPoolExecutor(n) as pool:
            list(pool.map(work, range(total)))
    return out
