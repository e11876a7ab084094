"""Texture sources for layers.

A texture is a callable ``tex(x, y) -> (..., 3)`` defined on the whole
plane, so layers can be resampled at arbitrary continuous positions without
a second interpolation step.
"""

from pathlib import Path

import numpy as np

from ..core import bilinear_sample, from_uint8


class ValueNoiseTexture:
    """Multi-octave value noise with smoothstep interpolation on a periodic lattice.

    Values stay inside ``base +- amplitude/2`` per channel, so no clipping is
    needed and the field is C1-smooth. ``contrast`` is the slope of the tanh
    squash applied to the centered noise.
    """

    PERIOD = 64

    def __init__(self, rng, cells=(48.0, 24.0, 12.0, 6.0), amplitude=0.5, contrast=3.0):
        self.cells = tuple(float(c) for c in cells)
        self.contrast = float(contrast)
        weights = 0.5 ** np.arange(len(self.cells))
        self.weights = weights / weights.sum()
        self.lattices = [rng.uniform(0.0, 1.0, size=(self.PERIOD, self.PERIOD)) for _ in self.cells]
        self.offsets = rng.uniform(0.0, self.PERIOD, size=(len(self.cells), 2))
        self.amplitude = float(amplitude)
        self.base = rng.uniform(0.25, 0.75, size=3)
        tint = rng.uniform(0.5, 1.0, size=3)
        self.tint = tint / tint.max()

    def noise(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        total = np.zeros(np.broadcast(x, y).shape)
        p = self.PERIOD
        for cell, weight, lattice, (ox, oy) in zip(self.cells, self.weights, self.lattices, self.offsets):
            gx = x / cell + ox
            gy = y / cell + oy
            ix = np.floor(gx)
            iy = np.floor(gy)
            fx = gx - ix
            fy = gy - iy
            sx = fx * fx * (3.0 - 2.0 * fx)
            sy = fy * fy * (3.0 - 2.0 * fy)
            i0 = ix.astype(np.int64) % p
            j0 = iy.astype(np.int64) % p
            i1 = (i0 + 1) % p
            j1 = (j0 + 1) % p
            top = lattice[j0, i0] * (1 - sx) + lattice[j0, i1] * sx
            bottom = lattice[j1, i0] * (1 - sx) + lattice[j1, i1] * sx
            total += weight * (top * (1 - sy) + bottom * sy)
        return total

    def __call__(self, x, y):
        # smooth squash in (-0.5, 0.5): stretches contrast without clipping
        n = 0.5 * np.tanh(self.contrast * (self.noise(x, y) - 0.5))
        return self.base + self.amplitude * n[..., None] * self.tint


class ProceduralTextures:
    """Default texture source: independent value-noise fields per layer."""

    def __init__(self, cells=(48.0, 24.0, 12.0, 6.0), amplitude=0.5, contrast=3.0):
        self.cells = cells
        self.amplitude = amplitude
        self.contrast = contrast

    def make(self, rng):
        return ValueNoiseTexture(rng, self.cells, self.amplitude, self.contrast)


class ImageTexture:
    def __init__(self, image, offset):
        self.image = image
        self.offset = offset

    def __call__(self, x, y):
        h, w = self.image.shape[:2]
        # mirror-repeat keeps the texture defined on the whole plane
        xx = np.abs(np.mod(np.asarray(x) + self.offset[0], 2 * (w - 1)) - (w - 1))
        yy = np.abs(np.mod(np.asarray(y) + self.offset[1], 2 * (h - 1)) - (h - 1))
        return bilinear_sample(self.image, (w - 1) - xx, (h - 1) - yy)


class ImageTextures:
    """Textures cut from a directory of user images at random offsets."""

    EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")

    def __init__(self, directory):
        from PIL import Image

        paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in self.EXTENSIONS)
        if not paths:
            raise ValueError(f"texture directory {directory} contains no images")
        self.images = [from_uint8(np.asarray(Image.open(p).convert("RGB"))) for p in paths]

    def make(self, rng):
        image = self.images[rng.integers(len(self.images))]
        h, w = image.shape[:2]
        return ImageTexture(image, (rng.uniform(0, w), rng.uniform(0, h)))
