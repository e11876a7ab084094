"""Parametric layer motion: a similarity transform plus a smooth deformation.

A :class:`Motion` defines a map ``M(p) = c + s R (p - c) + t + d(p)`` where
``d`` is the bilinear interpolation of a coarse lattice of offsets spanning
the canvas. The flow of a layer is ``M(p) - p``.
"""

from dataclasses import dataclass

import numpy as np

from ..core import bilinear_sample, pixel_grid


@dataclass(frozen=True)
class Motion:
    log_scale: float
    rotation: float
    translation: tuple
    center: tuple
    canvas: tuple
    grid: np.ndarray = None

    def _matrix(self):
        theta = np.deg2rad(self.rotation)
        s = np.exp(self.log_scale)
        return s * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])

    def deformation(self, x, y):
        if self.grid is None:
            z = np.zeros(np.broadcast(x, y).shape)
            return z, z
        h, w = self.canvas
        g = self.grid.shape[0]
        gx = np.asarray(x) * ((g - 1) / (w - 1))
        gy = np.asarray(y) * ((g - 1) / (h - 1))
        d = bilinear_sample(self.grid, gx, gy)
        return d[..., 0], d[..., 1]

    def forward(self, x, y):
        """Position at the next time step of the points currently at (x, y)."""
        a = self._matrix()
        cx, cy = self.center
        tx, ty = self.translation
        dx, dy = self.deformation(x, y)
        rx, ry = np.asarray(x) - cx, np.asarray(y) - cy
        return (cx + a[0, 0] * rx + a[0, 1] * ry + tx + dx,
                cy + a[1, 0] * rx + a[1, 1] * ry + ty + dy)

    def inverse(self, x, y, iters=50, tol=1e-10):
        """Points that :meth:`forward` sends to (x, y), by fixed-point iteration."""
        ainv = np.linalg.inv(self._matrix())
        cx, cy = self.center
        tx, ty = self.translation
        qx = np.asarray(x, dtype=np.float64) - cx - tx
        qy = np.asarray(y, dtype=np.float64) - cy - ty

        def solve(dx, dy):
            bx, by = qx - dx, qy - dy
            return cx + ainv[0, 0] * bx + ainv[0, 1] * by, cy + ainv[1, 0] * bx + ainv[1, 1] * by

        px, py = solve(0.0, 0.0)
        if self.grid is None:
            return px, py
        for _ in range(iters):
            nx, ny = solve(*self.deformation(px, py))
            step = max(np.max(np.abs(nx - px), initial=0.0), np.max(np.abs(ny - py), initial=0.0))
            px, py = nx, ny
            if step < tol:
                break
        return px, py

    def field(self):
        h, w = self.canvas
        xs, ys = pixel_grid(h, w)
        fx, fy = self.forward(xs, ys)
        return np.stack([fx - xs, fy - ys], axis=-1)

    def to_dict(self):
        return {
            "log_scale": float(self.log_scale),
            "rotation": float(self.rotation),
            "translation": [float(v) for v in self.translation],
            "center": [float(v) for v in self.center],
            "canvas": list(self.canvas),
            "grid": None if self.grid is None else self.grid.tolist(),
        }


def sample_motion(spec, rng, canvas, center=None):
    """Draw a concrete :class:`Motion` from a :class:`MotionSpec`."""
    h, w = canvas
    if center is None:
        center = ((w - 1) / 2.0, (h - 1) / 2.0)
    log_scale = rng.uniform(spec.scale_min, spec.scale_max)
    rotation = rng.uniform(spec.rotation_min, spec.rotation_max)
    magnitude = rng.uniform(spec.translation_min, spec.translation_max)
    direction = np.deg2rad(rng.uniform(spec.direction_min, spec.direction_max))
    offsets = rng.uniform(-1.0, 1.0, size=(spec.grid_size, spec.grid_size, 2)) * spec.grid_strength
    norms = np.linalg.norm(offsets, axis=-1, keepdims=True)
    offsets = np.where(norms > spec.grid_strength,
                       offsets * (spec.grid_strength / np.maximum(norms, 1e-300)), offsets)
    grid = offsets if spec.grid_strength > 0 else None
    return Motion(
        log_scale=float(log_scale),
        rotation=float(rotation),
        translation=(float(magnitude * np.cos(direction)), float(magnitude * np.sin(direction))),
        center=(float(center[0]), float(center[1])),
        canvas=tuple(canvas),
        grid=grid,
    )


def build_motion_field(spec, canvas, rng_seed, center=None):
    """Sample a motion from ``spec`` and return its dense (H, W, 2) flow."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return sample_motion(spec, rng, canvas, center).field()
