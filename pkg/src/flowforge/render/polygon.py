"""Random star-shaped polygons controlled by irregularity and spikiness."""

import numpy as np


def polygon_vertices(rng, num_vertices, irregularity, spikiness):
    """Unit-radius polygon around the origin.

    Angular steps are jittered by up to ``irregularity * 2*pi/n`` and radii
    are drawn from ``N(1, spikiness)``. Angles increase strictly and radii stay
    positive, so the polygon is star-shaped about the origin and therefore
    simple.
    """
    n = int(num_vertices)
    mean_step = 2.0 * np.pi / n
    jitter = irregularity * mean_step
    steps = rng.uniform(mean_step - jitter, mean_step + jitter, size=n)
    steps *= 2.0 * np.pi / steps.sum()
    start = rng.uniform(0.0, 2.0 * np.pi)
    angles = start + np.concatenate([[0.0], np.cumsum(steps[:-1])])
    radii = np.clip(rng.normal(1.0, spikiness, size=n), 0.05, 2.0)
    return np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1), radii


def sample_polygon(spec, rng_seed, canvas=(384, 512), num_vertices=None):
    """Draw one polygon in canvas pixel coordinates.

    The bounding-box diagonal is drawn uniformly from
    ``[diag_min, diag_max]`` and the construction center uniformly from
    ``[center_min, center_max]`` times the canvas extent.

    Returns:
        (n, 2) array of ``(x, y)`` vertices.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if num_vertices is None:
        num_vertices = rng.integers(spec.vertices_min, spec.vertices_max + 1)
    unit, _ = polygon_vertices(rng, num_vertices, spec.irregularity, spec.spikiness)
    extent = unit.max(axis=0) - unit.min(axis=0)
    diag = rng.uniform(spec.diag_min, spec.diag_max)
    unit = unit * (diag / np.hypot(*extent))
    h, w = canvas
    cx = rng.uniform(spec.center_min, spec.center_max) * (w - 1)
    cy = rng.uniform(spec.center_min, spec.center_max) * (h - 1)
    return unit + np.array([cx, cy])


def polygon_centroid(vertices):
    """Area centroid (shoelace formula)."""
    x, y = vertices[:, 0], vertices[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2.0
    if abs(area) < 1e-12:
        return vertices.mean(axis=0)
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)


def points_in_polygon(vertices, x, y):
    """Even-odd rule test, vectorized over points."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > y) != (y2 > y)
        x_at = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < x_at)
    return inside


def signed_distance(vertices, x, y):
    """Distance to the polygon boundary, positive inside."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    best = np.full(np.broadcast(x, y).shape, np.inf)
    n = len(vertices)
    for i in range(n):
        a = vertices[i]
        b = vertices[(i + 1) % n]
        d = b - a
        denom = d @ d
        t = np.clip(((x - a[0]) * d[0] + (y - a[1]) * d[1]) / denom, 0.0, 1.0) if denom > 0 else 0.0
        best = np.minimum(best, np.hypot(x - a[0] - t * d[0], y - a[1] - t * d[1]))
    return np.where(points_in_polygon(vertices, x, y), best, -best)
