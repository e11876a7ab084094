"""Downstream metrics and the loss-versus-error correlation study.

Includes keypoint propagation with PCK-T, mask propagation with IoU, Pearson
and Spearman correlation reports, and an estimator-quality ladder: a set of
estimators of graded accuracy (noisy ground-truth oracles, zero flow and
fitted estimators) whose error and self-supervised loss are compared.
"""

import csv
import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, stats

from .core import bilinear_sample, check_flow, check_same_size, crop
from .estimator import (EstimatorParams, FlowEstimator, VariationalFamily, ZeroFlowEstimator,
                        dataset_aepe, fit_estimator)
from .losses import LossWeights, score_estimator
from .render.dataset import render_samples
from .render.params import EffectSpec, PolygonSpec, RenderParams, with_values

# -- keypoints ----------------------------------------------------------------


def propagate_keypoints(keypoints, flows):
    """Advance keypoints through a chain of flows (frame i -> i+1).

    Each step samples the flow bilinearly at the current subpixel location.
    Points that leave the frame are clamped to the border and flagged; the
    flag is sticky.

    Args:
        keypoints: (K, 2) array of ``(x, y)`` at frame 0.
        flows: Sequence of (H, W, 2) flows.

    Returns:
        ``(tracks, flags)`` shaped (F+1, K, 2) and (F+1, K).
    """
    pts = np.array(keypoints, dtype=np.float64).reshape(-1, 2)
    flows = [check_flow(f) for f in flows]
    if flows:
        check_same_size(*flows)
    tracks = [pts.copy()]
    flags = [np.zeros(len(pts), dtype=bool)]
    for f in flows:
        h, w = f.shape[:2]
        d = bilinear_sample(f, pts[:, 0], pts[:, 1]).reshape(-1, 2)
        nxt = pts + d
        out = (nxt[:, 0] < 0) | (nxt[:, 0] > w - 1) | (nxt[:, 1] < 0) | (nxt[:, 1] > h - 1)
        nxt[:, 0] = np.clip(nxt[:, 0], 0, w - 1)
        nxt[:, 1] = np.clip(nxt[:, 1], 0, h - 1)
        pts = nxt
        tracks.append(pts.copy())
        flags.append(flags[-1] | out)
    return np.stack(tracks), np.stack(flags)


def pck_t(tracks, annotations, areas, alpha=0.2):
    """Percentage of correctly transferred keypoints.

    A tracked point is correct when it lies within ``alpha * sqrt(area)`` of
    its annotation, where ``area`` is the segmentation-mask area of that
    frame.

    Args:
        tracks: (F, K, 2) propagated points.
        annotations: (F, K, 2) annotated points; NaN marks "not annotated".
        areas: (F,) mask areas in pixels.
    """
    tracks = np.asarray(tracks, dtype=np.float64)
    ann = np.asarray(annotations, dtype=np.float64)
    if tracks.shape != ann.shape:
        raise ValueError(f"tracks {tracks.shape} and annotations {ann.shape} differ")
    areas = np.asarray(areas, dtype=np.float64).reshape(-1)
    if len(areas) != tracks.shape[0]:
        raise ValueError("one mask area per frame is required")
    annotated = np.all(np.isfinite(ann), axis=-1)
    if not annotated.any():
        raise ValueError("pck_t: no annotations")
    dist = np.linalg.norm(tracks - np.where(np.isfinite(ann), ann, 0.0), axis=-1)
    correct = dist <= alpha * np.sqrt(areas)[:, None]
    return 100.0 * np.count_nonzero(correct & annotated) / np.count_nonzero(annotated)


# -- masks --------------------------------------------------------------------


def _splat(mask, flow):
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    tx = np.rint(xs + flow[ys, xs, 0]).astype(np.int64)
    ty = np.rint(ys + flow[ys, xs, 1]).astype(np.int64)
    keep = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    out = np.zeros_like(mask)
    out[ty[keep], tx[keep]] = True
    # close the one-pixel holes left by diverging flow
    return out | _hole_candidates(out)


def _hole_candidates(m):
    """Pixels with splatted neighbors on opposite sides (row or column)."""
    p = np.pad(m, 1)
    horiz = p[1:-1, :-2] & p[1:-1, 2:]
    vert = p[:-2, 1:-1] & p[2:, 1:-1]
    return horiz | vert


def _backward(mask, flow):
    h, w = mask.shape
    ys, xs = np.mgrid[0:h, 0:w]
    sx = np.clip(np.rint(xs - flow[..., 0]), 0, w - 1).astype(np.int64)
    sy = np.clip(np.rint(ys - flow[..., 1]), 0, h - 1).astype(np.int64)
    return mask[sy, sx]


def propagate_mask(mask, flows, method="splat"):
    """Advect a binary mask through a chain of flows.

    ``"splat"`` moves every mask pixel to the nearest pixel of ``p + flow(p)``
    and closes one-pixel gaps; ``"backward"`` samples the previous mask at
    ``p - flow(p)`` (nearest), approximating the inverse flow by the negated
    forward flow.

    Returns:
        List of F+1 masks, starting with the input.
    """
    mask = np.asarray(mask, dtype=bool)
    fn = {"splat": _splat, "backward": _backward}.get(method)
    if fn is None:
        raise ValueError(f"unknown propagation method {method!r}")
    out = [mask.copy()]
    for f in flows:
        check_same_size(mask, f, names=("mask", "flow"))
        out.append(fn(out[-1], check_flow(f)))
    return out


def iou(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    check_same_size(a, b, names=("a", "b"))
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


# -- correlation --------------------------------------------------------------


@dataclass(frozen=True)
class Correlation:
    n: int
    pearson: float
    spearman: float

    def to_dict(self):
        return {"n": self.n, "pearson": self.pearson, "spearman": self.spearman}


def correlate(x, y):
    """Pearson and Spearman coefficients; ``None`` where undefined."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("correlate: x and y must be 1-D of equal length")
    if len(x) < 3:
        raise ValueError("correlate: need at least 3 pairs")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return Correlation(len(x), None, None)
    pearson = float(stats.pearsonr(x, y)[0])
    spearman = float(stats.spearmanr(x, y)[0])
    return Correlation(len(x), _clip_unit(pearson), _clip_unit(spearman))


def _clip_unit(r):
    return None if not math.isfinite(r) else min(1.0, max(-1.0, r))


def correlation_report(rows, terms=("photo", "smooth", "distill", "total")):
    """Correlate AEPE with each loss term.

    Args:
        rows: Sequence of mappings holding ``aepe`` and every name in
            ``terms``.

    Returns:
        Mapping term -> :class:`Correlation`.
    """
    rows = list(rows)
    if len(rows) < 3:
        raise ValueError("correlation_report: need at least 3 samples")
    errors = [r["aepe"] for r in rows]
    return {t: correlate(errors, [r[t] for r in rows]) for t in terms}


def write_scatter_csv(path, rows, columns=("name", "aepe", "photo", "smooth", "distill", "total")):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for r in rows:
            writer.writerow([r.get(c) for c in columns])


# -- quality ladder -----------------------------------------------------------


def _key(img):
    return hashlib.sha1(np.ascontiguousarray(img, dtype=np.float64).tobytes()).hexdigest()


def _noise_field(shape, seed, length):
    rng = np.random.default_rng(seed)
    n = rng.standard_normal(shape + (2,))
    if length > 0:
        n = np.stack([ndimage.gaussian_filter(n[..., c], length, mode="wrap") for c in range(2)], axis=-1)
    return n / n.reshape(-1, 2).std(axis=0)


class NoisyOracle(FlowEstimator):
    """Ground truth plus spatially correlated Gaussian noise.

    The noise is a fixed function of the scene: frames are recognized by
    content, so the prediction on a crop is the crop of the full-frame
    prediction, except that a fraction ``1 - view_correlation**2`` of the
    noise variance is redrawn independently for each view.

    Args:
        samples: Iterable of ``(img_t, img_t1, gt_flow)``.
        sigma: Per-component noise standard deviation in pixels.
        seed: Noise seed.
        length: Correlation length (Gaussian smoothing sigma) in pixels.
        view_correlation: Correlation between full-frame and view noise.
    """

    def __init__(self, samples, sigma, seed=0, length=4.0, view_correlation=0.8):
        self.gt = {_key(a): np.asarray(g, dtype=np.float64) for a, _, g in samples}
        self.sigma = float(sigma)
        self.seed = int(seed)
        self.length = float(length)
        self.rho = float(view_correlation)

    def _lookup(self, img_t):
        try:
            return self.gt[_key(img_t)]
        except KeyError:
            raise ValueError("NoisyOracle: frame not in the oracle's sample set") from None

    def _noise(self, key, shape, view):
        digest = int(key[:12], 16)
        return _noise_field(shape, [self.seed, digest, view], self.length)

    def estimate(self, img_t, img_t1):
        gt = self._lookup(img_t)
        if self.sigma == 0:
            return [gt.copy()]
        return [gt + self.sigma * self._noise(_key(img_t), gt.shape[:2], 0)]

    def estimate_view(self, img_t, img_t1, box, contrast=1.0, brightness=0.0):
        top, left, h, w = box
        full = self.estimate(img_t, img_t1)[-1]
        if self.sigma == 0:
            return [crop(full, top, left, h, w)]
        key = _key(img_t)
        shared = crop(self._noise(key, full.shape[:2], 0), top, left, h, w)
        own = self._noise(key, (h, w), 1 + top * 100003 + left)
        gt = crop(self._lookup(img_t), top, left, h, w)
        return [gt + self.sigma * (self.rho * shared + math.sqrt(1 - self.rho ** 2) * own)]


def evaluate_ladder(estimators, samples, weights, seed=0):
    """AEPE and loss breakdown of each named estimator on labeled samples.

    Args:
        estimators: Sequence of ``(name, estimator)``.
        samples: Sequence of ``(img_t, img_t1, gt_flow)``.

    Returns:
        List of row dicts with ``name``, ``aepe`` and the loss terms.
    """
    samples = list(samples)
    pairs = [(a, b) for a, b, _ in samples]
    rows = []
    for name, est in estimators:
        b = score_estimator(est, pairs, weights, seed)
        rows.append(dict(name=name, aepe=dataset_aepe(est, samples), **b.to_dict()))
    return rows


def oracle_ladder(samples, sigmas, seed=0, length=4.0, view_correlation=0.8):
    """Noisy-oracle rungs plus the zero-flow estimator."""
    rungs = [(f"oracle_sigma_{s:g}", NoisyOracle(samples, s, seed, length, view_correlation)) for s in sigmas]
    return rungs + [("zero_flow", ZeroFlowEstimator())]


def rank_of(rows, name, key):
    """1-based rank (1 = lowest value) of row ``name`` under ``key``; ties
    share the best rank."""
    value = next(r[key] for r in rows if r["name"] == name)
    return 1 + sum(r[key] < value for r in rows)


LADDER_SIGMAS = (0.0,) + tuple(float(s) for s in np.geomspace(0.05, 1.5, 18))


def ladder_estimators(samples, seed=0):
    """The 25-rung ladder: ground truth, 18 noise levels, zero flow and five
    variational estimators (1 to 5 pyramid levels) fitted on rendered data."""
    base = ladder_base()
    rungs = oracle_ladder(samples, LADDER_SIGMAS, seed)
    for level in range(1, 6):
        family = VariationalFamily(free=("regularization",), init=EstimatorParams(pyramid_levels=level))
        data = render_samples(with_values(base, {"bg_motion.translation": 2.0 * level}), 2, 50 + level + seed)
        fit = fit_estimator(family, data, budget=3)
        rungs.append((f"variational_levels_{level}", family.build(fit.params)))
    return rungs


def ladder_base():
    return RenderParams(canvas=(96, 128), polygon=PolygonSpec(diag_min=20, diag_max=60),
                        effects=EffectSpec(0, 0, 0, 0, 0))


def ladder_target(seed=0, jobs=1):
    """Labeled single-occluder target pairs used by the ladder fixture."""
    params = with_values(ladder_base(), {"bg_motion.translation_min": 3.0, "bg_motion.translation_max": 6.0,
                                         "num_objects": 1})
    return [(s.frame_t, s.frame_t1, s.gt_flow) for s in render_samples(params, 4, 500 + seed, jobs)]


def ladder_fixture(seed=0, jobs=1, weights=None):
    """Rows (name, aepe, loss terms) of the quality ladder on its target."""
    samples = ladder_target(seed, jobs)
    return evaluate_ladder(ladder_estimators(samples, seed), samples, weights or LossWeights(), seed)
