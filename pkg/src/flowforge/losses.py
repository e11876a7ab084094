"""Self-supervised losses, the dataset search metric and flow error metrics.

The search metric scores a flow estimator on unlabeled image pairs as

    total = photo + w_smooth * smooth + w_distill * distill

using only the estimator's final prediction.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import check_flow, check_same_size, crop, to_gray, warp_image

PRESETS = {
    "sintel": (0.6, 4.0),
    "davis": (0.6, 4.0),
    "kitti": (1.2, 8.0),
}


@dataclass(frozen=True)
class LossWeights:
    """Search-metric configuration.

    ``census_scale`` multiplies [0, 1] intensities before the census
    comparison so that ``census_soft_eps`` is expressed in 8-bit units.
    ``distill_crop`` is the student crop size as a fraction of the frame and
    ``distill_jitter`` the magnitude of the shared brightness/contrast jitter.
    """

    w_smooth: float = 0.6
    w_distill: float = 4.0
    smooth_order: int = 2
    edge_weight_scale: float = 150.0
    census_patch: int = 7
    census_soft_eps: float = 0.81
    census_scale: float = 255.0
    distill_crop: float = 0.8
    distill_jitter: float = 0.05

    def __post_init__(self):
        if self.w_smooth < 0 or self.w_distill < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.smooth_order not in (1, 2):
            raise ValueError(f"smooth_order must be 1 or 2, got {self.smooth_order}")
        if self.census_patch < 1 or self.census_patch % 2 == 0:
            raise ValueError(f"census_patch must be odd, got {self.census_patch}")
        if self.census_soft_eps <= 0:
            raise ValueError("census_soft_eps must be positive")
        if self.edge_weight_scale < 0:
            raise ValueError("edge_weight_scale must be nonnegative")
        if not 0 < self.distill_crop <= 1:
            raise ValueError("distill_crop must lie in (0, 1]")

    @classmethod
    def preset(cls, name, **overrides):
        try:
            w_smooth, w_distill = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown weight preset {name!r}; choose from {sorted(PRESETS)}") from None
        return cls(w_smooth=w_smooth, w_distill=w_distill, **overrides)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown loss weight key(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LossBreakdown:
    photo: float
    smooth: float
    distill: float
    total: float

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SequenceLossConfig:
    gamma: float = 0.8
    N: int = 1

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.N < 1:
            raise ValueError("N must be >= 1")


@dataclass(frozen=True)
class ErrorStats:
    aepe: float
    fl_all: float
    aepe_noc: float

    def to_dict(self):
        return asdict(self)


def _mean(values):
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("mean over an empty set")
    # fixed-order, compensated summation: independent of any reduction order
    return math.fsum(values.tolist()) / values.size


def _valid_mask(valid, shape):
    if valid is None:
        return np.ones(shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != tuple(shape):
        raise ValueError(f"valid mask shape {valid.shape} does not match {tuple(shape)}")
    return valid


# -- census photometric loss --------------------------------------------------


def census_transform(img, patch=7, eps=0.81, scale=255.0):
    """Soft ternary census signature of every pixel.

    Each of the ``patch**2 - 1`` neighbors contributes ``d / sqrt(eps + d**2)``
    where ``d`` is the (scaled) neighbor-minus-center intensity difference.
    Neighbors beyond the border are clamped.

    Returns:
        (H, W, patch**2 - 1) array.
    """
    if patch < 1 or patch % 2 == 0:
        raise ValueError(f"census patch must be odd, got {patch}")
    gray = to_gray(img) * scale
    r = patch // 2
    padded = np.pad(gray, r, mode="edge")
    h, w = gray.shape
    comps = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            d = padded[r + dy : r + dy + h, r + dx : r + dx + w] - gray
            comps.append(d / np.sqrt(eps + d * d))
    if not comps:
        return np.zeros((h, w, 0))
    return np.stack(comps, axis=-1)


def soft_hamming(a, b, thresh=0.1):
    sq = (a - b) ** 2
    return np.sum(sq / (thresh + sq), axis=-1)


def border_mask(shape, margin):
    m = np.zeros(shape, dtype=bool)
    h, w = shape
    if h > 2 * margin and w > 2 * margin:
        m[margin : h - margin, margin : w - margin] = True
    return m


def photometric_loss(img_t, img_t1, flow, valid=None, patch=7, eps=0.81, scale=255.0):
    """Census soft-Hamming distance between frame t and warped frame t+1.

    Averages over pixels that are valid, lie at least ``patch // 2`` from the
    border and whose flow target stays inside the frame.
    """
    check_same_size(img_t, img_t1, flow, names=("img_t", "img_t1", "flow"))
    valid = _valid_mask(valid, flow.shape[:2])
    if not valid.any():
        raise ValueError("photometric_loss: valid mask is empty")
    warped, oof = warp_image(img_t1, flow)
    dist = soft_hamming(census_transform(img_t, patch, eps, scale), census_transform(warped, patch, eps, scale))
    mask = valid & ~oof & border_mask(flow.shape[:2], patch // 2)
    if not mask.any():
        raise ValueError("photometric_loss: no pixel left after border and out-of-frame exclusion")
    return _mean(dist[mask])


# -- edge-aware smoothness ----------------------------------------------------


def _diff(a, axis, k):
    return np.diff(a, n=k, axis=axis)


def _stride_diff(a, axis, k):
    n = a.shape[axis]
    hi = np.take(a, np.arange(k, n), axis=axis)
    lo = np.take(a, np.arange(0, n - k), axis=axis)
    return hi - lo


def smoothness_terms(flow, img, k=2, edge_weight_scale=150.0):
    """Per-pixel weighted k-th order flow differences along x and y.

    Returns:
        ``(terms_x, terms_y)`` shaped (H, W-k, 2) and (H-k, W, 2): the
        absolute k-th difference of each flow channel times
        ``exp(-edge_weight_scale * mean_c |I(p + k) - I(p)|)``.
    """
    if k not in (1, 2):
        raise ValueError(f"smoothness order must be 1 or 2, got {k}")
    flow = check_flow(flow)
    check_same_size(flow, img, names=("flow", "img"))
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    out = []
    for axis in (1, 0):
        if flow.shape[1 - axis if axis == 0 else 0] < 1 or flow.shape[axis] <= k:
            raise ValueError(f"flow too small for order-{k} differences")
        dflow = np.abs(_diff(flow, axis, k))
        weight = np.exp(-edge_weight_scale * np.mean(np.abs(_stride_diff(img, axis, k)), axis=-1))
        out.append(dflow * weight[..., None])
    return out[0], out[1]


def smoothness_loss(flow, img, k=2, edge_weight_scale=150.0):
    """Average of the x- and y-direction mean weighted |k-th difference|."""
    tx, ty = smoothness_terms(flow, img, k, edge_weight_scale)
    return 0.5 * (_mean(tx) + _mean(ty))


# -- distillation -------------------------------------------------------------


def distillation_loss(teacher_flow, student_flow, crop_box, valid=None):
    """Mean endpoint distance between the teacher restricted to ``crop_box``
    and the student's prediction on the crop.

    Args:
        teacher_flow: (H, W, 2) prediction on the full frames; treated as a
            constant target.
        student_flow: (h, w, 2) prediction on the cropped frames.
        crop_box: ``(top, left, h, w)`` in teacher pixel coordinates.
        valid: Optional (h, w) mask of pixels to score.
    """
    top, left, h, w = (int(v) for v in crop_box)
    if h < 1 or w < 1:
        raise ValueError("distillation_loss: empty crop")
    target = crop(check_flow(teacher_flow), top, left, h, w)
    student_flow = check_flow(student_flow)
    if student_flow.shape != target.shape:
        raise ValueError(f"student flow {student_flow.shape} does not match crop {target.shape}")
    valid = _valid_mask(valid, (h, w))
    if not valid.any():
        raise ValueError("distillation_loss: valid mask is empty")
    return _mean(np.linalg.norm(target - student_flow, axis=-1)[valid])


def total_metric(photo, smooth, distill, weights):
    for name, v in (("photo", photo), ("smooth", smooth), ("distill", distill)):
        if not math.isfinite(v):
            raise ValueError(f"{name} term is not finite")
    total = photo + weights.w_smooth * smooth + weights.w_distill * distill
    return LossBreakdown(float(photo), float(smooth), float(distill), float(total))


# -- supervised losses and error metrics --------------------------------------


def sequence_loss(predictions, pseudo_gt, cfg=None, valid=None):
    """Exponentially weighted mean L1 error over a list of predictions.

    The n-th of N predictions gets weight ``gamma ** (N - n)``; the per-pixel
    error is the L1 norm ``|du| + |dv|``.
    """
    predictions = list(predictions)
    if not predictions:
        raise ValueError("sequence_loss: no predictions")
    cfg = cfg or SequenceLossConfig(N=len(predictions))
    if cfg.N != len(predictions):
        raise ValueError(f"config expects N={cfg.N} predictions, got {len(predictions)}")
    pseudo_gt = check_flow(pseudo_gt)
    valid = _valid_mask(valid, pseudo_gt.shape[:2])
    if not valid.any():
        raise ValueError("sequence_loss: valid mask is empty")
    n_total = len(predictions)
    loss = 0.0
    for n, pred in enumerate(predictions, start=1):
        check_same_size(pred, pseudo_gt, names=("prediction", "pseudo_gt"))
        l1 = np.abs(pseudo_gt - pred).sum(axis=-1)
        loss += cfg.gamma ** (n_total - n) * _mean(l1[valid])
    return loss


def endpoint_error(pred, gt):
    check_same_size(pred, gt, names=("pred", "gt"))
    return np.linalg.norm(check_flow(pred) - check_flow(gt), axis=-1)


def aepe(pred, gt, valid=None):
    err = endpoint_error(pred, gt)
    valid = _valid_mask(valid, err.shape)
    if not valid.any():
        raise ValueError("aepe: valid mask is empty")
    return _mean(err[valid])


def outliers(pred, gt):
    """KITTI outlier map: error above 3 px and above 5% of the GT magnitude."""
    err = endpoint_error(pred, gt)
    mag = np.linalg.norm(gt, axis=-1)
    return (err > 3.0) & (err > 0.05 * mag)


def fl_all(pred, gt, valid=None):
    out = outliers(pred, gt)
    valid = _valid_mask(valid, out.shape)
    if not valid.any():
        raise ValueError("fl_all: valid mask is empty")
    return 100.0 * np.count_nonzero(out & valid) / np.count_nonzero(valid)


def error_stats(pred, gt, valid=None, occlusion=None):
    valid = _valid_mask(valid, np.shape(gt)[:2])
    noc = valid if occlusion is None else valid & ~np.asarray(occlusion, dtype=bool)
    return ErrorStats(
        aepe=aepe(pred, gt, valid),
        fl_all=fl_all(pred, gt, valid),
        aepe_noc=aepe(pred, gt, noc) if noc.any() else float("nan"),
    )


# -- scoring an estimator on unlabeled pairs ----------------------------------


def distill_view(shape, weights, rng):
    """Random student view of a frame: ``(crop_box, contrast, brightness)``.

    The same crop and jitter are applied to both frames of the pair.
    """
    h, w = shape[:2]
    ch = max(1, int(round(weights.distill_crop * h)))
    cw = max(1, int(round(weights.distill_crop * w)))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    j = weights.distill_jitter
    contrast = 1.0 + rng.uniform(-j, j)
    brightness = rng.uniform(-j, j)
    return (top, left, ch, cw), contrast, brightness


def pair_breakdown(estimator, img_t, img_t1, weights, rng):
    """Score the final prediction of ``estimator`` on one unlabeled pair."""
    teacher = estimator.estimate(img_t, img_t1)[-1]
    box, contrast, brightness = distill_view(np.shape(img_t), weights, rng)
    student = estimator.estimate_view(img_t, img_t1, box, contrast, brightness)[-1]
    photo = photometric_loss(img_t, img_t1, teacher, None, weights.census_patch,
                             weights.census_soft_eps, weights.census_scale)
    smooth = smoothness_loss(teacher, img_t, weights.smooth_order, weights.edge_weight_scale)
    distill = distillation_loss(teacher, student, box)
    return total_metric(photo, smooth, distill, weights)


def score_estimator(estimator, pairs, weights, seed=0):
    """Average loss breakdown of ``estimator`` over unlabeled ``pairs``.

    The student crop and jitter of pair ``i`` depend only on ``(seed, i)``,
    so two estimators are always compared on identical views.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("score_estimator: no pairs")
    parts = []
    for i, (a, b) in enumerate(pairs):
        rng = np.random.default_rng([int(seed), i])
        parts.append(pair_breakdown(estimator, a, b, weights, rng))
    n = len(parts)
    photo = math.fsum(p.photo for p in parts) / n
    smooth = math.fsum(p.smooth for p in parts) / n
    distill = math.fsum(p.distill for p in parts) / n
    return total_metric(photo, smooth, distill, weights)
