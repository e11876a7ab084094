"""Flow estimators and gradient-free fitting of their parameters.

Any object with ``estimate(img_t, img_t1) -> list of (H, W, 2) flows`` (coarse
to fine, last = final) can be plugged into the search. Two reference
estimators are provided: a zero-flow baseline and a coarse-to-fine
variational estimator whose few parameters are "trained" on rendered data by
coordinate descent.
"""

from dataclasses import asdict, dataclass, replace

import numba
import numpy as np
from scipy import ndimage

from .core import check_same_size, crop, resize, resize_flow, to_gray, warp_image
from .losses import aepe

INNER_ITERATIONS = 20


class FlowEstimator:
    """Base class for estimators.

    Subclasses implement :meth:`estimate`. :meth:`estimate_view` predicts on a
    cropped, photometrically jittered view of a pair; estimators that know
    more about the scene than the pixels (oracles) may override it.
    """

    def estimate(self, img_t, img_t1):
        raise NotImplementedError

    def final(self, img_t, img_t1):
        return self.estimate(img_t, img_t1)[-1]

    def estimate_view(self, img_t, img_t1, box, contrast=1.0, brightness=0.0):
        top, left, h, w = box

        def view(img):
            return np.clip((crop(img, top, left, h, w) - 0.5) * contrast + 0.5 + brightness, 0.0, 1.0)

        return self.estimate(view(img_t), view(img_t1))


class ZeroFlowEstimator(FlowEstimator):
    def estimate(self, img_t, img_t1):
        check_same_size(img_t, img_t1, names=("img_t", "img_t1"))
        return [np.zeros(np.shape(img_t)[:2] + (2,))]

    def __eq__(self, other):
        return isinstance(other, ZeroFlowEstimator)

    def __hash__(self):
        return hash(ZeroFlowEstimator)


def zero_flow_estimator():
    return ZeroFlowEstimator()


@dataclass(frozen=True)
class EstimatorParams:
    pyramid_levels: int = 4
    iterations_per_level: int = 10
    regularization: float = 0.15
    patch_radius: int = 2

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.iterations_per_level < 1:
            raise ValueError("iterations_per_level must be >= 1")
        if self.regularization < 0:
            raise ValueError("regularization must be nonnegative")
        if self.patch_radius < 0:
            raise ValueError("patch_radius must be nonnegative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def gaussian_pyramid(img, levels):
    """Finest first; each level is blurred then halved (sizes rounded up)."""
    pyr = [img]
    for _ in range(levels - 1):
        prev = ndimage.gaussian_filter(pyr[-1], sigma=1.0, mode="nearest")
        h, w = prev.shape
        pyr.append(resize(prev, (h + 1) // 2, (w + 1) // 2))
    return pyr


@numba.njit(cache=True)
def _jacobi(u0, v0, a11, a22, a12, b1, b2, lam, iters):
    """Jacobi sweeps for the flow increment (du, dv).

    Solves, per pixel, ``[[a11, a12], [a12, a22]] [du, dv] = lam * (mean4(w) - w0) - b``
    where ``w = w0 + d`` is the total flow and ``mean4`` the 4-neighbor mean
    with replicated borders.
    """
    h, w = u0.shape
    du = np.zeros((h, w))
    dv = np.zeros((h, w))
    nu = np.empty((h, w))
    nv = np.empty((h, w))
    for _ in range(iters):
        for y in range(h):
            ym, yp = max(y - 1, 0), min(y + 1, h - 1)
            for x in range(w):
                xm, xp = max(x - 1, 0), min(x + 1, w - 1)
                mu = 0.25 * (u0[ym, x] + du[ym, x] + u0[yp, x] + du[yp, x]
                             + u0[y, xm] + du[y, xm] + u0[y, xp] + du[y, xp])
                mv = 0.25 * (v0[ym, x] + dv[ym, x] + v0[yp, x] + dv[yp, x]
                             + v0[y, xm] + dv[y, xm] + v0[y, xp] + dv[y, xp])
                ru = lam * (mu - u0[y, x]) - b1[y, x]
                rv = lam * (mv - v0[y, x]) - b2[y, x]
                det = a11[y, x] * a22[y, x] - a12[y, x] * a12[y, x]
                nu[y, x] = (a22[y, x] * ru - a12[y, x] * rv) / det
                nv[y, x] = (a11[y, x] * rv - a12[y, x] * ru) / det
        du, nu = nu, du
        dv, nv = nv, dv
    return du, dv


def _refine(img0, img1, flow, params, iterations):
    """Warp-and-linearize refinement of ``flow`` at one pyramid level.

    Each warp linearizes brightness constancy around the current flow and
    solves for the increment with Jacobi sweeps of the 2x2 normal equations
    of a local (box-window) data term plus a quadratic smoothness term on the
    total flow.
    """
    size = 2 * params.patch_radius + 1
    for _ in range(iterations):
        warped, oof = warp_image(img1, flow)
        gx, gy = np.gradient(0.5 * (warped + img0), axis=1), np.gradient(0.5 * (warped + img0), axis=0)
        gt = np.where(oof, 0.0, warped - img0)
        gx = np.where(oof, 0.0, gx)
        gy = np.where(oof, 0.0, gy)

        def box(a):
            return ndimage.uniform_filter(a, size=size, mode="nearest") if size > 1 else a

        j11, j12, j22 = box(gx * gx), box(gx * gy), box(gy * gy)
        j13, j23 = box(gx * gt), box(gy * gt)
        # regularization relative to the mean local contrast keeps the
        # parameter meaningful across textures and pyramid levels
        lam = params.regularization * max(float(np.mean(j11 + j22)), 1e-12)
        u0, v0 = np.ascontiguousarray(flow[..., 0]), np.ascontiguousarray(flow[..., 1])
        du, dv = _jacobi(u0, v0, j11 + lam, j22 + lam, j12, j13, j23, lam, INNER_ITERATIONS)
        flow = np.stack([u0 + du, v0 + dv], axis=-1)
        flow[..., 0] = ndimage.median_filter(flow[..., 0], size=3, mode="nearest")
        flow[..., 1] = ndimage.median_filter(flow[..., 1], size=3, mode="nearest")
    return flow


class VariationalEstimator(FlowEstimator):
    """Coarse-to-fine variational flow.

    Emits one prediction per pyramid level, coarse to fine, each upsampled to
    the input resolution.
    """

    def __init__(self, params=None):
        self.params = params or EstimatorParams()

    def estimate(self, img_t, img_t1):
        check_same_size(img_t, img_t1, names=("img_t", "img_t1"))
        p = self.params
        a, b = to_gray(img_t), to_gray(img_t1)
        h, w = a.shape
        if min(h, w) < 2 ** p.pyramid_levels:
            raise ValueError(f"images of size {(h, w)} too small for {p.pyramid_levels} pyramid levels")
        pa, pb = gaussian_pyramid(a, p.pyramid_levels), gaussian_pyramid(b, p.pyramid_levels)
        flow = np.zeros(pa[-1].shape + (2,))
        out = []
        for level in range(p.pyramid_levels - 1, -1, -1):
            lh, lw = pa[level].shape
            if flow.shape[:2] != (lh, lw):
                flow = resize_flow(flow, lh, lw)
            flow = _refine(pa[level], pb[level], flow, p, p.iterations_per_level)
            out.append(flow if level == 0 else resize_flow(flow, h, w))
        return out

    def __eq__(self, other):
        return isinstance(other, VariationalEstimator) and self.params == other.params

    def __hash__(self):
        return hash(self.params)

    def __repr__(self):
        return f"VariationalEstimator({self.params})"


def variational_estimator(params=None):
    return VariationalEstimator(params)


# -- families and coordinate-descent fitting ----------------------------------


class EstimatorFamily:
    """A parametric estimator family with discrete per-parameter grids.

    Attributes:
        grids: Mapping of free parameter name to its sorted candidate values.
    """

    grids = {}

    def initial(self):
        raise NotImplementedError

    def build(self, params):
        raise NotImplementedError

    def with_values(self, params, values):
        return replace(params, **values) if values else params


class ZeroFlowFamily(EstimatorFamily):
    grids = {}

    def initial(self):
        return None

    def build(self, params):
        return ZeroFlowEstimator()

    def with_values(self, params, values):
        return params


VARIATIONAL_GRIDS = {
    "regularization": tuple(float(v) for v in np.round(np.geomspace(0.01, 10.0, 16), 6)),
    "patch_radius": (0, 1, 2, 3, 4, 6),
    "iterations_per_level": (1, 2, 3, 5, 7, 10, 14, 20),
    "pyramid_levels": (1, 2, 3, 4, 5),
}


class VariationalFamily(EstimatorFamily):
    """Variational estimators; ``free`` selects which parameters are fitted."""

    def __init__(self, free=("regularization", "patch_radius"), init=None, grids=None):
        all_grids = dict(VARIATIONAL_GRIDS, **(grids or {}))
        unknown = set(free) - set(all_grids)
        if unknown:
            raise ValueError(f"unknown estimator parameter(s): {sorted(unknown)}")
        self.init = init or EstimatorParams()
        self.grids = {name: _with_value(all_grids[name], getattr(self.init, name)) for name in free}

    def initial(self):
        return self.init

    def build(self, params):
        return VariationalEstimator(params)


def _with_value(grid, value):
    """The grid with ``value`` inserted, so the initial point lies on it."""
    return tuple(sorted(set(grid) | {value}))


@dataclass
class FitResult:
    params: object
    score: float
    evaluations: int
    history: list


def coordinate_descent(objective, grids, start, budget):
    """Greedy coordinate descent over index grids.

    Starting from ``start`` (a dict name -> value on each grid), each sweep
    tries both neighbors of every coordinate in turn and keeps walking in a
    direction while it strictly improves. Repeated points are answered from a
    cache and do not consume budget.

    Returns:
        ``(best_values, best_score, evaluations, history)``; ``history`` lists
        every fresh evaluation as ``(values, score)``.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    names = list(grids)
    idx = {n: grids[n].index(start[n]) for n in names}
    cache = {}
    history = []

    def values(ix):
        return {n: grids[n][ix[n]] for n in names}

    def evaluate(ix):
        key = tuple(ix[n] for n in names)
        if key not in cache:
            if len(cache) >= budget:
                return None
            cache[key] = float(objective(values(ix)))
            history.append((values(ix), cache[key]))
        return cache[key]

    best = evaluate(idx)
    improved = True
    while improved and len(cache) < budget:
        improved = False
        for n in names:
            for step in (-1, 1):
                while 0 <= idx[n] + step < len(grids[n]):
                    trial = dict(idx, **{n: idx[n] + step})
                    score = evaluate(trial)
                    if score is None or not score < best:
                        break
                    idx, best, improved = trial, score, True
    return values(idx), best, len(cache), history


def dataset_aepe(estimator, samples):
    """Mean over samples of the final-prediction AEPE (all pixels)."""
    errs = [aepe(estimator.final(img_t, img_t1), gt) for img_t, img_t1, gt in samples]
    return float(np.mean(errs))


def labeled_samples(dataset):
    """Normalize rendered samples or a manifest to (img_t, img_t1, gt) tuples."""
    from .flowio import DatasetManifest

    if isinstance(dataset, DatasetManifest):
        if not dataset.has_flow:
            raise ValueError("dataset has no ground-truth flow")
        return [dataset.load_pair(i) + (dataset.load_flow(i),) for i in range(len(dataset))]
    out = []
    for s in dataset:
        out.append((s.frame_t, s.frame_t1, s.gt_flow) if hasattr(s, "frame_t") else tuple(s))
    return out


def fit_params(family, objective, init=None, budget=8):
    """Coordinate descent of ``objective(estimator)`` over ``family`` grids."""
    init = family.initial() if init is None else init
    grids = dict(family.grids)
    if not grids:
        score = float(objective(family.build(init)))
        return FitResult(init, score, 1, [({}, score)])
    grids = {n: _with_value(g, getattr(init, n)) for n, g in grids.items()}
    start = {n: getattr(init, n) for n in grids}
    best, score, used, history = coordinate_descent(
        lambda v: objective(family.build(family.with_values(init, v))), grids, start, budget)
    return FitResult(family.with_values(init, best), score, used, history)


def fit_estimator(family, dataset, budget=8, init=None):
    """Fit estimator parameters by minimizing final-prediction AEPE on a
    labeled (rendered) dataset.

    Deterministic: the search order and grids are fixed, so no seed enters.
    Never returns parameters worse than ``init`` on the same data.
    """
    samples = labeled_samples(dataset)
    if not samples:
        raise ValueError("fit_estimator: empty dataset")
    return fit_params(family, lambda est: dataset_aepe(est, samples), init, budget)
