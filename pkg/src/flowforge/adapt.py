"""Target-domain adaptation: self-supervised and multi-frame fine-tuning.

Multi-frame fine-tuning distills a frozen teacher into pseudo labels: the
teacher's forward flow is kept where forward-backward consistent, occluded
pixels are first filled from the negated flow to the previous frame
(constant-velocity prior) and the rest by harmonic (diffusion) inpainting.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import spsolve

from .core import check_flow, check_same_size, warp_flow
from .estimator import fit_params
from .losses import SequenceLossConfig, score_estimator, sequence_loss

FB_ALPHA1 = 0.01
FB_ALPHA2 = 0.5


@dataclass
class PseudoLabel:
    """Teacher flow with occlusions repaired.

    Attributes:
        flow: (H, W, 2) label.
        confidence: Pixels where the raw forward estimate was kept.
        inpainted: Pixels filled by diffusion inpainting.
        prior_filled: Pixels filled from the negated flow to frame t-1.
    """

    flow: np.ndarray
    confidence: np.ndarray
    inpainted: np.ndarray
    prior_filled: np.ndarray


def occlusion_from_fb(forward, backward, alpha1=FB_ALPHA1, alpha2=FB_ALPHA2):
    """Forward-backward consistency check.

    ``backward`` is the flow from the second frame to the first, sampled at
    ``p + forward(p)``. A pixel is occluded when
    ``|f + b|^2 > alpha1 * (|f|^2 + |b|^2) + alpha2``.
    """
    forward = check_flow(forward, "forward")
    check_same_size(forward, backward, names=("forward", "backward"))
    b = warp_flow(backward, forward)
    lhs = np.sum((forward + b) ** 2, axis=-1)
    rhs = alpha1 * (np.sum(forward ** 2, axis=-1) + np.sum(b ** 2, axis=-1)) + alpha2
    return lhs > rhs


def harmonic_inpaint(flow, unknown):
    """Fill ``unknown`` pixels with the discrete harmonic interpolant of the
    known pixels (4-neighborhood, Neumann image borders).

    Known pixels are returned unchanged. Components of ``unknown`` without
    any known neighbor are set to zero. The linear system is solved directly,
    so applying the function twice with the same mask changes nothing.
    """
    flow = np.array(check_flow(flow), dtype=np.float64)
    unknown = np.asarray(unknown, dtype=bool)
    if not unknown.any():
        return flow
    known = ~unknown
    comp, n_comp = ndimage.label(unknown)
    touching = np.unique(comp[ndimage.binary_dilation(known) & unknown])
    orphan = unknown & ~np.isin(comp, touching)
    flow[orphan] = 0.0
    unknown = unknown & ~orphan
    if not unknown.any():
        return flow

    h, w = unknown.shape
    idx = -np.ones((h, w), dtype=np.int64)
    ys, xs = np.nonzero(unknown)
    n = len(ys)
    idx[ys, xs] = np.arange(n)
    rows, cols, vals = [], [], []
    rhs = np.zeros((n, 2))
    deg = np.zeros(n)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny, nx = ys + dy, xs + dx
        inside = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        deg += inside
        src = np.nonzero(inside)[0]
        nyi, nxi = ny[inside], nx[inside]
        nb = idx[nyi, nxi]
        is_unknown = nb >= 0
        rows.append(src[is_unknown])
        cols.append(nb[is_unknown])
        rhs_src = src[~is_unknown]
        np.add.at(rhs, rhs_src, flow[nyi[~is_unknown], nxi[~is_unknown]])
    rows = np.concatenate(rows + [np.arange(n)])
    cols = np.concatenate(cols + [np.arange(n)])
    vals = np.concatenate([-np.ones(len(rows) - n), deg])
    a = sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))
    sol = spsolve(a, rhs)
    flow[ys, xs] = sol.reshape(n, 2)
    return flow


def generate_pseudo_labels(frames, estimator, use_prior=True, inpaint=harmonic_inpaint):
    """Pseudo label for the forward flow of the middle frame of a triplet.

    Args:
        frames: ``(I_prev, I_t, I_next)``.
        estimator: Frozen teacher.
        use_prior: Fill occluded pixels with the negated flow t -> t-1 where
            that flow is itself forward-backward consistent.
        inpaint: ``f(flow, unknown_mask) -> flow`` used for the remaining
            occluded pixels.
    """
    prev, cur, nxt = frames
    check_same_size(prev, cur, nxt, names=("I_prev", "I_t", "I_next"))
    fwd = estimator.final(cur, nxt)
    occ = occlusion_from_fb(fwd, estimator.final(nxt, cur))
    label = np.array(fwd, dtype=np.float64)
    prior = np.zeros_like(occ)
    if use_prior and occ.any():
        to_prev = estimator.final(cur, prev)
        prior_ok = ~occlusion_from_fb(to_prev, estimator.final(prev, cur))
        prior = occ & prior_ok
        label[prior] = -to_prev[prior]
    rest = occ & ~prior
    if rest.any():
        label = inpaint(label, rest)
    return PseudoLabel(label, ~occ, rest, prior)


def self_supervised_finetune(family, init, target, weights, budget=8, seed=0):
    """Refine estimator params by minimizing the self-supervised total loss on
    unlabeled ``target`` pairs, starting from ``init``."""
    target = list(target)
    if not target:
        raise ValueError("self_supervised_finetune: empty target")
    return fit_params(family, lambda est: score_estimator(est, target, weights, seed).total, init, budget)


def mean_sequence_loss(estimator, triplets, labels, gamma):
    losses = []
    for (_, cur, nxt), label in zip(triplets, labels):
        preds = estimator.estimate(cur, nxt)
        losses.append(sequence_loss(preds, label.flow, SequenceLossConfig(gamma, len(preds))))
    return float(np.mean(losses))


def multiframe_finetune(family, init, triplets, cfg=None, budget=8):
    """Refine estimator params against pseudo labels from a frozen teacher.

    The teacher is the ``init`` estimator. The sequence loss covers every
    prediction of the student; ``cfg.N`` follows the student's prediction
    count, only ``cfg.gamma`` is taken from ``cfg``.

    Returns:
        ``(FitResult, labels)``.
    """
    triplets = [tuple(t) for t in triplets]
    if not triplets:
        raise ValueError("multiframe_finetune: empty dataset")
    gamma = (cfg or SequenceLossConfig()).gamma
    teacher = family.build(family.initial() if init is None else init)
    labels = [generate_pseudo_labels(t, teacher) for t in triplets]
    fit = fit_params(family, lambda est: mean_sequence_loss(est, triplets, labels, gamma), init, budget)
    return fit, labels
