import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from matplotlib.path import Path as MplPath

from flowforge.core import pixel_grid
from flowforge.evalkit import (NoisyOracle, correlate, correlation_report, evaluate_ladder, iou,
                               oracle_ladder, pck_t, propagate_keypoints, propagate_mask, rank_of,
                               write_scatter_csv)
from flowforge.losses import LossWeights
from flowforge.render import RenderParams, render_samples
from flowforge.render.compose import render_sequence
from flowforge.render.params import EffectSpec, MotionSpec, PolygonSpec


def _const(shape, u, v):
    f = np.zeros(shape + (2,))
    f[..., 0], f[..., 1] = u, v
    return f


def _rigid(u, v, seed=0, frames=5):
    p = RenderParams(num_objects=1, canvas=(96, 128), effects=EffectSpec(),
                     polygon=PolygonSpec(diag_min=30, diag_max=50, center_min=0.4, center_max=0.6),
                     fg_motion=MotionSpec(translation_min=math.hypot(u, v), translation_max=math.hypot(u, v),
                                          direction_min=math.degrees(math.atan2(v, u)),
                                          direction_max=math.degrees(math.atan2(v, u))),
                     bg_motion=MotionSpec(translation_min=1.5, translation_max=1.5))
    return render_sequence(p, frames, rng_seed=seed)


# -- keypoints --------------------------------------------------------------------


def test_keypoints_zero_and_constant_flow():
    kp = np.array([[3.0, 4.0], [10.5, 2.25]])
    tracks, flags = propagate_keypoints(kp, [np.zeros((16, 20, 2))] * 3)
    assert tracks.shape == (4, 2, 2) and (tracks == kp).all() and not flags.any()
    tracks, flags = propagate_keypoints(kp, [_const((16, 20), 1, 0)] * 5)
    np.testing.assert_allclose(tracks[-1], kp + [5, 0])


def test_keypoints_leaving_frame_are_clamped_and_flagged():
    tracks, flags = propagate_keypoints([[17.0, 5.0]], [_const((10, 20), 3, 0), _const((10, 20), -9, 0)])
    assert tracks[1, 0, 0] == 19.0 and flags[1, 0] and flags[2, 0]


def test_keypoints_follow_rendered_trajectory():
    seq = _rigid(2.0, -1.0, seed=3)
    ys, xs = np.nonzero(seq.labels[0] == 1)
    kp = np.stack([xs[::23], ys[::23]], axis=1).astype(float)
    tracks, _ = propagate_keypoints(kp, seq.flows)
    for k in range(len(seq.frames)):
        np.testing.assert_allclose(tracks[k], kp + k * np.array([2.0, -1.0]), atol=0.5)


def test_pck_t_brute_count():
    tracks = np.zeros((2, 4, 2))
    ann = tracks.copy()
    assert pck_t(tracks, ann, [100, 100]) == 100.0
    far = ann + 50
    assert pck_t(tracks, far, [100, 100]) == 0.0
    # threshold 0.2 * 10 = 2 px; half the points sit at distance 1, half at 3
    half = ann.copy()
    half[:, :2, 0] = 1.0
    half[:, 2:, 0] = 3.0
    assert pck_t(tracks, half, [100, 100]) == 50.0


def test_pck_t_ignores_missing_annotations():
    tracks = np.zeros((1, 3, 2))
    ann = np.array([[[0.0, 0.0], [np.nan, np.nan], [9.0, 9.0]]])
    assert pck_t(tracks, ann, [100]) == 50.0
    with pytest.raises(ValueError):
        pck_t(tracks, np.full_like(ann, np.nan), [100])
    with pytest.raises(ValueError):
        pck_t(tracks, ann, [100, 100])


# -- masks ------------------------------------------------------------------------


def test_iou_cases():
    a = np.zeros((6, 6), bool)
    b = a.copy()
    a[:3], b[3:] = True, True
    assert iou(a, a) == 1.0 and iou(a, b) == 0.0 and iou(b, a) == 0.0
    assert iou(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0
    c = a.copy()
    c[:, :3] = True
    assert iou(a, c) == iou(c, a) == 18 / 27


def test_iou_monotone_under_erosion():
    from scipy.ndimage import binary_erosion

    m = np.zeros((30, 30), bool)
    m[5:25, 4:26] = True
    prev = 1.0
    eroded = m
    for _ in range(4):
        eroded = binary_erosion(eroded)
        cur = iou(m, eroded)
        assert cur < prev
        prev = cur


def test_propagate_mask_zero_flow_and_methods():
    m = np.zeros((12, 12), bool)
    m[3:7, 2:9] = True
    for method in ("splat", "backward"):
        out = propagate_mask(m, [np.zeros((12, 12, 2))] * 2, method=method)
        assert len(out) == 3 and all((o == m).all() for o in out)
    with pytest.raises(ValueError):
        propagate_mask(m, [], method="nearest")


def test_propagate_mask_rigid_translation_against_rasterized_polygon():
    seq = _rigid(3.0, 2.0, seed=1)
    poly = seq.polygons[1]
    xs, ys = pixel_grid(96, 128)
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    masks = propagate_mask(seq.labels[0] == 1, seq.flows)
    for k, m in enumerate(masks):
        ref = MplPath(poly + k * np.array([3.0, 2.0])).contains_points(pts).reshape(96, 128)
        assert iou(m, ref) >= 0.99


def test_propagate_mask_subpixel_motion_is_quantization_limited():
    # binary masks cannot be moved exactly by a fractional shift; a single step
    # stays within a boundary-pixel budget
    seq = _rigid(2.5, 0.7, seed=2, frames=2)
    m = propagate_mask(seq.labels[0] == 1, seq.flows)[1]
    assert iou(m, seq.labels[1] == 1) >= 0.95


# -- correlation ------------------------------------------------------------------


def test_correlate_cases():
    c = correlate([1, 2, 3], [2, 4, 6])
    assert c.n == 3 and c.pearson == pytest.approx(1.0) and c.spearman == pytest.approx(1.0)
    c = correlate([1, 2, 3, 4], [10, 5, 1, 0])
    assert c.spearman == pytest.approx(-1.0)
    c = correlate([1, 1, 1], [1, 2, 3])
    assert c.pearson is None and c.spearman is None
    with pytest.raises(ValueError):
        correlate([1, 2], [1, 2])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=4, max_size=12, unique=True),
       st.floats(0.1, 10), st.floats(-5, 5))
def test_spearman_invariant_under_monotone_maps(xs, a, b):
    x = np.array(xs, dtype=float)
    y = x ** 3 + 0.5 * x
    base = correlate(x, y)
    assert base.spearman == pytest.approx(1.0)
    mapped = correlate(a * x + b, np.sign(y) * np.sqrt(np.abs(y)))
    assert mapped.spearman == pytest.approx(base.spearman)
    assert correlate(a * x + b, a * y + b).pearson == pytest.approx(base.pearson, abs=1e-9)


def test_correlation_report_terms():
    rows = [dict(aepe=e, photo=e, smooth=-e, distill=1.0, total=2 * e) for e in (0.1, 0.5, 0.9, 2.0)]
    rep = correlation_report(rows)
    assert rep["photo"].spearman == pytest.approx(1.0) and rep["smooth"].spearman == pytest.approx(-1.0)
    assert rep["distill"].spearman is None
    with pytest.raises(ValueError):
        correlation_report(rows[:2])


def test_write_scatter_csv(tmp_path):
    rows = [dict(name="a", aepe=1.0, photo=0.5, smooth=0.1, distill=0.0, total=0.6)]
    write_scatter_csv(tmp_path / "s.csv", rows)
    with open(tmp_path / "s.csv") as f:
        back = list(csv.reader(f))
    assert back[0] == ["name", "aepe", "photo", "smooth", "distill", "total"]
    assert back[1][0] == "a" and float(back[1][5]) == 0.6


# -- the ladder -------------------------------------------------------------------


@pytest.fixture(scope="module")
def labeled():
    p = RenderParams(canvas=(64, 80), num_objects=1, effects=EffectSpec(),
                     polygon=PolygonSpec(diag_min=15, diag_max=40),
                     bg_motion=MotionSpec(translation_min=2, translation_max=4))
    return [(s.frame_t, s.frame_t1, s.gt_flow) for s in render_samples(p, 2, 70)]


def test_noisy_oracle_zero_sigma_is_ground_truth(labeled):
    a, b, g = labeled[0]
    est = NoisyOracle(labeled, 0.0)
    assert est.final(a, b).tobytes() == g.tobytes()
    np.testing.assert_array_equal(est.estimate_view(a, b, (2, 3, 20, 30))[-1], g[2:22, 3:33])
    with pytest.raises(ValueError):
        est.final(np.zeros_like(a), b)


def test_noisy_oracle_noise_level_and_determinism(labeled):
    a, b, g = labeled[1]
    est = NoisyOracle(labeled, 0.8, seed=3)
    n = est.final(a, b) - g
    assert n.reshape(-1, 2).std(axis=0) == pytest.approx([0.8, 0.8])
    assert est.final(a, b).tobytes() == NoisyOracle(labeled, 0.8, seed=3).final(a, b).tobytes()


def test_small_oracle_ladder_is_ranked_by_total(labeled):
    rows = evaluate_ladder(oracle_ladder(labeled, (0.0, 0.5, 1.0, 2.0, 4.0)), labeled, LossWeights())
    assert [r["name"] for r in rows][-1] == "zero_flow"
    assert all(a["aepe"] < b["aepe"] for a, b in zip(rows[:4], rows[1:5]))
    assert correlation_report(rows)["total"].spearman >= 0.9
    assert rank_of(rows, "oracle_sigma_0", "aepe") == 1
    assert rank_of(rows, "zero_flow", "distill") == 1


def test_metrics_are_scale_free_under_upsampling():
    # doubling resolution doubles displacements and areas scale by 4
    seq = _rigid(2.0, 1.0, seed=4, frames=3)
    ys, xs = np.nonzero(seq.labels[0] == 1)
    kp = np.stack([xs[::17], ys[::17]], axis=1).astype(float)
    area = (seq.labels[0] == 1).sum()
    tracks, _ = propagate_keypoints(kp, seq.flows)
    up = [2 * np.kron(f, np.ones((2, 2, 1))) for f in seq.flows]
    tracks2, _ = propagate_keypoints(2 * kp, up)
    ann = np.stack([kp + k * np.array([2.0, 1.0]) for k in range(3)])
    assert pck_t(tracks, ann, [area] * 3) == pck_t(tracks2, 2 * ann, [4 * area] * 3) == 100.0
    m = seq.labels[0] == 1
    m2 = np.kron(m, np.ones((2, 2), bool))
    i1 = iou(propagate_mask(m, seq.flows)[-1], seq.labels[-1] == 1)
    i2 = iou(propagate_mask(m2, up)[-1], np.kron(seq.labels[-1] == 1, np.ones((2, 2), bool)))
    assert i1 == i2 == 1.0
