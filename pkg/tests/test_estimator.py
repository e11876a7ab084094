import numpy as np
import pytest

from flowforge.estimator import (EstimatorFamily, EstimatorParams, VariationalEstimator,
                                 VariationalFamily, ZeroFlowEstimator, ZeroFlowFamily,
                                 coordinate_descent, dataset_aepe, fit_estimator, fit_params,
                                 gaussian_pyramid, labeled_samples)
from flowforge.losses import aepe, distillation_loss
from flowforge.render import RenderParams, render_dataset, render_pair, render_samples
from flowforge.render.params import EffectSpec, MotionSpec

TRANSLATING = RenderParams(canvas=(64, 80), effects=EffectSpec(), num_objects=0,
                           bg_motion=MotionSpec(translation_min=1, translation_max=6))


def _shifted_pair(dx=3):
    s = render_pair(RenderParams(canvas=(64, 96), effects=EffectSpec(), num_objects=0,
                                 bg_motion=MotionSpec(translation_min=dx, translation_max=dx,
                                                      direction_min=0, direction_max=0)), rng_seed=2)
    return s


def test_zero_flow_estimator():
    img = np.random.default_rng(0).uniform(size=(10, 12, 3))
    est = ZeroFlowEstimator()
    out = est.estimate(img, img)
    assert len(out) == 1 and not out[0].any() and out[0].shape == (10, 12, 2)
    gt = np.zeros((10, 12, 2))
    gt[..., 0] = 5.0
    assert aepe(est.final(img, img), gt) == 5.0
    student = est.estimate_view(img, img, (1, 2, 8, 8))[-1]
    assert distillation_loss(out[0], student, (1, 2, 8, 8)) == 0.0


def test_identical_frames_give_no_motion():
    s = _shifted_pair()
    flow = VariationalEstimator().final(s.frame_t, s.frame_t)
    assert np.linalg.norm(flow, axis=-1).mean() < 0.05


def test_translation_recovered():
    s = _shifted_pair(3)
    flow = VariationalEstimator().final(s.frame_t, s.frame_t1)
    assert aepe(flow, s.gt_flow) <= 0.5


def test_prediction_list_and_determinism():
    s = _shifted_pair()
    est = VariationalEstimator(EstimatorParams(pyramid_levels=3))
    a = est.estimate(s.frame_t, s.frame_t1)
    b = est.estimate(s.frame_t, s.frame_t1)
    assert len(a) == 3 and all(p.shape == (64, 96, 2) for p in a)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))


def test_too_small_for_pyramid():
    img = np.zeros((12, 40))
    with pytest.raises(ValueError):
        VariationalEstimator(EstimatorParams(pyramid_levels=4)).estimate(img, img)


def test_invalid_params():
    with pytest.raises(ValueError):
        EstimatorParams(pyramid_levels=0)
    with pytest.raises(ValueError):
        EstimatorParams(regularization=-1.0)


def test_gaussian_pyramid_sizes():
    pyr = gaussian_pyramid(np.zeros((33, 50)), 3)
    assert [p.shape for p in pyr] == [(33, 50), (17, 25), (9, 13)]


def test_noise_ladder_aepe_increasing():
    rng = np.random.default_rng(0)
    gt = rng.normal(0, 3, size=(40, 50, 2))
    noise = rng.normal(size=gt.shape)
    errs = [aepe(gt + s * noise, gt) for s in (0, 1, 2, 4)]
    assert errs[0] == 0.0 and all(a < b for a, b in zip(errs, errs[1:]))


def test_coarse_to_fine_refinement_is_monotone():
    ok = 0
    for seed in range(20):
        s = render_pair(TRANSLATING, rng_seed=seed)
        errs = [aepe(p, s.gt_flow) for p in VariationalEstimator().estimate(s.frame_t, s.frame_t1)]
        ok += all(b <= a for a, b in zip(errs, errs[1:]))
    assert ok >= 18


# -- fitting -------------------------------------------------------------------------


def test_fit_zero_family_reports_mean_gt_magnitude():
    samples = render_samples(TRANSLATING, 2, 0)
    fit = fit_estimator(ZeroFlowFamily(), samples, budget=5)
    mag = np.mean([np.linalg.norm(s.gt_flow, axis=-1).mean() for s in samples])
    assert fit.score == pytest.approx(mag, abs=1e-12)


class _Quadratic(EstimatorFamily):
    """Synthetic one-parameter family with a convex score profile."""

    grids = {"regularization": tuple(float(v) for v in np.round(np.geomspace(0.01, 10, 16), 6))}

    def initial(self):
        return EstimatorParams()

    def build(self, params):
        return params


def test_fit_convex_profile_matches_exhaustive_grid():
    fam = _Quadratic()
    target = np.log(0.7)

    def objective(p):
        return (np.log(p.regularization) - target) ** 2

    fit = fit_params(fam, objective, budget=100)
    grid = sorted(set(fam.grids["regularization"]) | {0.15})
    brute = min(grid, key=lambda r: (np.log(r) - target) ** 2)
    assert fit.params.regularization == brute
    assert fit.score == min((np.log(r) - target) ** 2 for r in grid)


def test_fit_budget_one_returns_init():
    samples = render_samples(TRANSLATING, 1, 0)
    init = EstimatorParams(regularization=2.0)
    fit = fit_estimator(VariationalFamily(free=("regularization",)), samples, budget=1, init=init)
    assert fit.params == init and fit.evaluations == 1


def test_fit_never_worse_than_init(tmp_path):
    manifest = render_dataset(TRANSLATING, 2, tmp_path)
    init = EstimatorParams(regularization=5.0, pyramid_levels=2)
    fam = VariationalFamily(free=("regularization", "pyramid_levels"), init=init)
    fit = fit_estimator(fam, manifest, budget=5)
    base = dataset_aepe(VariationalEstimator(init), labeled_samples(manifest))
    assert fit.score <= base
    assert fit.evaluations <= 5
    assert fit.history[0][1] == pytest.approx(base)


def test_coordinate_descent_cache_does_not_consume_budget():
    calls = []

    def f(v):
        calls.append(dict(v))
        return (v["a"] - 3) ** 2 + (v["b"] - 1) ** 2

    grids = {"a": tuple(range(8)), "b": tuple(range(4))}
    best, score, used, history = coordinate_descent(f, grids, {"a": 0, "b": 0}, budget=50)
    assert best == {"a": 3, "b": 1} and score == 0
    assert used == len(calls) == len(history)
    assert len({tuple(c.values()) for c in calls}) == len(calls)
    with pytest.raises(ValueError):
        coordinate_descent(f, grids, {"a": 0, "b": 0}, budget=0)


def test_unknown_free_parameter():
    with pytest.raises(ValueError):
        VariationalFamily(free=("learning_rate",))
    with pytest.raises(ValueError):
        fit_estimator(VariationalFamily(), [], budget=2)
