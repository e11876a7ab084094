"""Population search over rendering hyperparameters.

A candidate parameter set is scored by rendering a small labeled dataset
from it, fitting an estimator on that dataset and evaluating the fitted
estimator's self-supervised loss on the unlabeled target pairs. The search is
a truncated-Gaussian cross-entropy method with elitism: each iteration draws
a population in scaled (linear or log) space, evaluates it, and refits the
per-dimension mean and standard deviation to the elite fraction.
"""

import math
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from pathlib import Path

import numpy as np
from scipy.stats import truncnorm

from .estimator import EstimatorParams, VariationalFamily, fit_estimator
from .flowio import SearchSpace, read_json, save_manifest, search_space_from_list, write_json_atomic
from .losses import LossBreakdown, LossWeights, score_estimator
from .parallel import parallel_map
from .render.dataset import render_dataset, render_samples
from .render.params import RenderParams, get_value, with_values

STD_FLOOR = 0.01
CHECKPOINT_NAME = "run_state.json"


@dataclass
class Candidate:
    """One evaluated parameter set; ``score`` equals ``breakdown.total``."""

    values: dict
    params: RenderParams
    score: float
    breakdown: LossBreakdown = None
    estimator_params: dict = None
    seed: int = 0
    iteration: int = 0
    slot: int = 0
    elite: bool = False
    error: str = None

    @property
    def valid(self):
        return math.isfinite(self.score)

    def to_dict(self):
        return {
            "values": self.values,
            "params": self.params.to_dict(),
            "score": self.score if self.valid else None,
            "breakdown": None if self.breakdown is None else self.breakdown.to_dict(),
            "estimator_params": self.estimator_params,
            "seed": self.seed,
            "iteration": self.iteration,
            "slot": self.slot,
            "elite": self.elite,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            values=d["values"],
            params=RenderParams.from_dict(d["params"]),
            score=math.inf if d["score"] is None else d["score"],
            breakdown=None if d["breakdown"] is None else LossBreakdown(**d["breakdown"]),
            estimator_params=d["estimator_params"],
            seed=d["seed"],
            iteration=d["iteration"],
            slot=d["slot"],
            elite=d["elite"],
            error=d["error"],
        )


@dataclass(frozen=True)
class EvalSettings:
    """How one candidate is evaluated.

    Attributes:
        samples: Rendered training samples per candidate.
        fit_budget: Estimator fitting budget (objective evaluations).
        metric_seed: Seed of the distillation crops and jitter on the target.
        common_random_numbers: Render every candidate with the same seeds so
            that the score is a deterministic function of the parameters.
        free: Estimator parameters fitted on the rendered data.
        canvas: Optional override of the rendering canvas.
        grids: Optional per-parameter fitting grids (defaults otherwise).
    """

    samples: int = 4
    fit_budget: int = 6
    metric_seed: int = 0
    common_random_numbers: bool = True
    free: tuple = ("regularization", "pyramid_levels")
    canvas: tuple = None
    grids: dict = None

    def to_dict(self):
        d = asdict(self)
        d["free"] = list(self.free)
        d["canvas"] = None if self.canvas is None else list(self.canvas)
        d["grids"] = None if self.grids is None else {k: list(v) for k, v in self.grids.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["free"] = tuple(d["free"])
        d["canvas"] = None if d.get("canvas") is None else tuple(d["canvas"])
        if d.get("grids") is not None:
            d["grids"] = {k: tuple(v) for k, v in d["grids"].items()}
        return cls(**d)


@dataclass
class SearchState:
    space: SearchSpace
    base: RenderParams
    weights: LossWeights
    settings: EvalSettings
    population_size: int
    iterations: int
    elite_fraction: float
    seed: int
    iteration: int = 0
    mean: list = None
    std: list = None
    population: list = field(default_factory=list)
    history: list = field(default_factory=list)
    best_per_iteration: list = field(default_factory=list)

    @property
    def done(self):
        return self.iteration >= self.iterations

    def best(self):
        valid = [c for c in self.history if c.valid]
        return min(valid, key=_rank_key) if valid else None

    def to_dict(self):
        return {
            "space": self.space.to_list(),
            "base": self.base.to_dict(),
            "weights": self.weights.to_dict(),
            "settings": self.settings.to_dict(),
            "population_size": self.population_size,
            "iterations": self.iterations,
            "elite_fraction": self.elite_fraction,
            "seed": self.seed,
            "iteration": self.iteration,
            "mean": self.mean,
            "std": self.std,
            "population": [c.to_dict() for c in self.population],
            "history": [c.to_dict() for c in self.history],
            "best_per_iteration": self.best_per_iteration,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            space=search_space_from_list(d["space"]),
            base=RenderParams.from_dict(d["base"]),
            weights=LossWeights.from_dict(d["weights"]),
            settings=EvalSettings.from_dict(d["settings"]),
            population_size=d["population_size"],
            iterations=d["iterations"],
            elite_fraction=d["elite_fraction"],
            seed=d["seed"],
            iteration=d["iteration"],
            mean=d["mean"],
            std=d["std"],
            population=[Candidate.from_dict(c) for c in d["population"]],
            history=[Candidate.from_dict(c) for c in d["history"]],
            best_per_iteration=d["best_per_iteration"],
        )


def _rank_key(c):
    return (c.score, c.iteration, c.slot)


def candidate_seed(run_seed, iteration, slot):
    return int(np.random.SeedSequence([int(run_seed), int(iteration), int(slot)]).generate_state(1)[0])


def render_seed(run_seed):
    """Seed shared by all candidates when common random numbers are on."""
    return int(np.random.SeedSequence([int(run_seed), 0x5EED]).generate_state(1)[0])


def init_state(space, base, weights, settings=None, population_size=16, iterations=8,
               elite_fraction=0.25, seed=0):
    if population_size < 1:
        raise ValueError("population_size must be >= 1")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if not 0 < elite_fraction <= 1:
        raise ValueError("elite_fraction must lie in (0, 1]")
    base.validate()
    for d in space.dims:
        get_value(base, d.name)  # raises on unknown names
    free = space.free
    lo = np.array([d.scaled_bounds[0] for d in free])
    hi = np.array([d.scaled_bounds[1] for d in free])
    return SearchState(space, base, weights, settings or EvalSettings(), population_size, iterations,
                       elite_fraction, int(seed), 0, ((lo + hi) / 2).tolist(), ((hi - lo) / 2).tolist())


def _floor(space):
    return np.array([STD_FLOOR * (d.scaled_bounds[1] - d.scaled_bounds[0]) for d in space.free])


def sample_candidates(state, n, rng=None):
    """Draw ``n`` parameter sets from the current sampling distribution.

    Returns:
        List of ``(values, params)`` where ``values`` maps every free
        dimension name to its sampled value.
    """
    rng = rng if rng is not None else np.random.default_rng([state.seed, state.iteration, 0xC0FFEE])
    free = state.space.free
    cols = []
    for d, mu, sd in zip(free, state.mean, state.std):
        lo, hi = d.scaled_bounds
        if sd <= 0 or hi <= lo:
            z = np.full(n, min(max(mu, lo), hi))
        else:
            a, b = (lo - mu) / sd, (hi - mu) / sd
            z = np.clip(truncnorm.rvs(a, b, loc=mu, scale=sd, size=n, random_state=rng), lo, hi)
        cols.append(d.from_scaled(z))
    out = []
    for i in range(n):
        values = {d.name: float(col[i]) for d, col in zip(free, cols)}
        params = with_values(state.base, values)
        out.append(({d.name: get_value(params, d.name) for d in free}, params))
    return out


def evaluate_candidate(params, target, weights, settings=None, seed=0, family=None):
    """Render from ``params``, fit an estimator on it, score it on ``target``.

    Any failure yields an invalid candidate with score ``+inf``.
    """
    settings = settings or EvalSettings()
    family = family or VariationalFamily(free=settings.free, grids=settings.grids)
    try:
        if settings.canvas is not None:
            params = replace(params, canvas=tuple(settings.canvas))
        params.validate()
        samples = render_samples(params, settings.samples, seed)
        fit = fit_estimator(family, samples, settings.fit_budget)
        estimator = family.build(fit.params)
        breakdown = score_estimator(estimator, target, weights, settings.metric_seed)
    except (ValueError, ArithmeticError) as e:
        return Candidate({}, params, math.inf, seed=int(seed), error=str(e))
    est = fit.params.to_dict() if isinstance(fit.params, EstimatorParams) else None
    return Candidate({}, params, breakdown.total, breakdown, est, int(seed))


def _evaluate_job(job, target, weights, settings):
    values, params, seed = job
    cand = evaluate_candidate(params, target, weights, settings, seed)
    cand.values = values
    return cand


def update_distribution(state, population, elite_fraction=None):
    """Refit mean/std to the elite candidates (scaled space); floor the std."""
    elite_fraction = state.elite_fraction if elite_fraction is None else elite_fraction
    valid = sorted((c for c in population if c.valid), key=_rank_key)
    if not valid:
        raise ValueError("update_distribution: all candidates are invalid")
    n_elite = max(1, math.ceil(elite_fraction * len(valid) - 1e-9))
    elite = valid[:n_elite]
    free = state.space.free
    z = np.array([[float(d.to_scaled(c.values[d.name])) for d in free] for c in elite]).reshape(len(elite), len(free))
    mean = z.mean(axis=0)
    std = np.maximum(z.std(axis=0), _floor(state.space))
    state.mean = mean.tolist()
    state.std = std.tolist()
    state.population = list(population)
    state.iteration += 1
    return state


def step(state, target, jobs=1):
    """Run one iteration: sample, evaluate in parallel, re-inject the best,
    update the distribution."""
    n = state.population_size
    drawn = sample_candidates(state, n)
    best = state.best()
    slots = range(n - 1) if (best is not None and n > 1) else range(n)
    if state.settings.common_random_numbers:
        seeds = [render_seed(state.seed)] * n
    else:
        seeds = [candidate_seed(state.seed, state.iteration, i) for i in range(n)]
    jobs_list = [(drawn[i][0], drawn[i][1], seeds[i]) for i in slots]
    evaluated = parallel_map(partial(_evaluate_job, target=target, weights=state.weights,
                                     settings=state.settings), jobs_list, jobs)
    population = []
    for i, cand in zip(slots, evaluated):
        cand.iteration, cand.slot = state.iteration, i
        population.append(cand)
    if len(population) < n:
        # elitism: carry the best-so-far candidate into the last slot
        population.append(Candidate(dict(best.values), best.params, best.score, best.breakdown,
                                    best.estimator_params, best.seed, state.iteration, n - 1, True))
    state.history.extend(population)
    valid = [c for c in state.history if c.valid]
    state.best_per_iteration.append(min(c.score for c in valid) if valid else None)
    return update_distribution(state, population)


def save_state(state, path):
    write_json_atomic(path, state.to_dict())


def load_state(path):
    return SearchState.from_dict(read_json(path))


def run_search(space, target, weights, population_size=16, iterations=8, seed=0, base=None,
               settings=None, elite_fraction=0.25, checkpoint=None, jobs=1, on_iteration=None):
    """Cross-entropy search over ``space``, checkpointing after each iteration.

    If ``checkpoint`` names an existing run-state file, the run resumes from
    it; the result is identical to an uninterrupted run.

    Args:
        space: :class:`SearchSpace` over dotted render-parameter names.
        target: Unlabeled target pairs, a list of ``(img_t, img_t1)``.
        weights: :class:`LossWeights` of the search metric.
        on_iteration: Optional callback ``f(state)`` after each iteration;
            returning ``False`` stops the run early (used to test resuming).
    """
    target = list(target)
    if not target:
        raise ValueError("run_search: empty target")
    if checkpoint is not None and Path(checkpoint).is_file():
        state = load_state(checkpoint)
    else:
        state = init_state(space, base or RenderParams(), weights, settings, population_size,
                           iterations, elite_fraction, seed)
    while not state.done:
        step(state, target, jobs)
        if checkpoint is not None:
            save_state(state, checkpoint)
        if on_iteration is not None and on_iteration(state) is False:
            break
    return state


# -- top-k selection and mixing -----------------------------------------------


def select_top_k(state, k=3):
    """The ``k`` best distinct parameter sets in the history, best first.

    Re-injected elite copies share their parameters with the original, so
    duplicates are skipped.
    """
    seen, top = set(), []
    for c in sorted((c for c in state.history if c.valid), key=_rank_key):
        key = repr(sorted(c.params.to_dict().items()))
        if key in seen:
            continue
        seen.add(key)
        top.append(c)
        if len(top) == k:
            return top
    raise ValueError(f"select_top_k: only {len(top)} distinct valid candidates for k={k}")


def mix_counts(k, total):
    """Per-component sample counts; the remainder goes to the best (first)."""
    if k < 1:
        raise ValueError("need at least one parameter set")
    if total < 0:
        raise ValueError("total must be >= 0")
    counts = [total // k] * k
    counts[0] += total - k * (total // k)
    return counts


def mix_plan(k, total):
    """Component index of each sample, interleaved round-robin."""
    counts = mix_counts(k, total)
    left = list(counts)
    order = []
    while len(order) < total:
        for j in range(k):
            if left[j]:
                order.append(j)
                left[j] -= 1
    return order


def mix_datasets(params_list, total, seed=0, out_dir=None, jobs=1):
    """Equal-proportion mixture of datasets rendered from ``params_list``.

    Sample ``i`` is rendered from its assigned params with seed ``seed + i``.
    Without ``out_dir`` only the per-sample params list is returned.
    """
    params_list = list(params_list)
    order = mix_plan(len(params_list), total)
    per_sample = [params_list[j] for j in order]
    if out_dir is None:
        return per_sample
    manifest = render_dataset(per_sample, total, out_dir, seed, jobs)
    manifest.meta["components"] = order
    manifest.meta["counts"] = mix_counts(len(params_list), total)
    save_manifest(manifest)
    return manifest
