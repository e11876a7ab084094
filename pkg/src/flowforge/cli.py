"""Command-line driver: ``flowforge <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
``FLOWFORGE_SEED`` provides the default ``--seed``.
"""

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import evalkit, flowio
from .adapt import multiframe_finetune, self_supervised_finetune
from .estimator import EstimatorParams, VariationalEstimator, VariationalFamily, ZeroFlowEstimator
from .losses import (LossWeights, SequenceLossConfig, error_stats, photometric_loss, score_estimator,
                     smoothness_loss)
from .parallel import default_jobs
from .render.dataset import render_dataset
from .render.params import RenderParams, param_names
from .search import CHECKPOINT_NAME, EvalSettings, mix_datasets, run_search, select_top_k

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _default_seed():
    raw = os.environ.get("FLOWFORGE_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"FLOWFORGE_SEED must be an integer, got {raw!r}") from None


def _emit(args, payload, text=None):
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(text if text is not None else json.dumps(payload, indent=2, sort_keys=True))


def _load_params(args):
    if getattr(args, "params", None):
        params = RenderParams.from_dict(flowio.read_json(args.params))
    else:
        params = RenderParams()
    if getattr(args, "canvas", None):
        params = RenderParams.from_dict(dict(params.to_dict(), canvas=list(args.canvas)))
    params.validate()
    return params


def _load_weights(spec):
    if spec in ("sintel", "davis", "kitti"):
        return LossWeights.preset(spec)
    return LossWeights.from_dict(flowio.read_json(spec))


def _load_estimator(spec):
    if spec == "zero":
        return ZeroFlowEstimator()
    if spec in (None, "default"):
        return VariationalEstimator()
    return VariationalEstimator(EstimatorParams.from_dict(flowio.read_json(spec)))


# -- commands -----------------------------------------------------------------


def cmd_render(args):
    params = _load_params(args)
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    textures = None
    if args.textures:
        from .render.textures import ImageTextures

        textures = ImageTextures(args.textures)
    manifest = render_dataset(params, args.count, args.out, args.seed, args.jobs, textures, args.triplets)
    _emit(args, {"out": str(args.out), "count": len(manifest), "seed": args.seed},
          f"rendered {len(manifest)} samples to {args.out}")


def cmd_search(args):
    if args.iters <= 0:
        raise UsageError("nothing to do: --iters must be >= 1")
    space = flowio.load_search_space(args.space, known_names=set(param_names()))
    target = flowio.load_manifest(args.target)
    weights = _load_weights(args.weights)
    base = _load_params(args)
    settings = EvalSettings(samples=args.samples, fit_budget=args.fit_budget, metric_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = run_search(space, target.pairs(), weights, args.pop, args.iters, args.seed, base, settings,
                       checkpoint=out / CHECKPOINT_NAME, jobs=args.jobs)
    top = select_top_k(state, min(args.top_k, len({repr(c.params) for c in state.history if c.valid})))
    for i, c in enumerate(top):
        flowio.write_json_atomic(out / f"top{i + 1}_params.json", c.params.to_dict())
    payload = {"history": len(state.history), "best_score": top[0].score,
               "best_values": top[0].values, "top_scores": [c.score for c in top]}
    if args.mix_total > 0:
        mixed = mix_datasets([c.params for c in top], args.mix_total, args.seed, out / "mixed", args.jobs)
        payload["mixed_manifest"] = str(Path(mixed.root) / "manifest.json")
    _emit(args, payload)


def _pred_path(pred_dir, entry_id):
    for name in (f"{entry_id}.flo", f"{entry_id}_flow.flo"):
        p = Path(pred_dir) / name
        if p.is_file():
            return p
    raise FileNotFoundError(f"no predicted flow for entry '{entry_id}' in {pred_dir}")


def cmd_score(args):
    weights = _load_weights(args.weights)
    target = flowio.load_manifest(args.target)
    if args.pred:
        rows = []
        for i, e in enumerate(target.entries):
            a, b = target.load_pair(i)
            pred = flowio.read_flo(_pred_path(args.pred, e.id))
            row = {"id": e.id,
                   "photo": photometric_loss(a, b, pred, None, weights.census_patch,
                                             weights.census_soft_eps, weights.census_scale),
                   "smooth": smoothness_loss(pred, a, weights.smooth_order, weights.edge_weight_scale)}
            gt_manifest = flowio.load_manifest(args.gt) if args.gt else target
            gt_entry = next((g for g in gt_manifest.entries if g.id == e.id), None)
            if gt_entry is not None and gt_entry.flow is not None:
                gt = flowio.read_flo(gt_manifest.path(gt_entry.flow))
                row.update(error_stats(pred, gt).to_dict())
            rows.append(row)
        summary = {k: float(np.mean([r[k] for r in rows])) for k in rows[0] if k != "id"} if rows else {}
        _emit(args, {"entries": rows, "mean": summary})
        return
    est = _load_estimator(args.estimator)
    breakdown = score_estimator(est, target.pairs(), weights, args.seed)
    payload = breakdown.to_dict()
    if target.has_flow:
        samples = [target.load_pair(i) + (target.load_flow(i),) for i in range(len(target))]
        payload["aepe"] = float(np.mean([error_stats(est.final(a, b), g).aepe for a, b, g in samples]))
    _emit(args, payload)


def cmd_finetune(args):
    family = VariationalFamily(free=tuple(args.free))
    init = EstimatorParams.from_dict(flowio.read_json(args.init)) if args.init else EstimatorParams()
    target = flowio.load_manifest(args.target)
    if args.mode == "ssl":
        fit = self_supervised_finetune(family, init, target.pairs(), _load_weights(args.weights),
                                       args.budget, args.seed)
    else:
        triplets = [target.load_triplet(i) for i in range(len(target))]
        fit, _ = multiframe_finetune(family, init, triplets, SequenceLossConfig(args.gamma), args.budget)
    flowio.write_json_atomic(args.out, fit.params.to_dict())
    _emit(args, {"params": fit.params.to_dict(), "objective": fit.score, "evaluations": fit.evaluations})


def cmd_eval(args):
    manifest = flowio.load_manifest(args.target)
    est = _load_estimator(args.estimator)
    rows = []
    for i, e in enumerate(manifest.entries):
        a, b = manifest.load_pair(i)
        s = error_stats(est.final(a, b), manifest.load_flow(i), None, manifest.load_occlusion(i))
        rows.append(dict(id=e.id, **s.to_dict()))
    if not rows:
        raise ValueError("eval: empty dataset")
    mean = {k: float(np.nanmean([r[k] for r in rows])) for k in ("aepe", "fl_all", "aepe_noc")}
    _emit(args, {"entries": rows, "mean": mean})


def cmd_correlate(args):
    if args.ladder:
        rows = evalkit.ladder_fixture(args.seed, args.jobs)
    elif args.input:
        rows = flowio.read_json(args.input)
        if not isinstance(rows, list):
            raise flowio.SchemaError(f"{args.input}: expected a list of rows")
    else:
        raise UsageError("give --input FILE or --ladder")
    terms = [t for t in ("photo", "smooth", "distill", "total") if all(t in r for r in rows)]
    report = evalkit.correlation_report(rows, terms)
    payload = {"n": len(rows), "correlations": {k: v.to_dict() for k, v in report.items()}}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        flowio.write_json_atomic(out / "correlation.json", payload)
        flowio.write_json_atomic(out / "rows.json", rows)
        evalkit.write_scatter_csv(out / "scatter.csv", rows)
    _emit(args, payload)


def cmd_propagate(args):
    flows = [flowio.read_flo(p) for p in args.flows]
    payload = {"frames": len(flows) + 1}
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    if args.mask:
        masks = evalkit.propagate_mask(flowio.read_mask(args.mask), flows)
        if out:
            for k, m in enumerate(masks):
                flowio.write_mask(out / f"mask_{k:04d}.png", m)
        if args.gt_masks:
            if len(args.gt_masks) != len(masks):
                raise ValueError(f"{len(args.gt_masks)} reference masks for {len(masks)} frames")
            ious = [evalkit.iou(m, flowio.read_mask(p)) for m, p in zip(masks, args.gt_masks)]
            payload["iou"] = ious
            payload["mean_iou"] = float(np.mean(ious))
    if args.keypoints:
        kps = np.asarray(flowio.read_json(args.keypoints), dtype=np.float64)
        tracks, flags = evalkit.propagate_keypoints(kps, flows)
        payload["tracks"] = tracks.tolist()
        payload["left_frame"] = flags.tolist()
        if args.annotations:
            ann = flowio.read_json(args.annotations)
            pts = np.array([[p if p is not None else [np.nan, np.nan] for p in frame] for frame in ann["points"]])
            payload["pck_t"] = evalkit.pck_t(tracks, pts, ann["areas"], args.alpha)
    _emit(args, payload)


def cmd_viz(args):
    flow = flowio.read_flo(args.flow)
    flowio.write_image(args.out, flowio.flow_to_color(flow, args.max))
    _emit(args, {"out": str(args.out)}, f"wrote {args.out}")


# -- parser -------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="flowforge", description="Self-supervised search over synthetic optical-flow datasets.")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, seed=True, jobs=False):
        sp.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
        if seed:
            sp.add_argument("--seed", type=int, default=None)
        if jobs:
            sp.add_argument("--jobs", type=int, default=default_jobs())

    r = sub.add_parser("render", help="render a labeled dataset")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--params", help="render-parameter JSON file")
    g.add_argument("--defaults", action="store_true", help="use default parameters")
    r.add_argument("--count", type=int, required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--canvas", type=int, nargs=2, metavar=("H", "W"))
    r.add_argument("--textures", help="directory of texture images")
    r.add_argument("--triplets", action="store_true", help="render frame triplets")
    common(r, jobs=True)
    r.set_defaults(func=cmd_render)

    s = sub.add_parser("search", help="search rendering parameters against a target")
    s.add_argument("--space", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--weights", default="sintel", help="preset name or JSON file")
    s.add_argument("--params", help="base render-parameter JSON file")
    s.add_argument("--canvas", type=int, nargs=2, metavar=("H", "W"))
    s.add_argument("--pop", type=int, default=16)
    s.add_argument("--iters", type=int, default=8)
    s.add_argument("--samples", type=int, default=4, help="rendered samples per candidate")
    s.add_argument("--fit-budget", type=int, default=6)
    s.add_argument("--top-k", type=int, default=3)
    s.add_argument("--mix-total", type=int, default=0, help="size of the mixed top-k dataset")
    s.add_argument("--out", required=True, help="run directory (resumed if it holds a checkpoint)")
    common(s, jobs=True)
    s.set_defaults(func=cmd_search)

    sc = sub.add_parser("score", help="self-supervised loss and errors on a dataset")
    sc.add_argument("--target", required=True)
    sc.add_argument("--pred", help="directory of predicted <id>.flo files")
    sc.add_argument("--gt", help="manifest directory with ground-truth flows")
    sc.add_argument("--estimator", default="default", help="'zero', 'default' or params JSON")
    sc.add_argument("--weights", default="sintel")
    common(sc)
    sc.set_defaults(func=cmd_score)

    f = sub.add_parser("finetune", help="self-supervised or multi-frame fine-tuning")
    f.add_argument("--mode", choices=("ssl", "multiframe"), default="ssl")
    f.add_argument("--target", required=True)
    f.add_argument("--init", help="initial estimator params JSON")
    f.add_argument("--free", nargs="+", default=["regularization", "patch_radius"])
    f.add_argument("--weights", default="sintel")
    f.add_argument("--budget", type=int, default=8)
    f.add_argument("--gamma", type=float, default=0.8)
    f.add_argument("--out", required=True, help="output params JSON")
    common(f)
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("eval", help="AEPE / Fl-all of an estimator on a labeled dataset")
    e.add_argument("--target", required=True)
    e.add_argument("--estimator", default="default")
    common(e, seed=False)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("correlate", help="correlation of AEPE with loss terms")
    c.add_argument("--input", help="JSON list of rows with aepe and loss terms")
    c.add_argument("--ladder", action="store_true", help="build and score the quality-ladder fixture")
    c.add_argument("--out", help="directory for report JSON and scatter CSV")
    common(c, jobs=True)
    c.set_defaults(func=cmd_correlate)

    pr = sub.add_parser("propagate", help="propagate a mask and keypoints along flows")
    pr.add_argument("--flows", nargs="+", required=True)
    pr.add_argument("--mask")
    pr.add_argument("--gt-masks", nargs="+")
    pr.add_argument("--keypoints", help="JSON list of [x, y]")
    pr.add_argument("--annotations", help='JSON {"points": [[[x, y] | null, ...], ...], "areas": [...]}')
    pr.add_argument("--alpha", type=float, default=0.2)
    pr.add_argument("--out")
    common(pr, seed=False)
    pr.set_defaults(func=cmd_propagate)

    v = sub.add_parser("viz", help="color-code a .flo file")
    v.add_argument("--flow", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--max", type=float, default=None, help="magnitude mapped to the wheel rim")
    common(v, seed=False)
    v.set_defaults(func=cmd_viz)
    return p


DATA_ERRORS = (ValueError, FileNotFoundError, OSError, KeyError, TypeError)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits on usage errors and --help
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = _default_seed()
        args.func(args)
    except UsageError as e:
        print(f"flowforge: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"flowforge: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception:  # noqa: BLE001 - top-level guard maps to the internal-error code
        traceback.print_exc()
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
