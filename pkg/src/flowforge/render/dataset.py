"""Dataset generation, on-disk layout and motion statistics.

Sample ``i`` of a dataset is rendered with seed ``base_seed + i``, so datasets
are reproducible and independent of how the work is split across processes.
"""

from functools import partial
from pathlib import Path

import numpy as np

from ..flowio import (DatasetManifest, ManifestEntry, read_flo, save_manifest, write_flo,
                      write_image, write_mask)
from ..parallel import parallel_map
from .compose import render_pair, render_triplet


def _render_one(job, textures=None, triplet=False):
    params, seed = job
    fn = render_triplet if triplet else render_pair
    return fn(params, textures, seed)


def render_samples(params, count, base_seed=0, jobs=1, textures=None, triplet=False):
    """Render ``count`` samples from one :class:`RenderParams`.

    ``params`` may also be a list of per-sample params (used for mixing).
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    plist = list(params) if isinstance(params, (list, tuple)) else [params] * count
    if len(plist) != count:
        raise ValueError(f"{len(plist)} params given for {count} samples")
    jobs_list = [(p, int(base_seed) + i) for i, p in enumerate(plist)]
    return parallel_map(partial(_render_one, textures=textures, triplet=triplet), jobs_list, jobs)


def sample_name(i):
    return f"{i:06d}"


def write_dataset(samples, out_dir, meta=None):
    """Write rendered pairs or triplets and their manifest to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        stem = sample_name(i)
        if hasattr(s, "frames"):
            names = [f"{stem}_img{k}.png" for k in range(3)]
            for name, frame in zip(names, s.frames):
                write_image(out / name, frame)
            write_flo(out / f"{stem}_flow.flo", s.flow_fw)
            write_mask(out / f"{stem}_occ.png", s.occ_fw)
            entries.append(ManifestEntry(stem, names[1:], f"{stem}_flow.flo", f"{stem}_occ.png", names))
        else:
            write_image(out / f"{stem}_img1.png", s.frame_t)
            write_image(out / f"{stem}_img2.png", s.frame_t1)
            write_flo(out / f"{stem}_flow.flo", s.gt_flow)
            write_mask(out / f"{stem}_occ.png", s.occlusion)
            entries.append(ManifestEntry(stem, [f"{stem}_img1.png", f"{stem}_img2.png"],
                                         f"{stem}_flow.flo", f"{stem}_occ.png"))
    manifest = DatasetManifest(out, "rendered", entries, dict(meta or {}))
    manifest.meta.setdefault("seeds", [int(s.seed) for s in samples])
    save_manifest(manifest)
    return manifest


def render_dataset(params, count, out_dir, base_seed=0, jobs=1, textures=None, triplet=False):
    samples = render_samples(params, count, base_seed, jobs, textures, triplet)
    plist = list(params) if isinstance(params, (list, tuple)) else [params] * count
    meta = {"params": [p.to_dict() for p in plist], "base_seed": int(base_seed),
            "layout": "triplet" if triplet else "pair"}
    return write_dataset(samples, out_dir, meta)


def _flows(dataset):
    if isinstance(dataset, DatasetManifest):
        if not dataset.has_flow:
            raise ValueError("motion_histogram: dataset has no ground-truth flow")
        return (read_flo(dataset.path(e.flow)) for e in dataset.entries)
    return (s.gt_flow if hasattr(s, "gt_flow") else np.asarray(s) for s in dataset)


def motion_histogram(dataset, bin_edges, normalize=True):
    """Histogram of per-pixel flow magnitudes over a whole dataset.

    Magnitudes outside ``[bin_edges[0], bin_edges[-1]]`` are counted in the
    first or last bin so that no mass is lost.

    Args:
        dataset: A :class:`DatasetManifest` with flow, or an iterable of
            rendered samples or flow arrays.
        bin_edges: Increasing bin edges.
        normalize: Return fractions summing to 1 instead of integer counts.
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be a strictly increasing sequence of >= 2 values")
    counts = np.zeros(len(edges) - 1, dtype=np.int64)
    n = 0
    for flow in _flows(dataset):
        mag = np.clip(np.linalg.norm(flow, axis=-1).ravel(), edges[0], edges[-1])
        counts += np.histogram(mag, bins=edges)[0]
        n += 1
    if n == 0:
        raise ValueError("motion_histogram: empty dataset")
    if not normalize:
        return counts
    return counts / counts.sum()
