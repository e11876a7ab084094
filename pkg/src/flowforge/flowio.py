"""File formats, flow visualization, manifests and JSON configuration.

Byte-level formats:

* ``.flo``: little-endian, 4-byte magic ``PIEH``, int32 width, int32 height,
  then ``H*W*2`` float32 values ``(u, v)`` interleaved, row-major.
* KITTI flow PNG: 16-bit, 3 channels ``(u, v, valid)`` with
  ``stored = round(c * 64 + 32768)`` for each flow component.
* Images and masks: 8-bit PNG.
"""

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .core import check_flow, from_uint8, to_uint8

FLO_MAGIC = b"PIEH"
KITTI_SCALE = 64.0
KITTI_OFFSET = 32768.0
MANIFEST_KINDS = ("rendered", "target-pairs", "target-triplets")


class FormatError(ValueError):
    """A file does not follow the expected byte-level format."""


class SchemaError(ValueError):
    """A JSON document violates its schema."""


# -- .flo ---------------------------------------------------------------------


def write_flo(path, flow):
    flow = check_flow(flow)
    if not np.all(np.isfinite(flow)):
        raise ValueError("write_flo: flow contains non-finite values")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(FLO_MAGIC)
        f.write(np.array([w, h], dtype="<i4").tobytes())
        f.write(flow.astype("<f4").tobytes())


def read_flo(path):
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError(f"{path}: truncated .flo header")
    if data[:4] != FLO_MAGIC:
        raise FormatError(f"{path}: bad .flo magic {data[:4]!r}")
    w, h = (int(v) for v in np.frombuffer(data, dtype="<i4", count=2, offset=4))
    if w < 0 or h < 0:
        raise FormatError(f"{path}: negative .flo dimensions {w}x{h}")
    expected = 12 + 8 * w * h
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    flow = np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w, 2)
    return flow.astype(np.float64)


# -- KITTI 16-bit PNG ---------------------------------------------------------


def kitti_encode(component):
    return np.round(np.asarray(component, dtype=np.float64) * KITTI_SCALE + KITTI_OFFSET).astype(np.uint16)


def kitti_decode(stored):
    return (np.asarray(stored, dtype=np.float64) - KITTI_OFFSET) / KITTI_SCALE


def write_kitti_png(path, flow, valid=None):
    flow = check_flow(flow)
    if not np.all(np.isfinite(flow)) or np.any(np.abs(flow) >= 512.0):
        raise ValueError("write_kitti_png: flow components must be finite with |c| < 512")
    if valid is None:
        valid = np.ones(flow.shape[:2], dtype=bool)
    rgb = np.stack([kitti_encode(flow[..., 0]), kitti_encode(flow[..., 1]),
                    np.asarray(valid, dtype=np.uint16)], axis=-1)
    # OpenCV stores channels in BGR order
    if not cv2.imwrite(str(path), rgb[..., ::-1].copy()):
        raise OSError(f"could not write {path}")


def read_kitti_png(path):
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"{path}: unreadable PNG")
    if raw.dtype != np.uint16 or raw.ndim != 3 or raw.shape[2] != 3:
        raise FormatError(f"{path}: expected a 16-bit 3-channel PNG, got {raw.dtype} {raw.shape}")
    rgb = raw[..., ::-1]
    flow = np.stack([kitti_decode(rgb[..., 0]), kitti_decode(rgb[..., 1])], axis=-1)
    return flow, rgb[..., 2] > 0


# -- 8-bit images and masks ---------------------------------------------------


def write_image(path, img):
    Image.fromarray(to_uint8(img)).save(path)


def read_image(path):
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def write_mask(path, mask):
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255).save(path)


def read_mask(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


# -- color wheel --------------------------------------------------------------


def make_color_wheel():
    """Middlebury color wheel: (55, 3) RGB anchors in [0, 255]."""
    segments = [(15, (255, 0, 0), (255, 255, 0)),   # RY
                (6, (255, 255, 0), (0, 255, 0)),    # YG
                (4, (0, 255, 0), (0, 255, 255)),    # GC
                (11, (0, 255, 255), (0, 0, 255)),   # CB
                (13, (0, 0, 255), (255, 0, 255)),   # BM
                (6, (255, 0, 255), (255, 0, 0))]    # MR
    rows = []
    for n, start, end in segments:
        t = np.arange(n)[:, None] / n
        rows.append(np.array(start) * (1 - t) + np.array(end) * t)
    return np.floor(np.concatenate(rows))


def wheel_color(u, v):
    """Color of normalized flow (u, v), radius clipped to the rim."""
    wheel = make_color_wheel()
    ncols = len(wheel)
    rad = np.hypot(u, v)
    a = np.arctan2(-v, -u) / np.pi
    fk = np.mod((a + 1.0) / 2.0 * ncols, ncols)
    k0 = np.floor(fk).astype(np.intp)
    k1 = (k0 + 1) % ncols
    f = (fk - k0)[..., None]
    col = ((1 - f) * wheel[k0] + f * wheel[k1]) / 255.0
    r = np.minimum(rad, 1.0)[..., None]
    return 1.0 - r * (1.0 - col)


def flow_to_color(flow, max_magnitude=None):
    """Encode flow as RGB: hue is direction, saturation is magnitude / max.

    Args:
        flow: (H, W, 2) finite flow.
        max_magnitude: Normalizer; ``None`` uses the largest magnitude present.

    Returns:
        (H, W, 3) float image in [0, 1]; zero flow is white.
    """
    flow = check_flow(flow)
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow_to_color: flow contains non-finite values")
    if max_magnitude is None:
        max_magnitude = float(np.max(np.linalg.norm(flow, axis=-1), initial=0.0))
    scale = 1.0 / max_magnitude if max_magnitude > 0 else 0.0
    return wheel_color(flow[..., 0] * scale, flow[..., 1] * scale)


# -- JSON helpers -------------------------------------------------------------


def write_json_atomic(path, obj):
    """Write JSON via a temp file in the same directory and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(obj, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e})") from None


def _require(d, key, types, where):
    if key not in d:
        raise SchemaError(f"{where}: missing key '{key}'")
    if not isinstance(d[key], types):
        raise SchemaError(f"{where}: key '{key}' has type {type(d[key]).__name__}")
    return d[key]


# -- dataset manifests --------------------------------------------------------


@dataclass
class ManifestEntry:
    id: str
    images: list
    flow: str = None
    occlusion: str = None
    triplet: list = None

    def to_dict(self):
        d = {"id": self.id, "images": list(self.images)}
        if self.flow is not None:
            d["flow"] = self.flow
        if self.occlusion is not None:
            d["occlusion"] = self.occlusion
        if self.triplet is not None:
            d["triplet"] = list(self.triplet)
        return d


@dataclass
class DatasetManifest:
    """A dataset on disk; entry paths are relative to ``root``."""

    root: Path
    kind: str
    entries: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def path(self, rel):
        return Path(self.root) / rel

    @property
    def has_flow(self):
        return bool(self.entries) and all(e.flow is not None for e in self.entries)

    def load_pair(self, i):
        e = self.entries[i]
        return read_image(self.path(e.images[0])), read_image(self.path(e.images[1]))

    def load_flow(self, i):
        e = self.entries[i]
        if e.flow is None:
            raise ValueError(f"entry '{e.id}' has no flow")
        return read_flo(self.path(e.flow))

    def load_occlusion(self, i):
        e = self.entries[i]
        return None if e.occlusion is None else read_mask(self.path(e.occlusion))

    def load_triplet(self, i):
        e = self.entries[i]
        if e.triplet is None:
            raise ValueError(f"entry '{e.id}' has no triplet")
        return tuple(read_image(self.path(p)) for p in e.triplet)

    def pairs(self):
        return [self.load_pair(i) for i in range(len(self))]

    def to_dict(self):
        return {"kind": self.kind, "entries": [e.to_dict() for e in self.entries], "meta": self.meta}

    def __eq__(self, other):
        return (isinstance(other, DatasetManifest) and Path(self.root) == Path(other.root)
                and self.to_dict() == other.to_dict())


def manifest_from_dict(d, root, check_files=True):
    where = "manifest"
    if not isinstance(d, dict):
        raise SchemaError(f"{where}: top level must be an object")
    kind = _require(d, "kind", str, where)
    if kind not in MANIFEST_KINDS:
        raise SchemaError(f"{where}: key 'kind' must be one of {MANIFEST_KINDS}, got {kind!r}")
    raw_entries = _require(d, "entries", list, where)
    meta = d.get("meta", {})
    if not isinstance(meta, dict):
        raise SchemaError(f"{where}: key 'meta' must be an object")
    unknown = set(d) - {"kind", "entries", "meta"}
    if unknown:
        raise SchemaError(f"{where}: unknown key(s) {sorted(unknown)}")
    entries, seen = [], set()
    for n, raw in enumerate(raw_entries):
        at = f"{where}.entries[{n}]"
        if not isinstance(raw, dict):
            raise SchemaError(f"{at}: entry must be an object")
        eid = _require(raw, "id", str, at)
        at = f"{where}: entry '{eid}'"
        if eid in seen:
            raise SchemaError(f"{at}: duplicate id")
        seen.add(eid)
        unknown = set(raw) - {"id", "images", "flow", "occlusion", "triplet"}
        if unknown:
            raise SchemaError(f"{at}: unknown key(s) {sorted(unknown)}")
        images = _require(raw, "images", list, at)
        if len(images) != 2 or not all(isinstance(p, str) for p in images):
            raise SchemaError(f"{at}: key 'images' must list exactly 2 paths")
        for key in ("flow", "occlusion"):
            if key in raw and not isinstance(raw[key], str):
                raise SchemaError(f"{at}: key '{key}' must be a path string")
        triplet = raw.get("triplet")
        if triplet is not None and (not isinstance(triplet, list) or len(triplet) != 3
                                    or not all(isinstance(p, str) for p in triplet)):
            raise SchemaError(f"{at}: key 'triplet' must list exactly 3 paths")
        if kind == "target-triplets" and triplet is None:
            raise SchemaError(f"{at}: missing key 'triplet' in a target-triplets manifest")
        entry = ManifestEntry(eid, list(images), raw.get("flow"), raw.get("occlusion"), triplet)
        if check_files:
            for key, rel in (("images", p) for p in images):
                _check_file(root, rel, at, key)
            for key in ("flow", "occlusion"):
                if getattr(entry, key) is not None:
                    _check_file(root, getattr(entry, key), at, key)
            for rel in triplet or ():
                _check_file(root, rel, at, "triplet")
        entries.append(entry)
    return DatasetManifest(Path(root), kind, entries, meta)


def _check_file(root, rel, where, key):
    if not (Path(root) / rel).is_file():
        raise SchemaError(f"{where}: {key} file '{rel}' does not exist")


def load_manifest(path):
    """Load a manifest from a ``manifest.json`` file or a directory holding one."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    return manifest_from_dict(read_json(path), path.parent)


def save_manifest(manifest, path=None):
    path = Path(path) if path is not None else Path(manifest.root) / "manifest.json"
    if path.is_dir():
        path = path / "manifest.json"
    write_json_atomic(path, manifest.to_dict())
    return path


# -- search space -------------------------------------------------------------


@dataclass(frozen=True)
class Dimension:
    name: str
    low: float
    high: float
    scale: str = "linear"
    frozen: bool = False

    def __post_init__(self):
        if self.scale not in ("linear", "log"):
            raise SchemaError(f"dimension '{self.name}': key 'scale' must be 'linear' or 'log'")
        if not self.low <= self.high:
            raise SchemaError(f"dimension '{self.name}': low > high ({self.low} > {self.high})")
        if self.scale == "log" and self.low <= 0:
            raise SchemaError(f"dimension '{self.name}': log scale needs low > 0")

    def to_scaled(self, x):
        return np.log(x) if self.scale == "log" else np.asarray(x, dtype=np.float64)

    def from_scaled(self, z):
        return np.exp(z) if self.scale == "log" else np.asarray(z, dtype=np.float64)

    @property
    def scaled_bounds(self):
        return float(self.to_scaled(self.low)), float(self.to_scaled(self.high))

    def to_dict(self):
        return {"name": self.name, "low": self.low, "high": self.high,
                "scale": self.scale, "frozen": self.frozen}


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple

    def __post_init__(self):
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise SchemaError("search space: duplicate dimension names")

    @property
    def free(self):
        return tuple(d for d in self.dims if not d.frozen)

    def to_list(self):
        return [d.to_dict() for d in self.dims]


def search_space_from_list(items, known_names=None):
    if not isinstance(items, list):
        raise SchemaError("search space: top level must be a list")
    dims = []
    for n, raw in enumerate(items):
        where = f"search space[{n}]"
        if not isinstance(raw, dict):
            raise SchemaError(f"{where}: dimension must be an object")
        name = _require(raw, "name", str, where)
        where = f"search space dimension '{name}'"
        low = _require(raw, "low", (int, float), where)
        high = _require(raw, "high", (int, float), where)
        scale = raw.get("scale", "linear")
        frozen = raw.get("frozen", False)
        if not isinstance(frozen, bool):
            raise SchemaError(f"{where}: key 'frozen' must be a boolean")
        unknown = set(raw) - {"name", "low", "high", "scale", "frozen"}
        if unknown:
            raise SchemaError(f"{where}: unknown key(s) {sorted(unknown)}")
        if known_names is not None and name not in known_names:
            raise SchemaError(f"{where}: key 'name' is not a render parameter")
        dims.append(Dimension(name, float(low), float(high), scale, frozen))
    return SearchSpace(tuple(dims))


def load_search_space(path, known_names=None):
    return search_space_from_list(read_json(path), known_names)


def save_search_space(space, path):
    write_json_atomic(path, space.to_list())
