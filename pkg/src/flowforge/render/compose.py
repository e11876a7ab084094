"""Layered compositing of polygons over a background into labeled frames.

Each layer owns a continuous texture, an optional polygon (the background has
none) and a :class:`Motion`. The scene at time ``k`` is obtained by mapping
every pixel back to time 0 through the layer motion (``k`` times), testing
polygon membership there and sampling the texture there. Ground-truth flow
at time ``k`` is the motion of the topmost layer covering each pixel.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from ..core import bilinear_sample, pixel_grid
from .motion import sample_motion
from .polygon import points_in_polygon, polygon_centroid, sample_polygon, signed_distance
from .textures import ProceduralTextures

MOTION_BLUR_SAMPLES = 9
# tolerance for trigonometric round-off when deciding footprint membership
_EPS = 1e-6


@dataclass
class Layer:
    texture: object
    motion: object
    polygon: np.ndarray = None

    def source(self, k, x, y):
        """Time-0 position of the layer point shown at (x, y) at time ``k``."""
        for _ in range(max(k, 0)):
            x, y = self.motion.inverse(x, y)
        for _ in range(max(-k, 0)):
            x, y = self.motion.forward(x, y)
        return x, y


@dataclass
class Scene:
    layers: list
    canvas: tuple
    effects: dict
    effect_params: object

    @property
    def layer_count(self):
        return len(self.layers)


@dataclass
class RenderedSample:
    frame_t: np.ndarray
    frame_t1: np.ndarray
    gt_flow: np.ndarray
    occlusion: np.ndarray
    layer_count: int
    seed: int
    labels: np.ndarray = None
    labels_t1: np.ndarray = None
    motions: list = field(default_factory=list)
    polygons: list = field(default_factory=list)
    effects: dict = field(default_factory=dict)


@dataclass
class RenderedTriplet:
    """Frames at t-1, t, t+1 with flows and occlusions anchored at frame t."""

    frames: tuple
    flow_fw: np.ndarray
    flow_bw: np.ndarray
    occ_fw: np.ndarray
    occ_bw: np.ndarray
    layer_count: int
    seed: int
    labels: np.ndarray = None
    motions: list = field(default_factory=list)
    polygons: list = field(default_factory=list)
    effects: dict = field(default_factory=dict)


@dataclass
class RenderedSequence:
    frames: list
    flows: list
    occlusions: list
    labels: list
    layer_count: int
    seed: int
    motions: list = field(default_factory=list)
    polygons: list = field(default_factory=list)


def build_scene(params, textures, rng):
    """Draw every random quantity of one sample, in a fixed order."""
    params.validate()
    canvas = tuple(params.canvas)
    layers = [Layer(textures.make(rng), sample_motion(params.bg_motion, rng, canvas))]
    for _ in range(params.num_objects):
        poly = sample_polygon(params.polygon, rng, canvas)
        tex = textures.make(rng)
        motion = sample_motion(params.fg_motion, rng, canvas, center=polygon_centroid(poly))
        layers.append(Layer(tex, motion, poly))
    draws = rng.uniform(size=3)
    fx = params.effects
    effects = {
        "mask_blur": bool(draws[0] < fx.mask_blur_prob),
        "motion_blur": bool(draws[1] < fx.motion_blur_prob),
        "fog": bool(draws[2] < fx.fog_prob),
    }
    return Scene(layers, canvas, effects, fx)


def _render_time(scene, k):
    h, w = scene.canvas
    xs, ys = pixel_grid(h, w)
    img = np.zeros((h, w, 3))
    labels = np.zeros((h, w), dtype=np.int32)
    blur = scene.effect_params.mask_blur_strength if scene.effects["mask_blur"] else 0.0
    for idx, layer in enumerate(scene.layers):
        sx, sy = layer.source(k, xs, ys)
        if layer.polygon is None:
            img = layer.texture(sx, sy)
            continue
        inside = points_in_polygon(layer.polygon, sx, sy)
        if blur > 0:
            alpha = 0.5 * (1.0 + erf(signed_distance(layer.polygon, sx, sy) / (np.sqrt(2.0) * blur)))
            touched = alpha > 1e-4
        else:
            alpha = inside.astype(np.float64)
            touched = inside
        if np.any(touched):
            a = alpha[touched][:, None]
            img[touched] = img[touched] * (1.0 - a) + layer.texture(sx[touched], sy[touched]) * a
        labels[inside] = idx
    return img, labels


def _layer_fields(scene):
    return np.stack([layer.motion.field() for layer in scene.layers])


def _backward_fields(scene):
    h, w = scene.canvas
    xs, ys = pixel_grid(h, w)
    out = []
    for layer in scene.layers:
        bx, by = layer.motion.inverse(xs, ys)
        out.append(np.stack([bx - xs, by - ys], axis=-1))
    return np.stack(out)


def _select(fields, labels):
    h, w = labels.shape
    return fields[labels, np.arange(h)[:, None], np.arange(w)[None, :]]


def footprint_occlusion(labels_src, flow, labels_dst):
    """Pixels whose flow target leaves the frame or lands (in any bilinear
    neighbor with non-zero weight) on a pixel owned by another layer."""
    h, w = labels_src.shape
    xs, ys = pixel_grid(h, w)
    tx = xs + flow[:, :, 0]
    ty = ys + flow[:, :, 1]
    occ = (tx < -_EPS) | (tx > w - 1 + _EPS) | (ty < -_EPS) | (ty > h - 1 + _EPS)
    cx = np.clip(tx, 0, w - 1)
    cy = np.clip(ty, 0, h - 1)

    def neighbors(c, size):
        i0 = np.floor(c)
        f = c - i0
        snap = f > 1 - _EPS
        i0 = np.where(snap, i0 + 1, i0).astype(np.intp)
        f = np.where(snap, 0.0, f)
        i0 = np.minimum(i0, size - 1)
        return i0, np.minimum(i0 + 1, size - 1), f > _EPS

    x0, x1, use_x1 = neighbors(cx, w)
    y0, y1, use_y1 = neighbors(cy, h)
    occ |= labels_dst[y0, x0] != labels_src
    occ |= use_x1 & (labels_dst[y0, x1] != labels_src)
    occ |= use_y1 & (labels_dst[y1, x0] != labels_src)
    occ |= use_x1 & use_y1 & (labels_dst[y1, x1] != labels_src)
    return occ


def _motion_blur(img, motion, strength):
    h, w = img.shape[:2]
    xs, ys = pixel_grid(h, w)
    acc = np.zeros_like(img)
    for s in np.linspace(-0.5, 0.5, MOTION_BLUR_SAMPLES):
        acc += bilinear_sample(img, xs + s * strength * motion[:, :, 0], ys + s * strength * motion[:, :, 1])
    return acc / MOTION_BLUR_SAMPLES


def _fog(img, density, brightness):
    a = 1.0 - np.exp(-density)
    return img * (1.0 - a) + a * brightness


def _finish(scene, img, motion):
    fx = scene.effect_params
    if scene.effects["motion_blur"] and fx.motion_blur_strength > 0:
        img = _motion_blur(img, motion, fx.motion_blur_strength)
    if scene.effects["fog"]:
        img = _fog(img, fx.fog_density, fx.fog_brightness)
    return np.clip(img, 0.0, 1.0)


def _meta(scene):
    return ([layer.motion for layer in scene.layers],
            [layer.polygon for layer in scene.layers])


def _rng(seed):
    return np.random.default_rng(int(seed))


def render_pair(params, textures=None, rng_seed=0):
    """Render one labeled image pair.

    Returns:
        :class:`RenderedSample`; ``gt_flow`` is the motion of the topmost
        layer at each frame-t pixel (also on occluded pixels), and
        ``occlusion`` marks pixels without a clean correspondence in t+1.
    """
    textures = textures or ProceduralTextures()
    scene = build_scene(params, textures, _rng(rng_seed))
    img0, lab0 = _render_time(scene, 0)
    img1, lab1 = _render_time(scene, 1)
    fields = _layer_fields(scene)
    flow = _select(fields, lab0)
    occ = footprint_occlusion(lab0, flow, lab1)
    motions, polygons = _meta(scene)
    return RenderedSample(
        frame_t=_finish(scene, img0, flow),
        frame_t1=_finish(scene, img1, _select(fields, lab1)),
        gt_flow=flow,
        occlusion=occ,
        layer_count=scene.layer_count,
        seed=int(rng_seed),
        labels=lab0,
        labels_t1=lab1,
        motions=motions,
        polygons=polygons,
        effects=dict(scene.effects),
    )


def render_triplet(params, textures=None, rng_seed=0):
    """Render frames t-1, t, t+1 under constant per-layer motion."""
    textures = textures or ProceduralTextures()
    scene = build_scene(params, textures, _rng(rng_seed))
    imgs, labs = zip(*(_render_time(scene, k) for k in (-1, 0, 1)))
    fields = _layer_fields(scene)
    flow_fw = _select(fields, labs[1])
    flow_bw = _select(_backward_fields(scene), labs[1])
    motions, polygons = _meta(scene)
    frames = tuple(_finish(scene, img, _select(fields, lab)) for img, lab in zip(imgs, labs))
    return RenderedTriplet(
        frames=frames,
        flow_fw=flow_fw,
        flow_bw=flow_bw,
        occ_fw=footprint_occlusion(labs[1], flow_fw, labs[2]),
        occ_bw=footprint_occlusion(labs[1], flow_bw, labs[0]),
        layer_count=scene.layer_count,
        seed=int(rng_seed),
        labels=labs[1],
        motions=motions,
        polygons=polygons,
        effects=dict(scene.effects),
    )


def render_sequence(params, num_frames, textures=None, rng_seed=0):
    """Render ``num_frames`` frames with flows between consecutive frames."""
    if num_frames < 2:
        raise ValueError("a sequence needs at least 2 frames")
    textures = textures or ProceduralTextures()
    scene = build_scene(params, textures, _rng(rng_seed))
    imgs, labs = zip(*(_render_time(scene, k) for k in range(num_frames)))
    fields = _layer_fields(scene)
    flows = [_select(fields, lab) for lab in labs]
    occs = [footprint_occlusion(labs[k], flows[k], labs[k + 1]) for k in range(num_frames - 1)]
    motions, polygons = _meta(scene)
    return RenderedSequence(
        frames=[_finish(scene, img, f) for img, f in zip(imgs, flows)],
        flows=flows[:-1],
        occlusions=occs,
        labels=list(labs),
        layer_count=scene.layer_count,
        seed=int(rng_seed),
        motions=motions,
        polygons=polygons,
    )


def backward_flow(motions, labels):
    """Flow to the previous time step for pixels owned by ``labels``.

    For a frame-t+1 label map this is the ground-truth flow t+1 -> t; for a
    frame-t map under constant motion it is the flow t -> t-1.
    """
    h, w = labels.shape
    xs, ys = pixel_grid(h, w)
    fields = []
    for motion in motions:
        bx, by = motion.inverse(xs, ys)
        fields.append(np.stack([bx - xs, by - ys], axis=-1))
    return _select(np.stack(fields), labels)
