"""Rendering hyperparameters (the vector searched over).

Every range-valued knob is stored as an explicit ``*_min`` / ``*_max`` pair so
that the whole parameter set flattens to named scalars; see
:func:`flatten_params` and :func:`with_values`.
"""

from dataclasses import asdict, dataclass, field, fields, replace


@dataclass(frozen=True)
class MotionSpec:
    """Per-layer motion distribution.

    ``scale_*`` are natural-log scale factors, ``rotation_*`` and
    ``direction_*`` are degrees, ``translation_*`` is the displacement
    magnitude in pixels and ``grid_strength`` bounds the per-node offset of
    the ``grid_size x grid_size`` deformation lattice.
    """

    scale_min: float = 0.0
    scale_max: float = 0.0
    rotation_min: float = 0.0
    rotation_max: float = 0.0
    translation_min: float = 0.0
    translation_max: float = 0.0
    direction_min: float = 0.0
    direction_max: float = 360.0
    grid_strength: float = 0.0
    grid_size: int = 3

    def validate(self, name="motion"):
        for key in ("scale", "rotation", "translation", "direction"):
            lo, hi = getattr(self, f"{key}_min"), getattr(self, f"{key}_max")
            if lo > hi:
                raise ValueError(f"{name}.{key}_min > {name}.{key}_max ({lo} > {hi})")
        if self.translation_min < 0:
            raise ValueError(f"{name}.translation_min must be >= 0")
        if self.grid_size < 2:
            raise ValueError(f"{name}.grid_size must be >= 2, got {self.grid_size}")
        if self.grid_strength < 0:
            raise ValueError(f"{name}.grid_strength must be >= 0")


@dataclass(frozen=True)
class PolygonSpec:
    diag_min: float = 30.0
    diag_max: float = 120.0
    center_min: float = 0.1
    center_max: float = 0.9
    irregularity: float = 0.3
    spikiness: float = 0.2
    vertices_min: int = 5
    vertices_max: int = 12

    def validate(self, name="polygon"):
        if not 0 < self.diag_min <= self.diag_max:
            raise ValueError(f"{name}.diag_min must satisfy 0 < diag_min <= diag_max")
        if not 0 <= self.center_min <= self.center_max <= 1:
            raise ValueError(f"{name}.center bounds must satisfy 0 <= min <= max <= 1")
        for key in ("irregularity", "spikiness"):
            if not 0 <= getattr(self, key) <= 1:
                raise ValueError(f"{name}.{key} must lie in [0, 1]")
        if not 3 <= self.vertices_min <= self.vertices_max:
            raise ValueError(f"{name}.vertices bounds must satisfy 3 <= min <= max")


@dataclass(frozen=True)
class EffectSpec:
    mask_blur_prob: float = 0.0
    mask_blur_strength: float = 1.0
    motion_blur_prob: float = 0.0
    motion_blur_strength: float = 1.0
    fog_prob: float = 0.0
    fog_density: float = 0.3
    fog_brightness: float = 0.7

    def validate(self, name="effects"):
        for key in ("mask_blur_prob", "motion_blur_prob", "fog_prob", "fog_brightness"):
            if not 0 <= getattr(self, key) <= 1:
                raise ValueError(f"{name}.{key} must lie in [0, 1]")
        for key in ("mask_blur_strength", "motion_blur_strength", "fog_density"):
            if getattr(self, key) < 0:
                raise ValueError(f"{name}.{key} must be >= 0")


@dataclass(frozen=True)
class RenderParams:
    num_objects: int = 4
    fg_motion: MotionSpec = field(
        default_factory=lambda: MotionSpec(
            scale_min=-0.05, scale_max=0.05, rotation_min=-5.0, rotation_max=5.0,
            translation_min=0.0, translation_max=8.0, grid_strength=1.0, grid_size=3,
        )
    )
    bg_motion: MotionSpec = field(
        default_factory=lambda: MotionSpec(
            scale_min=-0.03, scale_max=0.03, rotation_min=-3.0, rotation_max=3.0,
            translation_min=0.0, translation_max=6.0, grid_strength=1.0, grid_size=3,
        )
    )
    polygon: PolygonSpec = field(default_factory=PolygonSpec)
    effects: EffectSpec = field(
        default_factory=lambda: EffectSpec(
            mask_blur_prob=0.3, motion_blur_prob=0.2, fog_prob=0.2,
        )
    )
    canvas: tuple = (384, 512)

    def validate(self):
        if self.num_objects < 0:
            raise ValueError("num_objects must be >= 0")
        h, w = self.canvas
        if h < 64 or w < 64:
            raise ValueError(f"canvas must be at least 64x64, got {self.canvas}")
        self.fg_motion.validate("fg_motion")
        self.bg_motion.validate("bg_motion")
        self.polygon.validate()
        self.effects.validate()
        return self

    def to_dict(self):
        d = asdict(self)
        d["canvas"] = list(self.canvas)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown render parameter(s): {sorted(unknown)}")
        kwargs = dict(d)
        for key, sub in (("fg_motion", MotionSpec), ("bg_motion", MotionSpec),
                         ("polygon", PolygonSpec), ("effects", EffectSpec)):
            if key in kwargs:
                kwargs[key] = _sub_from_dict(sub, kwargs[key], key)
        if "canvas" in kwargs:
            kwargs["canvas"] = tuple(int(v) for v in kwargs["canvas"])
        if "num_objects" in kwargs:
            kwargs["num_objects"] = int(kwargs["num_objects"])
        return cls(**kwargs).validate()


def _sub_from_dict(cls, d, prefix):
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ValueError(f"unknown {prefix} parameter(s): {sorted(unknown)}")
    return cls(**{k: int(v) if known[k].type in (int, "int") else float(v) for k, v in d.items()})


_SECTIONS = ("fg_motion", "bg_motion", "polygon", "effects")


def flatten_params(params):
    """Dotted-name view of every scalar hyperparameter, e.g. ``bg_motion.grid_size``."""
    out = {"num_objects": params.num_objects}
    for section in _SECTIONS:
        for key, value in asdict(getattr(params, section)).items():
            out[f"{section}.{key}"] = value
    return out


def is_integer_param(name):
    return name in ("num_objects", "fg_motion.grid_size", "bg_motion.grid_size",
                    "polygon.vertices_min", "polygon.vertices_max")


def param_names():
    names = list(flatten_params(RenderParams()))
    # "section.key" addresses both ends of a key_min/key_max pair at once
    tied = sorted({n[: -len("_min")] for n in names if n.endswith("_min")})
    return names + tied


def get_value(params, name):
    flat = flatten_params(params)
    if name in flat:
        return flat[name]
    if f"{name}_min" in flat:
        return 0.5 * (flat[f"{name}_min"] + flat[f"{name}_max"])
    raise KeyError(f"unknown render parameter {name!r}")


def with_values(params, values):
    """Return a copy of ``params`` with dotted-name overrides applied.

    A name without ``_min``/``_max`` suffix that matches a range pair sets
    both ends, which pins that knob to a single value.
    """
    flat = flatten_params(params)
    updates = {}
    for name, value in values.items():
        if name in flat:
            updates[name] = value
        elif f"{name}_min" in flat:
            updates[f"{name}_min"] = value
            updates[f"{name}_max"] = value
        else:
            raise KeyError(f"unknown render parameter {name!r}")
    top = {}
    sections = {s: {} for s in _SECTIONS}
    for name, value in updates.items():
        if is_integer_param(name):
            value = int(round(value))
        if "." in name:
            section, key = name.split(".", 1)
            sections[section][key] = value
        else:
            top[name] = value
    for section, kv in sections.items():
        if kv:
            top[section] = replace(getattr(params, section), **kv)
    return replace(params, **top)
