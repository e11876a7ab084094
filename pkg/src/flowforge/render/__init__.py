"""Layered synthetic renderer for labeled optical-flow data."""

from .compose import (RenderedSample, RenderedSequence, RenderedTriplet, footprint_occlusion,
                      render_pair, render_sequence, render_triplet)
from .dataset import motion_histogram, render_dataset, render_samples, write_dataset
from .motion import Motion, build_motion_field, sample_motion
from .params import (EffectSpec, MotionSpec, PolygonSpec, RenderParams, flatten_params, get_value,
                     param_names, with_values)
from .polygon import points_in_polygon, polygon_centroid, sample_polygon, signed_distance
from .textures import ImageTextures, ProceduralTextures
