"""Raster types and resampling primitives shared by every other module.

Images are float arrays shaped ``(H, W)`` or ``(H, W, C)`` with values in
[0, 1]. Flow fields are ``(H, W, 2)`` float arrays holding ``(u, v)``, with
positive ``u`` pointing right and positive ``v`` pointing down. A flow maps a
pixel of frame t to its location in frame t+1. Masks are ``(H, W)`` bool
arrays.

All resampling clamps to the image border.
"""

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ShapeMismatchError(ValueError):
    """Raised when paired rasters disagree in spatial size."""


def check_image(img, name="image"):
    img = np.asarray(img)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] not in (1, 3)):
        raise ValueError(f"{name} must be (H, W) or (H, W, 1|3), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} contains non-finite values")
    return img


def check_flow(flow, name="flow"):
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"{name} must be (H, W, 2), got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise ValueError(f"{name} contains non-finite values")
    return flow


def check_same_size(*arrays, names=None):
    sizes = [np.asarray(a).shape[:2] for a in arrays]
    if any(s != sizes[0] for s in sizes):
        label = ", ".join(names) if names else "inputs"
        raise ShapeMismatchError(f"spatial sizes of {label} differ: {sizes}")


def to_gray(img):
    """Luma conversion; 2-D and single-channel inputs pass through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ np.asarray(LUMA_WEIGHTS)


def to_uint8(img):
    """Quantize [0, 1] intensities to 8 bits, rounding half up."""
    return np.clip(np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def from_uint8(img):
    return np.asarray(img, dtype=np.float64) / 255.0


def _corner_weights(coord, size):
    """Lower neighbor index and fractional weight along one axis, clamped."""
    coord = np.clip(coord, 0.0, size - 1)
    if size == 1:
        return np.zeros(np.shape(coord), dtype=np.intp), np.zeros(np.shape(coord))
    i0 = np.minimum(np.floor(coord).astype(np.intp), size - 2)
    return i0, coord - i0


def bilinear_sample(img, x, y):
    """Bilinearly interpolate ``img`` at subpixel locations.

    Coordinates outside ``[0, W-1] x [0, H-1]`` are clamped to the border, so
    the result is defined everywhere.

    Args:
        img: Array shaped (H, W) or (H, W, C).
        x: Column coordinate(s), scalar or array.
        y: Row coordinate(s), broadcastable with ``x``.

    Returns:
        Interpolated values shaped ``broadcast(x, y).shape`` (+ ``(C,)`` for
        multichannel input).
    """
    img = np.asarray(img)
    x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    h, w = img.shape[:2]
    x0, fx = _corner_weights(x, w)
    y0, fy = _corner_weights(y, h)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bottom = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1.0 - fy) * top + fy * bottom


def pixel_grid(h, w):
    """Column and row coordinate arrays, each shaped (H, W)."""
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(np.float64), ys.astype(np.float64)


def out_of_frame(x, y, h, w):
    return (x < 0) | (x > w - 1) | (y < 0) | (y > h - 1)


def warp_image(img, flow):
    """Backward-warp ``img`` (frame t+1) into frame t with a forward flow.

    Returns:
        ``(warped, out_of_frame)`` where ``warped(p) = img(p + flow(p))`` and
        the mask marks pixels whose target location leaves the image.
    """
    img = check_image(img)
    flow = check_flow(flow)
    check_same_size(img, flow, names=("image", "flow"))
    h, w = flow.shape[:2]
    xs, ys = pixel_grid(h, w)
    tx = xs + flow[:, :, 0]
    ty = ys + flow[:, :, 1]
    return bilinear_sample(img, tx, ty), out_of_frame(tx, ty, h, w)


def warp_flow(field, flow):
    """Sample any (H, W, C) field at ``p + flow(p)``; used for fb checks."""
    flow = check_flow(flow)
    h, w = flow.shape[:2]
    xs, ys = pixel_grid(h, w)
    return bilinear_sample(field, xs + flow[:, :, 0], ys + flow[:, :, 1])


def image_gradients(img):
    """Central differences in the interior, one-sided differences on borders."""
    img = np.asarray(img, dtype=np.float64)
    if min(img.shape[:2]) < 2:
        raise ValueError("image_gradients needs at least 2 pixels per axis")
    return np.gradient(img, axis=1), np.gradient(img, axis=0)


def resize(img, new_h, new_w):
    """Bilinear resize with half-pixel centers and clamped borders.

    No antialiasing is applied; blur first when shrinking a lot.
    """
    img = np.asarray(img, dtype=np.float64)
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target size must be positive, got {(new_h, new_w)}")
    h, w = img.shape[:2]
    rows = (np.arange(new_h) + 0.5) * (h / new_h) - 0.5
    cols = (np.arange(new_w) + 0.5) * (w / new_w) - 0.5
    xs, ys = np.meshgrid(cols, rows)
    return bilinear_sample(img, xs, ys)


def resize_flow(flow, new_h, new_w):
    """Resize a flow field and rescale its vectors to the new pixel units."""
    h, w = flow.shape[:2]
    out = resize(flow, new_h, new_w)
    out[:, :, 0] *= new_w / w
    out[:, :, 1] *= new_h / h
    return out


def crop(img, top, left, h, w):
    """Exact sub-rectangle; raises if the rectangle leaves the image."""
    img = np.asarray(img)
    H, W = img.shape[:2]
    if h < 1 or w < 1 or top < 0 or left < 0 or top + h > H or left + w > W:
        raise ValueError(f"crop ({top}, {left}, {h}, {w}) outside image of size {(H, W)}")
    return img[top : top + h, left : left + w].copy()
