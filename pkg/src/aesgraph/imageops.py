"""Non-differentiable image preprocessing: bilinear resize, flip, crop.

These operate on (C, H, W) float arrays (or Tensors, returning Tensors) and
never join the autodiff tape.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def _unwrap(img):
    if isinstance(img, Tensor):
        return img.data, True
    return np.asarray(img), False


def _axis_coords(n_in: int, n_out: int) -> np.ndarray:
    # Corner-aligned sampling: endpoints map to endpoints, so a linear ramp
    # stays exactly linear under resizing.
    if n_out == 1:
        return np.zeros(1)
    return np.linspace(0.0, n_in - 1.0, n_out)


def resize_bilinear(img, out_h: int, out_w: int):
    """Bilinear resize of a (C, H, W) image to (C, out_h, out_w)."""
    data, wrap = _unwrap(img)
    if data.ndim != 3:
        raise ValueError(f"resize_bilinear expects (C, H, W), got {data.shape}")
    _, h, w = data.shape
    if out_h < 1 or out_w < 1:
        raise ValueError("resize_bilinear target extents must be positive")

    ys = _axis_coords(h, out_h)
    y0 = np.floor(ys).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    wy = (ys - y0).reshape(1, -1, 1)
    rows = data[:, y0, :] * (1.0 - wy) + data[:, y1, :] * wy

    xs = _axis_coords(w, out_w)
    x0 = np.floor(xs).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    wx = (xs - x0).reshape(1, 1, -1)
    out = rows[:, :, x0] * (1.0 - wx) + rows[:, :, x1] * wx
    return Tensor(out) if wrap else out


def hflip(img):
    """Mirror a (C, H, W) image left-right."""
    data, wrap = _unwrap(img)
    out = data[:, :, ::-1].copy()
    return Tensor(out) if wrap else out


def crop(img, top: int, left: int, height: int, width: int):
    """Extract a (C, height, width) window; must lie fully inside the image."""
    data, wrap = _unwrap(img)
    _, h, w = data.shape
    if top < 0 or left < 0 or top + height > h or left + width > w:
        raise ValueError(f"crop window ({top},{left},{height},{width}) outside {h}x{w}")
    out = data[:, top:top + height, left:left + width].copy()
    return Tensor(out) if wrap else out
