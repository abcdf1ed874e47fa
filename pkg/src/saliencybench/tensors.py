"""Dense array helpers and the validated image wrapper.

Arrays are plain numpy ndarrays (row-major). Compute happens in float64 for
numerical headroom; the on-disk formats store float32 (see ``model.save_model``
and ``saliency.save_map``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError


def require_finite(arr: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains NaN or Inf")
    return arr


def as_f64(arr) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(arr, dtype=np.float64))


@dataclass(frozen=True)
class Image:
    """A ch x h x w pixel array with intensities in [0, 1].

    Channels are 1 (gray) or 3 (rgb); spatial dims are at least 8.
    """

    array: np.ndarray

    def __post_init__(self):
        arr = as_f64(self.array)
        if arr.ndim != 3:
            raise ShapeMismatchError(f"image must be ch x h x w, got shape {arr.shape}")
        ch, h, w = arr.shape
        if ch not in (1, 3):
            raise ShapeMismatchError(f"channel count must be 1 or 3, got {ch}")
        if h < 8 or w < 8:
            raise ShapeMismatchError(f"spatial dims must be >= 8, got {h}x{w}")
        require_finite(arr, "image")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "array", arr)

    @property
    def channels(self) -> int:
        return self.array.shape[0]

    @property
    def height(self) -> int:
        return self.array.shape[1]

    @property
    def width(self) -> int:
        return self.array.shape[2]

    @property
    def shape(self) -> tuple:
        return tuple(self.array.shape)


def clip_to_image(arr: np.ndarray) -> Image:
    """Clamp an arbitrary ch x h x w array into [0, 1] and wrap it."""
    return Image(np.clip(arr, 0.0, 1.0))


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a 2-d array with half-pixel-center bilinear interpolation.

    Matches the usual image-resize convention (sample positions at pixel
    centers, edges clamped), which keeps low-resolution saliency maps smooth
    when blown up to input size.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"bilinear_resize expects 2-d input, got {arr.shape}")
    in_h, in_w = arr.shape
    if (in_h, in_w) == (out_h, out_w):
        return arr.copy()

    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.clip(y0 + 1, 0, in_h - 1)
    x1 = np.clip(x0 + 1, 0, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]

    top = arr[np.ix_(y0, x0)] * (1 - wx) + arr[np.ix_(y0, x1)] * wx
    bot = arr[np.ix_(y1, x0)] * (1 - wx) + arr[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def minmax_normalize(arr: np.ndarray) -> np.ndarray:
    """Rescale to [0, 1]; a constant array maps to all zeros."""
    arr = np.asarray(arr, dtype=np.float64)
    lo = arr.min()
    hi = arr.max()
    if hi - lo <= 0.0:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)
