"""Pixel-space frames and masks, foreground placement, composite assembly and
background replacement.

Frames are float arrays of shape ``(H, W, 3)`` with values in ``[0, 1]``.
Masks are boolean arrays of shape ``(H, W)``; ``True`` marks the foreground.
A clip is a sequence of frames, returned by this module as an ``(n, H, W, 3)``
array.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyPlacement, InvalidPlacement, LengthMismatch

WORKING_RESOLUTION = (512, 512)
MASK_THRESHOLD = 0.5


def as_frame(frame) -> np.ndarray:
    """Validate and return a frame as a float64 ``(H, W, 3)`` array."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionMismatch(f"expected an (H, W, 3) frame, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("frame contains non-finite values")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("frame values must lie in [0, 1]")
    return arr


def as_mask(mask) -> np.ndarray:
    """Return a strictly binary ``(H, W)`` boolean mask.

    Float masks are accepted only if every value is exactly 0 or 1; use
    :func:`binarize` for soft inputs.
    """
    arr = np.asarray(mask)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected an (H, W) mask, got shape {arr.shape}")
    if arr.dtype == bool:
        return arr
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("mask is not binary")
    return arr.astype(bool)


def binarize(values, threshold: float = MASK_THRESHOLD) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) >= threshold


def as_clip(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray) and frames.ndim == 4:
        clip = frames.astype(np.float64, copy=False)
        for f in clip:
            as_frame(f)
        return clip
    frames = [as_frame(f) for f in frames]
    if not frames:
        raise LengthMismatch("a clip needs at least one frame")
    shape = frames[0].shape
    for i, f in enumerate(frames):
        if f.shape != shape:
            raise DimensionMismatch(f"frame {i} has shape {f.shape}, expected {shape}")
    return np.stack(frames)


def as_masks(masks) -> np.ndarray:
    return np.stack([as_mask(m) for m in masks])


# --- resampling -----------------------------------------------------------

def _bilinear(img: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Sample ``img`` at fractional source coordinates, clamping at the border.

    ``sy`` has shape ``(H_out,)`` and ``sx`` shape ``(W_out,)``; the sampling
    grid is separable.
    """
    h, w = img.shape[:2]
    sy = np.clip(sy, 0.0, h - 1)
    sx = np.clip(sx, 0.0, w - 1)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0)[:, None]
    wx = (sx - x0)[None, :]
    if img.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def _source_coords(n_out: int, n_in: int) -> np.ndarray:
    # pixel-centre convention; exact identity when n_out == n_in
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def resize_frame(frame, size) -> np.ndarray:
    """Bilinear resize to ``size = (H, W)``. Non-square inputs are stretched."""
    frame = as_frame(frame)
    h, w = size
    if frame.shape[:2] == (h, w):
        return frame.copy()
    out = _bilinear(frame, _source_coords(h, frame.shape[0]), _source_coords(w, frame.shape[1]))
    return np.clip(out, 0.0, 1.0)


def resize_mask(mask, size) -> np.ndarray:
    """Nearest-neighbour resize, result stays binary."""
    mask = as_mask(mask)
    h, w = size
    iy = np.clip(np.floor((np.arange(h) + 0.5) * mask.shape[0] / h), 0, mask.shape[0] - 1).astype(int)
    ix = np.clip(np.floor((np.arange(w) + 0.5) * mask.shape[1] / w), 0, mask.shape[1] - 1).astype(int)
    return mask[iy][:, ix]


# --- placement ------------------------------------------------------------

@dataclass(frozen=True)
class Placement:
    """Uniform scale about the top-left corner followed by a pixel translation."""

    scale: float = 1.0
    translate_x: float = 0.0
    translate_y: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidPlacement(f"scale must be a positive finite number, got {self.scale}")
        if not (np.isfinite(self.translate_x) and np.isfinite(self.translate_y)):
            raise InvalidPlacement("translation must be finite")


def place_foreground(fg, fg_mask, placement: Placement, canvas=WORKING_RESOLUTION):
    """Resample a foreground frame and its mask onto a canvas of size ``(H, W)``.

    Output pixel ``(y, x)`` reads the source at ``((y + 0.5 - ty) / s - 0.5, ...)``.
    Pixels are bilinear, the mask is nearest-neighbour. Everything outside the
    transformed source rectangle is zero in both outputs.

    Raises EmptyPlacement when no foreground pixel lands on the canvas.
    """
    fg = as_frame(fg)
    fg_mask = as_mask(fg_mask)
    if fg.shape[:2] != fg_mask.shape:
        raise DimensionMismatch(f"frame {fg.shape[:2]} and mask {fg_mask.shape} differ")
    h_out, w_out = canvas
    h_in, w_in = fg_mask.shape
    s = placement.scale

    uy = (np.arange(h_out) + 0.5 - placement.translate_y) / s
    ux = (np.arange(w_out) + 0.5 - placement.translate_x) / s
    iy = np.floor(uy).astype(int)
    ix = np.floor(ux).astype(int)
    in_y = (iy >= 0) & (iy < h_in)
    in_x = (ix >= 0) & (ix < w_in)
    support = in_y[:, None] & in_x[None, :]

    mask = np.zeros((h_out, w_out), dtype=bool)
    mask[support] = fg_mask[np.clip(iy, 0, h_in - 1)][:, np.clip(ix, 0, w_in - 1)][support]
    mask = binarize(mask)
    if not mask.any():
        raise EmptyPlacement("foreground mask is empty after placement")

    pixels = _bilinear(fg, uy - 0.5, ux - 0.5)
    pixels = np.where(support[..., None], np.clip(pixels, 0.0, 1.0), 0.0)
    return pixels, mask


# --- compositing ----------------------------------------------------------

def assemble_composite(fg, bg, masks) -> np.ndarray:
    """Paste the foreground clip onto the background clip wherever the mask is set.

    Hard selection, no blending: ``out = fg`` inside the mask and ``bg``
    outside it.
    """
    fg = as_clip(fg)
    bg = as_clip(bg)
    masks = as_masks(masks)
    if not (len(fg) == len(bg) == len(masks)):
        raise LengthMismatch(f"fg={len(fg)}, bg={len(bg)}, masks={len(masks)} frames")
    if fg.shape != bg.shape or masks.shape != fg.shape[:3]:
        raise DimensionMismatch(
            f"fg {fg.shape[1:3]}, bg {bg.shape[1:3]}, masks {masks.shape[1:3]} differ"
        )
    return np.where(masks[..., None], fg, bg)


def replace_background(generated, bg, mask) -> np.ndarray:
    """Keep generated pixels inside the mask; restore ``bg`` elsewhere."""
    generated = as_frame(generated)
    bg = as_frame(bg)
    mask = as_mask(mask)
    if generated.shape != bg.shape or mask.shape != bg.shape[:2]:
        raise DimensionMismatch(
            f"generated {generated.shape}, bg {bg.shape}, mask {mask.shape} differ"
        )
    return np.where(mask[..., None], generated, bg)


def composite_from_layers(
    fg_frames: Sequence[np.ndarray],
    fg_masks: Sequence[np.ndarray],
    bg_frames: Sequence[np.ndarray],
    placement: Placement | None = None,
    resolution=WORKING_RESOLUTION,
):
    """Ingest raw layers at the working resolution and build the composite clip.

    Returns ``(composite, masks, background)``, all at ``resolution``.
    """
    if not (len(fg_frames) == len(fg_masks) == len(bg_frames)):
        raise LengthMismatch(
            f"fg={len(fg_frames)}, masks={len(fg_masks)}, bg={len(bg_frames)} frames"
        )
    placement = placement or Placement()
    placed, placed_masks = [], []
    for i, (f, m) in enumerate(zip(fg_frames, fg_masks)):
        f = resize_frame(f, resolution)
        m = resize_mask(m, resolution)
        try:
            pf, pm = place_foreground(f, m, placement, resolution)
        except EmptyPlacement as exc:
            raise EmptyPlacement(f"frame {i}: {exc}") from None
        placed.append(pf)
        placed_masks.append(pm)
    bg = np.stack([resize_frame(b, resolution) for b in bg_frames])
    masks = np.stack(placed_masks)
    return assemble_composite(placed, bg, masks), masks, bg
