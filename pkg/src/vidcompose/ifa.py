"""Prompt-conditioned generation with inter-frame augmented (IFA) attention.

During generation of frame ``i`` the previous output frame, inverted to the
same depth, is denoised in lockstep. At every self-attention layer and every
step inside the window ``[tau, t_b]`` the current frame's foreground query
rows are replaced by the previous frame's rows.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .compositing import MASK_THRESHOLD, as_mask
from .diffusion import (
    PROMPT,
    AttentionHook,
    AttentionRecord,
    DiffusionSchedule,
    TextCondition,
    guided_noise,
    sampler_step,
)
from .errors import BackendFailure, NonFinite, ShapeMismatch, VidComposeError, WindowMismatch

# observer(layer, step, kind, pre_map, post_map)
SpliceObserver = Callable[[int, int, str, np.ndarray, np.ndarray], None]


@dataclass(frozen=True)
class IfaWindow:
    tau: int
    t_b: int

    def validate(self, T: int):
        if not 1 <= self.tau <= self.t_b <= T:
            raise WindowMismatch(f"need 1 <= tau <= t_b <= T, got tau={self.tau}, t_b={self.t_b}, T={T}")

    def __contains__(self, t: int) -> bool:
        return self.tau <= t <= self.t_b


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row ``i`` holds the fractional overlap of each input cell with output cell ``i``."""
    edges_out = np.arange(n_out + 1) * (n_in / n_out)
    lo = np.maximum(edges_out[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges_out[1:, None], np.arange(n_in)[None, :] + 1)
    return np.clip(hi - lo, 0.0, None) / (n_in / n_out)


def downscale_mask(mask, grid) -> np.ndarray:
    """Area-average a pixel mask onto a ``(gh, gw)`` grid, threshold at 0.5, flatten row-major."""
    m = as_mask(mask).astype(np.float64)
    gh, gw = grid
    if gh <= 0 or gw <= 0:
        raise ValueError(f"grid dims must be positive, got {grid}")
    pooled = _area_matrix(m.shape[0], gh) @ m @ _area_matrix(m.shape[1], gw).T
    # guard against round-off in the overlap weights right at the threshold
    return (pooled >= MASK_THRESHOLD - 1e-12).reshape(-1)


def splice_attention(a_cur, a_prev, qmask) -> np.ndarray:
    """Take query rows from ``a_prev`` where ``qmask`` is set, from ``a_cur`` elsewhere.

    Maps may carry leading batch/head axes; every head uses the same mask.
    """
    a_cur = np.asarray(a_cur)
    a_prev = np.asarray(a_prev)
    qmask = np.asarray(qmask, dtype=bool).reshape(-1)
    if a_cur.shape != a_prev.shape:
        raise ShapeMismatch(f"current map {a_cur.shape} vs previous map {a_prev.shape}")
    if a_cur.ndim < 2 or qmask.shape[0] != a_cur.shape[-2]:
        raise ShapeMismatch(f"query mask of length {qmask.shape[0]} does not fit map {a_cur.shape}")
    return np.where(qmask[:, None], a_prev, a_cur)


def cross_attention_guidance(a_self, qmask, kmask, strength: float) -> np.ndarray:
    """Damp the attention that foreground queries pay to background keys.

    For rows with ``qmask`` set, columns with ``kmask`` unset are multiplied by
    ``strength`` and the row renormalised. ``strength == 1`` leaves the map
    untouched.
    """
    a = np.asarray(a_self, dtype=np.float64)
    qmask = np.asarray(qmask, dtype=bool).reshape(-1)
    kmask = np.asarray(kmask, dtype=bool).reshape(-1)
    if a.ndim < 2 or qmask.shape[0] != a.shape[-2] or kmask.shape[0] != a.shape[-1]:
        raise ShapeMismatch(f"masks ({qmask.shape[0]}, {kmask.shape[0]}) do not fit map {a.shape}")
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"strength must be in [0, 1], got {strength}")
    if strength == 1.0 or not qmask.any() or not kmask.any():
        return a.copy()
    scale = np.where(kmask, 1.0, strength)
    rows = a[..., qmask, :] * scale
    total = rows.sum(axis=-1, keepdims=True)
    # a row whose mass sat entirely on background keys falls back to uniform over foreground keys
    fallback = np.broadcast_to(kmask / kmask.sum(), rows.shape)
    rows = np.where(total > 0, rows / np.where(total > 0, total, 1.0), fallback)
    out = a.copy()
    out[..., qmask, :] = rows
    return out


# --- hooks -------------------------------------------------------------------

class _MaskCache:
    def __init__(self, mask):
        self.mask = mask
        self._bits = {}

    def bits(self, grid) -> np.ndarray:
        grid = tuple(grid)
        if grid not in self._bits:
            self._bits[grid] = downscale_mask(self.mask, grid)
        return self._bits[grid]


class CaptureHook:
    """Record self-attention maps of one backend call, keyed by layer id."""

    def __init__(self):
        self.maps = {}

    def __call__(self, record: AttentionRecord):
        if record.kind == "self":
            self.maps[record.layer] = record.map.copy()
        return None


class SpliceHook:
    """Apply the row splice at each self-attention layer, consuming maps from a CaptureHook."""

    def __init__(self, capture: CaptureHook, masks: _MaskCache, observers: Sequence[SpliceObserver] = ()):
        self.capture = capture
        self.masks = masks
        self.observers = list(observers)
        self.calls = 0

    def __call__(self, record: AttentionRecord):
        if record.kind != "self":
            return None
        try:
            prev = self.capture.maps[record.layer]
        except KeyError:
            raise VidComposeError(f"no previous-frame map captured for layer {record.layer}") from None
        out = splice_attention(record.map, prev, self.masks.bits(record.grid))
        self.calls += 1
        for obs in self.observers:
            obs(record.layer, record.step, record.kind, record.map, out)
        return out


class GuidanceHook:
    def __init__(self, masks: _MaskCache, strength: float):
        self.masks = masks
        self.strength = strength

    def __call__(self, record: AttentionRecord):
        if record.kind != "self" or record.map.shape[-1] != record.map.shape[-2]:
            return None
        bits = self.masks.bits(record.grid)
        return cross_attention_guidance(record.map, bits, bits, self.strength)


# --- generation ----------------------------------------------------------------

def _noise(backend, z, t, prompt, uncond, guidance_scale, hooks):
    try:
        eps = guided_noise(backend, z, t, prompt, uncond, guidance_scale, hooks)
    except VidComposeError:
        raise
    except Exception as exc:
        raise BackendFailure(f"predict_noise failed at generation step {t}: {exc}") from exc
    if not np.all(np.isfinite(eps)):
        raise NonFinite(f"backend returned non-finite noise at generation step {t}")
    return eps


def generate_frame(
    init,
    prev_traj,
    prompt: TextCondition,
    window: IfaWindow,
    backend,
    sched: DiffusionSchedule,
    mask=None,
    *,
    guidance_scale: float = 7.5,
    cross_attention: bool = False,
    cross_strength: float = 0.8,
    uncond: TextCondition | None = None,
    observers: Sequence[SpliceObserver] = (),
    hooks: Sequence[AttentionHook] = (),
) -> np.ndarray:
    """Denoise ``init`` from step ``window.t_b`` down to 0 and return ``z_0``.

    ``prev_traj`` is the previous output frame inverted to ``t_b`` (or None for
    the first frame). IFA and the cross-attention guidance are active only for
    steps inside ``window``. ``hooks`` are extra observers run after the
    built-in ones on the current frame's maps.
    """
    window.validate(sched.T)
    z = np.asarray(init, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFinite("initial point is not finite")
    if prev_traj is not None and prev_traj.t_b != window.t_b:
        raise WindowMismatch(f"previous trajectory has t_b={prev_traj.t_b}, window has t_b={window.t_b}")
    use_ifa = prev_traj is not None
    if (use_ifa or cross_attention) and mask is None:
        raise ValueError("a foreground mask is required for IFA or cross-attention guidance")
    masks = _MaskCache(mask) if mask is not None else None
    if uncond is None and guidance_scale != 1.0:
        uncond = backend.embed_text("", PROMPT)
    z_prev = np.asarray(prev_traj.initial_point, dtype=np.float64) if use_ifa else None

    for t in range(window.t_b, 0, -1):
        active = t in window
        guide = [GuidanceHook(masks, cross_strength)] if (cross_attention and active) else []
        cur_hooks = list(guide)
        if use_ifa and active:
            capture = CaptureHook()
            eps_prev = _noise(backend, z_prev, t, prompt, uncond, guidance_scale, [capture] + guide)
            cur_hooks = [SpliceHook(capture, masks, observers)] + guide
            z_prev = sampler_step(z_prev, eps_prev, t, sched)
        eps = _noise(backend, z, t, prompt, uncond, guidance_scale, cur_hooks + list(hooks))
        z = sampler_step(z, eps, t, sched)
    return z
