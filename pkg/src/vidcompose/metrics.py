"""Temporal Loss and Semantic Loss, computed over pluggable flow and feature providers.

Temporal Loss (TL) is the mean squared difference between each frame and its
flow-warped predecessor, restricted to pixels the warp can actually see.
Semantic Loss (SL) compares Gram matrices of output and reference-background
features, so it measures style statistics and ignores spatial layout.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyValidRegion, ExtractorFailure, LengthMismatch

logger = logging.getLogger(__name__)

DISPLAY_SCALE = 1e3


@dataclass
class FlowField:
    """Backward flow: pixel ``(y, x)`` of the later frame is found at ``(y + dy, x + dx)``
    in the earlier one. ``flow[..., 0]`` is dx, ``flow[..., 1]`` is dy."""

    flow: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        self.flow = np.asarray(self.flow, dtype=np.float64)
        if self.flow.ndim != 3 or self.flow.shape[2] != 2:
            raise DimensionMismatch(f"flow must be (H, W, 2), got {self.flow.shape}")
        if self.valid is None:
            self.valid = np.ones(self.flow.shape[:2], dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.flow.shape[:2]:
            raise DimensionMismatch("validity bitmap does not match flow dims")
        if not np.all(np.isfinite(self.flow[self.valid])):
            raise ValueError("flow displacements must be finite where valid")
        self.flow = np.where(self.valid[..., None], self.flow, 0.0)

    @property
    def shape(self):
        return self.flow.shape[:2]

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width, 2)))


def warp(frame, flow: FlowField):
    """Bilinear backward warp of ``frame`` along ``flow``.

    Returns ``(warped, valid)``; samples falling outside the source frame are
    invalid and their warped value is 0.
    """
    img = np.asarray(frame, dtype=np.float64)
    h, w = img.shape[:2]
    if flow.shape != (h, w):
        raise DimensionMismatch(f"frame {h}x{w} vs flow {flow.shape[0]}x{flow.shape[1]}")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = xx + flow.flow[..., 0]
    sy = yy + flow.flow[..., 1]
    valid = flow.valid & (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)

    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = sx - x0
    wy = sy - y0
    if img.ndim == 3:
        wx = wx[..., None]
        wy = wy[..., None]
    top = img[y0, x0] * (1 - wx) + img[y0, x1] * wx
    bot = img[y1, x0] * (1 - wx) + img[y1, x1] * wx
    out = top * (1 - wy) + bot * wy
    out = np.where(valid[..., None] if img.ndim == 3 else valid, out, 0.0)
    return out, valid


def temporal_losses(outputs, flows: Sequence[FlowField]) -> list:
    """Per-pair masked MSE; ``None`` for pairs whose valid region is empty."""
    outputs = [np.asarray(f, dtype=np.float64) for f in outputs]
    if len(flows) != len(outputs) - 1:
        raise LengthMismatch(f"{len(outputs)} frames need {len(outputs) - 1} flows, got {len(flows)}")
    pairs = []
    for i, flow in enumerate(flows):
        warped, valid = warp(outputs[i], flow)
        if not valid.any():
            logger.warning("pair %d -> %d has no valid warped pixels; skipped", i, i + 1)
            pairs.append(None)
            continue
        diff = (outputs[i + 1] - warped)[valid]
        pairs.append(float(np.mean(diff**2)))
    return pairs


def temporal_loss(outputs, flows: Sequence[FlowField]) -> float:
    pairs = temporal_losses(outputs, flows)
    if len(pairs) == 0:
        return 0.0
    kept = [p for p in pairs if p is not None]
    if not kept:
        raise EmptyValidRegion("no frame pair has a valid warped region")
    return float(np.mean(kept))


def gram(features) -> np.ndarray:
    """Normalised Gram matrix ``F F^T / (C N)`` of a ``(C, N)`` feature map.

    ``(C, H, W)`` inputs are flattened over space first.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    elif f.ndim > 2:
        f = f.reshape(f.shape[0], -1)
    c, n = f.shape
    if c < 1 or n < 1:
        raise ValueError(f"empty feature map {f.shape}")
    return (f @ f.T) / (c * n)


class FeatureExtractor(Protocol):
    """Maps a frame to named ``(C, N)`` or ``(C, H, W)`` feature arrays, one per layer."""

    layers: tuple

    def __call__(self, frame: np.ndarray) -> dict: ...


class IdentityExtractor:
    """Raw pixels as features: one layer whose channels are the frame's channels."""

    layers = ("pixels",)
    concurrent_safe = True

    def __call__(self, frame):
        f = np.asarray(frame, dtype=np.float64)
        if f.ndim == 2:
            f = f[..., None]
        return {"pixels": f.transpose(2, 0, 1).reshape(f.shape[2], -1)}


class PyramidExtractor:
    """Network-free default: colour and gradient channels at several scales.

    This is a cheap stand-in for a perceptual network; supply a real extractor
    for numbers comparable with published results.
    """

    concurrent_safe = True

    def __init__(self, levels: int = 4):
        self.levels = levels
        self.layers = tuple(f"level{k}" for k in range(levels))

    def __call__(self, frame):
        img = np.asarray(frame, dtype=np.float64)
        if img.ndim == 2:
            img = img[..., None]
        out = {}
        for name in self.layers:
            h, w = img.shape[:2]
            if min(h, w) < 2:
                break
            gy, gx = np.gradient(img.mean(axis=2))
            feats = np.concatenate([img, gx[..., None], gy[..., None]], axis=2)
            out[name] = feats.transpose(2, 0, 1).reshape(feats.shape[2], -1)
            img = img[: h // 2 * 2, : w // 2 * 2]
            img = img.reshape(h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3))
        return out


def _features(extractor, frame) -> dict:
    try:
        feats = extractor(frame)
    except Exception as exc:
        raise ExtractorFailure(f"feature extractor failed: {exc}") from exc
    if not isinstance(feats, dict):
        feats = dict(enumerate(feats))
    return feats


def semantic_losses(outputs, backgrounds, extractor: FeatureExtractor) -> list:
    if len(outputs) != len(backgrounds):
        raise LengthMismatch(f"{len(outputs)} outputs vs {len(backgrounds)} backgrounds")
    per_frame = []
    for out, bg in zip(outputs, backgrounds):
        fo = _features(extractor, out)
        fb = _features(extractor, bg)
        if fo.keys() != fb.keys():
            raise ExtractorFailure("extractor returned different layer sets for output and background")
        total = 0.0
        for layer in fo:
            d = gram(fo[layer]) - gram(fb[layer])
            total += float(np.sum(d * d))
        per_frame.append(total)
    return per_frame


def semantic_loss(outputs, backgrounds, extractor: FeatureExtractor) -> float:
    """Squared Frobenius Gram distance summed over layers, averaged over frames."""
    return float(np.mean(semantic_losses(outputs, backgrounds, extractor)))


# --- flow providers ----------------------------------------------------------

FlowAdapter = Callable[[np.ndarray, np.ndarray], FlowField]


class FarnebackFlow:
    """Dense flow from OpenCV's Farneback estimator (needs ``opencv-python-headless``).

    Called as ``adapter(earlier, later)``; returns the backward flow that maps
    ``later`` onto ``earlier``.
    """

    concurrent_safe = True

    def __init__(self, pyr_scale=0.5, levels=3, winsize=15, iterations=3, poly_n=5, poly_sigma=1.2):
        self.params = (pyr_scale, levels, winsize, iterations, poly_n, poly_sigma, 0)

    def __call__(self, earlier, later) -> FlowField:
        import cv2

        def gray(f):
            f = np.asarray(f, dtype=np.float64)
            if f.ndim == 3:
                f = f.mean(axis=2)
            return np.round(np.clip(f, 0, 1) * 255).astype(np.uint8)

        flow = cv2.calcOpticalFlowFarneback(gray(later), gray(earlier), None, *self.params)
        return FlowField(flow.astype(np.float64))


def flows_for(frames, adapter: FlowAdapter) -> list:
    return [adapter(frames[i], frames[i + 1]) for i in range(len(frames) - 1)]


# --- reporting -----------------------------------------------------------------

@dataclass
class MetricsReport:
    """Raw metric values; :meth:`formatted` applies the x10^3 display scaling."""

    temporal_loss: Optional[float] = None
    semantic_loss: Optional[float] = None
    temporal_pairs: list = field(default_factory=list)
    semantic_frames: list = field(default_factory=list)
    scale_note: str = "values are raw; tables display them multiplied by 10^3"

    def to_dict(self) -> dict:
        return {
            "temporal_loss": self.temporal_loss,
            "semantic_loss": self.semantic_loss,
            "temporal_pairs": list(self.temporal_pairs),
            "semantic_frames": list(self.semantic_frames),
            "scale_note": self.scale_note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    def formatted(self) -> dict:
        return {"TL": _scaled(self.temporal_loss), "SL": _scaled(self.semantic_loss)}


def _scaled(v):
    return "n/a" if v is None else f"{v * DISPLAY_SCALE:.2f}"


def evaluate(outputs, backgrounds=None, flows=None, extractor=None) -> MetricsReport:
    """Compute whichever metrics the inputs allow."""
    report = MetricsReport()
    if flows is not None:
        report.temporal_pairs = temporal_losses(outputs, flows)
        report.temporal_loss = temporal_loss(outputs, flows)
    if backgrounds is not None and extractor is not None:
        report.semantic_frames = semantic_losses(outputs, backgrounds, extractor)
        report.semantic_loss = float(np.mean(report.semantic_frames))
    return report


def format_table(rows: Sequence[tuple]) -> str:
    """Render ``(name, MetricsReport)`` rows as a plain-text table scaled by 10^3."""
    header = f"{'Metric x10^3':<14}" + "".join(f"{name:>12}" for name, _ in rows)
    tl = f"{'TL (lower)':<14}" + "".join(f"{r.formatted()['TL']:>12}" for _, r in rows)
    sl = f"{'SL (lower)':<14}" + "".join(f"{r.formatted()['SL']:>12}" for _, r in rows)
    return "\n".join([header, tl, sl])
