"""Noise schedule, deterministic DDIM step math and the denoiser backend contract.

A backend wraps a pretrained latent diffusion model. The pipeline only needs
the handful of capabilities in :class:`DenoiserBackend`; see the README for the
adapter contract third parties implement.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import InvalidT, NonFinite, ShapeMismatch

TRAIN_STEPS = 1000
BETA_START = 0.00085
BETA_END = 0.012


@dataclass(frozen=True)
class DiffusionSchedule:
    """Cumulative signal rates ``alpha_bar[0..T]`` with ``alpha_bar[0] == 1``."""

    T: int
    alpha_bar: np.ndarray = field(repr=False)

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.shape != (self.T + 1,):
            raise ValueError(f"alpha_bar needs {self.T + 1} entries, got {ab.shape}")
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)


def make_schedule(T: int) -> DiffusionSchedule:
    """Scaled-linear schedule of the usual 1000-step training chain, sampled at ``T`` points.

    Positions ``k * 1000 / T`` are interpolated in log space, which keeps the
    result strictly decreasing for any ``T``.
    """
    if int(T) != T or T < 1:
        raise InvalidT(f"T must be a positive integer, got {T!r}")
    T = int(T)
    betas = np.linspace(BETA_START**0.5, BETA_END**0.5, TRAIN_STEPS, dtype=np.float64) ** 2
    log_ab = np.concatenate([[0.0], np.cumsum(np.log1p(-betas))])
    pos = np.arange(T + 1) * (TRAIN_STEPS / T)
    ab = np.exp(np.interp(pos, np.arange(TRAIN_STEPS + 1), log_ab))
    ab[0] = 1.0
    return DiffusionSchedule(T, ab)


def _check_step(t: int, sched: DiffusionSchedule):
    if not 1 <= t <= sched.T:
        raise ValueError(f"step {t} outside [1, {sched.T}]")


def _finite(z: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(z)):
        raise NonFinite(f"{what} produced non-finite values")
    return z


def sampler_step(z_t, eps, t: int, sched: DiffusionSchedule) -> np.ndarray:
    """One deterministic DDIM update ``z_t -> z_{t-1}``."""
    _check_step(t, sched)
    z_t = np.asarray(z_t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z_t.shape != eps.shape:
        raise ShapeMismatch(f"latent {z_t.shape} vs noise {eps.shape}")
    a_t, a_prev = sched.alpha_bar[t], sched.alpha_bar[t - 1]
    x0 = (z_t - np.sqrt(1.0 - a_t) * eps) / np.sqrt(a_t)
    return _finite(np.sqrt(a_prev) * x0 + np.sqrt(1.0 - a_prev) * eps, "sampler_step")


def inverter_step(z_prev, eps, t: int, sched: DiffusionSchedule) -> np.ndarray:
    """Algebraic inverse of :func:`sampler_step`: ``z_{t-1} -> z_t`` for the same noise."""
    _check_step(t, sched)
    z_prev = np.asarray(z_prev, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z_prev.shape != eps.shape:
        raise ShapeMismatch(f"latent {z_prev.shape} vs noise {eps.shape}")
    a_t, a_prev = sched.alpha_bar[t], sched.alpha_bar[t - 1]
    x0 = (z_prev - np.sqrt(1.0 - a_prev) * eps) / np.sqrt(a_prev)
    return _finite(np.sqrt(a_t) * x0 + np.sqrt(1.0 - a_t) * eps, "inverter_step")


# --- backend contract -------------------------------------------------------

PROMPT = "prompt"
EXCEPTIONAL = "exceptional"


@dataclass(frozen=True)
class TextCondition:
    """Text conditioning. ``mode == "exceptional"`` carries the backend's null embedding."""

    mode: str
    prompt_text: str
    embedding: Any = field(repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in (PROMPT, EXCEPTIONAL):
            raise ValueError(f"unknown conditioning mode {self.mode!r}")


@dataclass(frozen=True)
class LayerInfo:
    """One entry of a backend's attention-layer catalog."""

    layer_id: int
    kind: str  # "self" or "cross"
    grid: tuple  # query grid (height, width)

    @property
    def n_queries(self) -> int:
        return self.grid[0] * self.grid[1]


@dataclass
class AttentionRecord:
    """A post-softmax attention map as seen by hooks.

    ``map`` has shape ``(..., n_q, n_k)``; leading axes are batch (guidance
    branches) and heads.
    """

    layer: int
    step: int
    kind: str
    map: np.ndarray
    grid: tuple


# A hook receives a record and returns a replacement map, or None to keep it.
AttentionHook = Callable[[AttentionRecord], Optional[np.ndarray]]


@runtime_checkable
class DenoiserBackend(Protocol):
    name: str
    concurrent_safe: bool
    reconstruction_tolerance: float

    def encode(self, frame: np.ndarray) -> np.ndarray: ...

    def decode(self, latent: np.ndarray) -> np.ndarray: ...

    def embed_text(self, prompt: str, mode: str = PROMPT) -> TextCondition: ...

    def layer_catalog(self, latent_shape: tuple) -> list[LayerInfo]: ...

    def predict_noise(
        self,
        latent: np.ndarray,
        step: int,
        conditions: Sequence[TextCondition],
        hooks: Sequence[AttentionHook] = (),
    ) -> np.ndarray:
        """Return noise of shape ``(len(conditions), *latent.shape)``.

        All conditions are evaluated as one batch, so each hook sees each
        attention layer exactly once per call.
        """
        ...


def run_hooks(hooks: Sequence[AttentionHook], record: AttentionRecord) -> np.ndarray:
    """Thread a map through a hook chain; used by backend implementations."""
    for hook in hooks:
        out = hook(record)
        if out is not None:
            if out.shape != record.map.shape:
                raise ShapeMismatch(f"hook returned {out.shape}, expected {record.map.shape}")
            record.map = out
    return record.map


def guided_noise(
    backend: DenoiserBackend,
    latent: np.ndarray,
    step: int,
    cond: TextCondition,
    uncond: TextCondition | None = None,
    guidance_scale: float = 1.0,
    hooks: Sequence[AttentionHook] = (),
) -> np.ndarray:
    """Classifier-free guided noise. With ``guidance_scale == 1`` only ``cond`` is evaluated."""
    if guidance_scale == 1.0 or uncond is None:
        return backend.predict_noise(latent, step, [cond], hooks)[0]
    eps_u, eps_c = backend.predict_noise(latent, step, [uncond, cond], hooks)
    return eps_u + guidance_scale * (eps_c - eps_u)
