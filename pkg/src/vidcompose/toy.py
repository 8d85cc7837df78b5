"""Deterministic stand-in for a pretrained latent diffusion model.

The toy backend is small enough to run a whole pipeline on the CPU in
milliseconds and exact enough to assert bitwise properties:

* ``encode`` is a pixel-unshuffle (space-to-depth) and ``decode`` its inverse,
  so ``decode(encode(x)) == x`` bit for bit.
* the noise prediction is an affine map of the latent (fixed random channel
  mix, a step-dependent bias and an additive per-prompt offset) plus a
  residual from a two-layer self-attention stack. The attention maps are
  real softmax outputs and pass through the hook chain before being used, so
  attention edits change the prediction.
"""
from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from .diffusion import (
    EXCEPTIONAL,
    PROMPT,
    AttentionHook,
    AttentionRecord,
    LayerInfo,
    TextCondition,
    run_hooks,
)


def _text_seed(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def _softmax(x: np.ndarray) -> np.ndarray:
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


class ToyBackend:
    name = "toy"
    concurrent_safe = True
    reconstruction_tolerance = 0.0

    def __init__(
        self,
        seed: int = 0,
        factor: int = 2,
        pools: Sequence[int] = (2, 4),
        heads: int = 2,
        head_dim: int = 8,
        mix_scale: float = 0.05,
        bias_scale: float = 0.01,
        cond_scale: float = 0.01,
        attn_gain: float = 0.2,
        attn_temperature: float = 4.0,
    ):
        self.seed = int(seed)
        self.factor = int(factor)
        self.pools = tuple(int(p) for p in pools)
        self.heads = heads
        self.head_dim = head_dim
        self.cond_scale = cond_scale
        self.attn_temperature = attn_temperature
        c = self.channels = 3 * self.factor**2

        rng = np.random.default_rng(self.seed)
        self._mix = rng.standard_normal((c, c)) * (mix_scale / np.sqrt(c))
        self._bias = rng.standard_normal(c) * bias_scale
        self._layers = []
        for _ in self.pools:
            wq = rng.standard_normal((heads, c, head_dim)) / np.sqrt(c)
            wk = rng.standard_normal((heads, c, head_dim)) / np.sqrt(c)
            wv = rng.standard_normal((heads, c, head_dim)) / np.sqrt(c)
            wo = rng.standard_normal((heads, head_dim, c)) * (attn_gain / np.sqrt(heads * head_dim))
            self._layers.append((wq, wk, wv, wo))

    def __repr__(self):
        return f"ToyBackend(seed={self.seed}, factor={self.factor}, pools={self.pools})"

    @property
    def identity(self) -> dict:
        return {"name": self.name, "seed": self.seed, "factor": self.factor, "pools": list(self.pools)}

    # --- codec ---------------------------------------------------------------

    def encode(self, frame) -> np.ndarray:
        x = np.asarray(frame, dtype=np.float64)
        h, w, ch = x.shape
        f = self.factor
        if h % f or w % f:
            raise ValueError(f"frame size {h}x{w} is not divisible by the codec factor {f}")
        x = x.reshape(h // f, f, w // f, f, ch).transpose(0, 2, 1, 3, 4)
        return x.reshape(h // f, w // f, f * f * ch)

    def decode(self, latent) -> np.ndarray:
        z = np.asarray(latent, dtype=np.float64)
        gh, gw, c = z.shape
        f = self.factor
        x = z.reshape(gh, gw, f, f, c // (f * f)).transpose(0, 2, 1, 3, 4)
        return np.clip(x.reshape(gh * f, gw * f, c // (f * f)), 0.0, 1.0)

    # --- text ----------------------------------------------------------------

    def embed_text(self, prompt: str, mode: str = PROMPT) -> TextCondition:
        if mode == EXCEPTIONAL:
            return TextCondition(EXCEPTIONAL, prompt, np.zeros(self.channels))
        rng = np.random.default_rng([self.seed, _text_seed(prompt)])
        return TextCondition(PROMPT, prompt, rng.standard_normal(self.channels) * self.cond_scale)

    # --- attention -------------------------------------------------------------

    def layer_catalog(self, latent_shape) -> list[LayerInfo]:
        gh, gw = latent_shape[:2]
        out = []
        for i, p in enumerate(self.pools):
            if gh % p or gw % p:
                raise ValueError(f"latent grid {gh}x{gw} is not divisible by pool {p}")
            out.append(LayerInfo(i, "self", (gh // p, gw // p)))
        return out

    def predict_noise(
        self,
        latent,
        step: int,
        conditions: Sequence[TextCondition],
        hooks: Sequence[AttentionHook] = (),
    ) -> np.ndarray:
        z = np.asarray(latent, dtype=np.float64)
        gh, gw, c = z.shape
        if c != self.channels:
            raise ValueError(f"latent has {c} channels, backend expects {self.channels}")
        batch = len(conditions)

        base = z @ self._mix.T + self._bias * (1.0 + 0.01 * step)
        eps = np.stack([base + np.asarray(cond.embedding) for cond in conditions])

        for info, (wq, wk, wv, wo), p in zip(self.layer_catalog(z.shape), self._layers, self.pools):
            feats = z.reshape(gh // p, p, gw // p, p, c).mean(axis=(1, 3)).reshape(-1, c)
            q = np.einsum("nc,hcd->hnd", feats, wq)
            k = np.einsum("nc,hcd->hnd", feats, wk)
            v = np.einsum("nc,hcd->hnd", feats, wv)
            attn = _softmax(self.attn_temperature * q @ k.transpose(0, 2, 1) / np.sqrt(self.head_dim))
            attn = np.broadcast_to(attn, (batch,) + attn.shape).copy()
            record = AttentionRecord(info.layer_id, step, info.kind, attn, info.grid)
            attn = run_hooks(hooks, record)
            out = np.einsum("bhnm,hmd,hdc->bnc", attn, v, wo)
            out = out.reshape(batch, gh // p, gw // p, c)
            eps += np.repeat(np.repeat(out, p, axis=1), p, axis=2)
        return eps


def toy_backend(seed: int = 0, **kwargs) -> ToyBackend:
    return ToyBackend(seed=seed, **kwargs)
