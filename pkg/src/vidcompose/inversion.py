"""Balanced partial inversion: invert a frame only part way up the noise chain."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import (
    EXCEPTIONAL,
    DiffusionSchedule,
    TextCondition,
    inverter_step,
    sampler_step,
)
from .errors import BackendFailure, InvalidTb, NonFinite

SHALLOW = "shallow"
DEEP = "deep"
_DISPARITY_FRACTION = {SHALLOW: 9 / 20, DEEP: 15 / 20}


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def default_t_b(disparity: str, T: int) -> int:
    """Default inversion depth for a shallow (colour/lighting) or deep (domain) gap.

    At ``T = 20`` this gives 9 and 15 steps.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    try:
        frac = _DISPARITY_FRACTION[disparity]
    except KeyError:
        raise ValueError(f"disparity must be 'shallow' or 'deep', got {disparity!r}") from None
    return min(max(round_half_up(T * frac), 1), T)


@dataclass
class InversionTrajectory:
    """Latents ``z_0 .. z_{t_b}`` and the noise used for each step.

    ``eps[k]`` is the noise used to move from ``latents[k]`` to
    ``latents[k + 1]`` (inversion step ``k + 1``). Generation re-predicts its
    own noise; ``eps`` is kept for replay checks and debugging.
    """

    latents: list
    t_b: int
    condition: TextCondition
    eps: list = field(default_factory=list, repr=False)

    @property
    def initial_point(self) -> np.ndarray:
        return self.latents[-1]

    def replay(self, sched: DiffusionSchedule) -> np.ndarray:
        """Walk back down the trajectory with the stored noise; returns the reconstructed ``z_0``."""
        z = self.latents[-1]
        for t in range(self.t_b, 0, -1):
            z = sampler_step(z, self.eps[t - 1], t, sched)
        return z

    def save(self, directory) -> Path:
        """Spill latents as raw float64 arrays plus a small JSON header."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stack = np.stack(self.latents)
        stack.astype("<f8").tofile(directory / "latents.f64")
        header = {
            "shape": list(stack.shape),
            "dtype": "<f8",
            "t_b": self.t_b,
            "condition_mode": self.condition.mode,
        }
        (directory / "header.json").write_text(json.dumps(header, indent=2, sort_keys=True))
        return directory


def invert_partial(
    frame,
    t_b: int,
    backend,
    sched: DiffusionSchedule,
    condition: TextCondition | None = None,
) -> InversionTrajectory:
    """Invert ``frame`` for ``t_b`` steps under the null (exceptional) condition.

    ``t_b == T`` is a full inversion; the balanced regime is ``0 < t_b < T``.
    """
    if int(t_b) != t_b or not 0 < t_b <= sched.T:
        raise InvalidTb(f"t_b must be in [1, {sched.T}], got {t_b}")
    t_b = int(t_b)
    if condition is None:
        condition = backend.embed_text("", EXCEPTIONAL)
    try:
        z = np.asarray(backend.encode(frame), dtype=np.float64)
    except Exception as exc:
        raise BackendFailure(f"encode failed: {exc}") from exc
    latents = [z]
    eps_list = []
    for t in range(1, t_b + 1):
        try:
            eps = np.asarray(backend.predict_noise(z, t, [condition])[0], dtype=np.float64)
        except Exception as exc:
            raise BackendFailure(f"predict_noise failed at inversion step {t}: {exc}") from exc
        if not np.all(np.isfinite(eps)):
            raise NonFinite(f"backend returned non-finite noise at inversion step {t}")
        z = inverter_step(z, eps, t, sched)
        eps_list.append(eps)
        latents.append(z)
    return InversionTrajectory(latents, t_b, condition, eps_list)
