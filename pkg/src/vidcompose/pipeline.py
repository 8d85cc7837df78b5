"""Frame-by-frame cascade: invert, generate with IFA, decode, restore the background.

Frame ``i > 0`` uses the finished output frame ``i - 1`` as its IFA partner.
The ablation ladder is expressed as cumulative stage sets.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .compositing import WORKING_RESOLUTION, as_clip, as_masks, replace_background
from .diffusion import PROMPT, make_schedule
from .errors import BackendFailure, ConfigInvalid, LengthMismatch, VidComposeError
from .ifa import IfaWindow, generate_frame
from .inversion import SHALLOW, default_t_b, invert_partial, round_half_up
from .metrics import MetricsReport, evaluate

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SCRATCH_ENV = "VIDCOMPOSE_SCRATCH"

BPI = "bpi"
CROSS_ATTENTION = "cross_attention"
IFA = "ifa"
BG_REPLACE = "bg_replace"
ALL_STAGES = frozenset({BPI, CROSS_ATTENTION, IFA, BG_REPLACE})

# (arm name, stages) in ladder order; each arm adds one stage to the previous one
ABLATION_ARMS = (
    ("baseline", frozenset()),
    ("bpi", frozenset({BPI})),
    ("cross", frozenset({BPI, CROSS_ATTENTION})),
    ("ifa", frozenset({BPI, CROSS_ATTENTION, IFA})),
    ("bg", ALL_STAGES),
)

TAU_BAND = (3 / 20, 13 / 20)


def default_tau(T: int, t_b: int) -> int:
    """Middle of the usable operating band (8 of 20 steps), never above ``t_b``."""
    return max(1, min(round_half_up(T * 8 / 20), t_b))


# A post-process receives (frame, index) and returns a frame; the default is a no-op.
PostProcess = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class PipelineConfig:
    T: int = 20
    t_b: Optional[int] = None
    disparity: Optional[str] = None
    tau: Optional[int] = None
    guidance_scale: float = 7.5
    cross_attn_strength: float = 0.8
    seed: int = 0
    stages: frozenset = ALL_STAGES
    prompt: str = ""
    resolution: tuple = WORKING_RESOLUTION

    def __post_init__(self):
        object.__setattr__(self, "stages", frozenset(self.stages))
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))
        self.validate()

    # resolved knobs -----------------------------------------------------------
    @property
    def resolved_t_b(self) -> int:
        if self.t_b is not None:
            return self.t_b
        return default_t_b(self.disparity or SHALLOW, self.T)

    @property
    def resolved_tau(self) -> int:
        return self.tau if self.tau is not None else default_tau(self.T, self.resolved_t_b)

    @property
    def effective_t_b(self) -> int:
        """Inversion depth actually used: full inversion unless BPI is on."""
        return self.resolved_t_b if BPI in self.stages else self.T

    def validate(self):
        if int(self.T) != self.T or self.T < 1:
            raise ConfigInvalid(f"T must be a positive integer, got {self.T}")
        if self.disparity not in (None, "shallow", "deep"):
            raise ConfigInvalid(f"disparity must be 'shallow' or 'deep', got {self.disparity!r}")
        t_b, tau = self.resolved_t_b, self.resolved_tau
        if not 1 <= tau <= t_b <= self.T:
            raise ConfigInvalid(f"need 1 <= tau <= t_b <= T, got tau={tau}, t_b={t_b}, T={self.T}")
        if not self.guidance_scale >= 1.0:
            raise ConfigInvalid(f"guidance_scale must be >= 1, got {self.guidance_scale}")
        if not 0.0 <= self.cross_attn_strength <= 1.0:
            raise ConfigInvalid(f"cross_attn_strength must be in [0, 1], got {self.cross_attn_strength}")
        unknown = self.stages - ALL_STAGES
        if unknown:
            raise ConfigInvalid(f"unknown stages {sorted(unknown)}")
        if IFA in self.stages and BPI not in self.stages:
            raise ConfigInvalid("the ifa stage requires the bpi stage")
        if len(self.resolution) != 2 or min(self.resolution) < 1:
            raise ConfigInvalid(f"resolution must be (height, width), got {self.resolution}")

    def with_stages(self, stages) -> "PipelineConfig":
        return dataclasses.replace(self, stages=frozenset(stages))

    def to_dict(self) -> dict:
        """Snapshot with t_b and tau resolved to the values actually used."""
        d = dataclasses.asdict(self)
        d["t_b"] = self.resolved_t_b
        d["tau"] = self.resolved_tau
        d["stages"] = sorted(self.stages)
        d["resolution"] = list(self.resolution)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigInvalid(f"unknown config keys {sorted(unknown)}")
        d = dict(d)
        if "stages" in d:
            d["stages"] = frozenset(d["stages"])
        if "resolution" in d:
            d["resolution"] = tuple(d["resolution"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from None

    def effective(self) -> dict:
        return {
            "T": self.T,
            "t_b": self.effective_t_b,
            "tau": min(self.resolved_tau, self.effective_t_b),
            "guidance_scale": self.guidance_scale,
            "cross_attn_strength": self.cross_attn_strength,
            "cross_attention": CROSS_ATTENTION in self.stages,
            "ifa": IFA in self.stages,
            "bg_replace": BG_REPLACE in self.stages,
        }


def frame_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint32)[0])


@dataclass
class RunManifest:
    config: dict
    effective: dict
    backend: dict
    frames: list = field(default_factory=list)
    output_paths: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    created_utc: str = ""
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigInvalid(f"unsupported manifest schema {d.get('schema_version')}")
        return cls(**d)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls.from_json(Path(path).read_text())

    def reproducible_view(self) -> dict:
        """Manifest content with wall-clock fields removed."""
        d = self.to_dict()
        d.pop("created_utc")
        d["frames"] = [{k: v for k, v in f.items() if k != "seconds"} for f in d["frames"]]
        return d


def backend_identity(backend) -> dict:
    ident = getattr(backend, "identity", None)
    if ident is None:
        ident = {"name": getattr(backend, "name", type(backend).__name__)}
    return dict(ident)


def _scratch_root(scratch_dir):
    if scratch_dir is not None:
        return Path(scratch_dir)
    env = os.environ.get(SCRATCH_ENV)
    return Path(env) if env else None


def run_pipeline(
    composite,
    masks,
    prompt: str,
    config: PipelineConfig,
    backend,
    *,
    background=None,
    scratch_dir=None,
    save_latents: bool = False,
    postprocess: Optional[PostProcess] = None,
    observers: Sequence = (),
):
    """Harmonise a composite clip. Returns ``(outputs, manifest)``.

    ``background`` defaults to the composite itself, whose unmasked pixels are
    the reference background. On failure a :class:`BackendFailure` carrying
    the frame index is raised; finished frames are attached as
    ``exc.partial_outputs`` and written to the scratch directory if one is
    configured (argument or ``VIDCOMPOSE_SCRATCH``).
    """
    composite = as_clip(composite)
    masks = as_masks(masks)
    if len(masks) != len(composite):
        raise LengthMismatch(f"{len(composite)} frames vs {len(masks)} masks")
    background = composite if background is None else as_clip(background)
    if len(background) != len(composite):
        raise LengthMismatch(f"{len(composite)} frames vs {len(background)} background frames")
    config = dataclasses.replace(config, prompt=prompt)
    eff = config.effective()
    sched = make_schedule(config.T)
    window = IfaWindow(eff["tau"], eff["t_b"])
    cond = backend.embed_text(prompt, PROMPT)
    uncond = backend.embed_text("", PROMPT)
    scratch = _scratch_root(scratch_dir)

    manifest = RunManifest(
        config=config.to_dict(),
        effective=eff,
        backend=backend_identity(backend),
        created_utc=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    outputs = []
    for i in range(len(composite)):
        start = time.perf_counter()
        seed_i = frame_seed(config.seed, i)
        splices = []
        try:
            if hasattr(backend, "set_seed"):
                backend.set_seed(seed_i)
            traj = invert_partial(composite[i], eff["t_b"], backend, sched)
            prev = None
            if eff["ifa"] and i > 0:
                prev = invert_partial(outputs[i - 1], eff["t_b"], backend, sched)
            z0 = generate_frame(
                traj.initial_point,
                prev,
                cond,
                window,
                backend,
                sched,
                masks[i],
                guidance_scale=config.guidance_scale,
                cross_attention=eff["cross_attention"],
                cross_strength=config.cross_attn_strength,
                uncond=uncond,
                observers=[lambda *a: splices.append(a[:2])] + list(observers),
            )
            out = np.clip(np.asarray(backend.decode(z0), dtype=np.float64), 0.0, 1.0)
        except Exception as exc:
            _preserve(scratch, outputs)
            if isinstance(exc, BackendFailure):
                err = BackendFailure(str(exc.args[0]) if exc.args else str(exc), frame_index=i)
            elif isinstance(exc, VidComposeError):
                exc.frame_index = i
                exc.partial_outputs = list(outputs)
                raise
            else:
                err = BackendFailure(f"{type(exc).__name__}: {exc}", frame_index=i)
            err.partial_outputs = list(outputs)
            raise err from exc
        if eff["bg_replace"]:
            out = replace_background(out, background[i], masks[i])
        if postprocess is not None:
            out = postprocess(out, i)
        outputs.append(out)
        if scratch is not None and save_latents:
            traj.save(scratch / "latents" / f"frame_{i:04d}")
        manifest.frames.append(
            {
                "index": i,
                "seed": seed_i,
                "ifa_splices": len(splices),
                "seconds": round(time.perf_counter() - start, 6),
            }
        )
        logger.debug("frame %d done (%d IFA splices)", i, len(splices))
    return np.stack(outputs), manifest


def _preserve(scratch, outputs):
    if scratch is None or not outputs:
        return
    from .io import write_frames

    write_frames(scratch / "partial", outputs)
    logger.warning("pipeline failed; %d finished frames kept in %s", len(outputs), scratch / "partial")


@dataclass
class AblationArm:
    name: str
    stages: frozenset
    outputs: np.ndarray
    metrics: MetricsReport
    manifest: RunManifest


def run_ablation(
    composite,
    masks,
    prompt: str,
    backend,
    base_config: PipelineConfig,
    *,
    background=None,
    flows=None,
    extractor=None,
) -> list:
    """Run the five cumulative ladder arms with a shared seed.

    Metrics use ``flows`` (TL) and ``extractor`` (SL, against ``background``
    or the composite) when supplied.
    """
    composite = as_clip(composite)
    reference = composite if background is None else as_clip(background)
    arms = []
    for name, stages in ABLATION_ARMS:
        cfg = base_config.with_stages(stages)
        outputs, manifest = run_pipeline(composite, masks, prompt, cfg, backend, background=background)
        report = evaluate(outputs, reference, flows, extractor)
        manifest.metrics = report.to_dict()
        arms.append(AblationArm(name, stages, outputs, report, manifest))
    return arms
