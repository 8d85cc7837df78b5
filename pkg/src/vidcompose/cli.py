"""Batch command line front end.

Subcommands::

    vidcompose compose  --fg DIR --bg DIR --mask DIR --prompt TEXT --out DIR [...]
    vidcompose ablate   --fg DIR --bg DIR --mask DIR --prompt TEXT --out DIR [...]
    vidcompose evaluate --outputs DIR --bg DIR (--flows DIR | --flow-adapter NAME) [...]

Values come from ``--config FILE`` (YAML or JSON) first; flags override them.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 backend error,
5 frame-count mismatch.
"""
from __future__ import annotations

import argparse
import importlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import io as vio
from .compositing import EmptyPlacement, Placement, composite_from_layers
from .errors import (
    BackendFailure,
    ConfigInvalid,
    DimensionMismatch,
    ExtractorFailure,
    InvalidPlacement,
    LengthMismatch,
    NonFinite,
    VidComposeError,
)
from .metrics import (
    FarnebackFlow,
    IdentityExtractor,
    MetricsReport,
    PyramidExtractor,
    evaluate as compute_metrics,
    flows_for,
    format_table,
)
from .pipeline import ABLATION_ARMS, PipelineConfig, RunManifest, run_ablation, run_pipeline
from .toy import ToyBackend

logger = logging.getLogger("vidcompose")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_BACKEND = 4
EXIT_LENGTH = 5

# config-file keys; anything else is rejected
CONFIG_KEYS = {
    "fg", "bg", "mask", "out", "prompt", "steps", "t_b", "tau", "disparity",
    "guidance_scale", "cross_attn_strength", "seed", "stages", "resolution",
    "placement", "backend", "metrics", "save_latents",
}
METRIC_KEYS = {"enabled", "flows", "flow_adapter", "extractor"}
PLACEMENT_KEYS = {"scale", "translate_x", "translate_y"}

# flag dest -> config key
_FLAG_KEYS = {
    "fg": "fg", "bg": "bg", "mask": "mask", "out": "out", "prompt": "prompt",
    "steps": "steps", "t_b": "t_b", "tau": "tau", "disparity": "disparity",
    "guidance_scale": "guidance_scale", "cross_strength": "cross_attn_strength",
    "seed": "seed", "save_latents": "save_latents",
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# --- plumbing ------------------------------------------------------------------

def _load_object(spec: str):
    mod, _, attr = spec.partition(":")
    if not attr:
        raise ConfigInvalid(f"adapter spec must look like 'package.module:factory', got {spec!r}")
    try:
        return getattr(importlib.import_module(mod), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigInvalid(f"cannot load adapter {spec!r}: {exc}") from None


def make_backend(spec):
    """``"toy"``, ``{"name": "toy", ...kwargs}`` or ``{"name": "pkg.mod:factory", ...kwargs}``."""
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    name = spec.pop("name", "toy")
    if name == "toy":
        try:
            return ToyBackend(**spec)
        except TypeError as exc:
            raise ConfigInvalid(f"bad toy backend options: {exc}") from None
    return _load_object(name)(**spec)


def make_flow_adapter(name):
    if name is None:
        return None
    if name == "farneback":
        return FarnebackFlow()
    return _load_object(name)()


def make_extractor(name):
    if name in (None, "pyramid"):
        return PyramidExtractor()
    if name == "identity":
        return IdentityExtractor()
    return _load_object(name)()


def _read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigInvalid("config file must hold a mapping")
    return data


def _validate_config(cfg: dict) -> dict:
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    if "metrics" in cfg:
        if not isinstance(cfg["metrics"], dict) or set(cfg["metrics"]) - METRIC_KEYS:
            raise ConfigInvalid(f"metrics section accepts only {sorted(METRIC_KEYS)}")
    if "placement" in cfg:
        if not isinstance(cfg["placement"], dict) or set(cfg["placement"]) - PLACEMENT_KEYS:
            raise ConfigInvalid(f"placement section accepts only {sorted(PLACEMENT_KEYS)}")
    return cfg


def _merge(args) -> dict:
    cfg = _read_config_file(args.config) if args.config else {}
    _validate_config(cfg)
    for dest, key in _FLAG_KEYS.items():
        val = getattr(args, dest, None)
        if val not in (None, False):
            cfg[key] = val
    if args.stages is not None:
        cfg["stages"] = [s for s in args.stages.split(",") if s]
    if args.resolution is not None:
        cfg["resolution"] = args.resolution
    place = dict(cfg.get("placement", {}))
    for dest, key in (("scale", "scale"), ("tx", "translate_x"), ("ty", "translate_y")):
        if getattr(args, dest) is not None:
            place[key] = getattr(args, dest)
    if place:
        cfg["placement"] = place
    if args.backend is not None:
        cfg["backend"] = args.backend
    metrics = dict(cfg.get("metrics", {}))
    for dest, key in (("flows", "flows"), ("flow_adapter", "flow_adapter"), ("extractor", "extractor")):
        if getattr(args, dest, None) is not None:
            metrics[key] = getattr(args, dest)
    if getattr(args, "metrics", False):
        metrics["enabled"] = True
    if metrics:
        cfg["metrics"] = metrics
    return cfg


def _parse_resolution(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    parts = str(text).lower().replace(",", "x").split("x")
    if len(parts) == 1:
        parts = parts * 2
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigInvalid(f"resolution must look like 512x512, got {text!r}") from None


def pipeline_config(cfg: dict) -> PipelineConfig:
    kwargs = {
        "T": cfg.get("steps", 20),
        "t_b": cfg.get("t_b"),
        "disparity": cfg.get("disparity"),
        "tau": cfg.get("tau"),
        "seed": cfg.get("seed", 0),
        "prompt": cfg.get("prompt", ""),
    }
    for key in ("guidance_scale", "cross_attn_strength", "stages"):
        if key in cfg:
            kwargs[key] = cfg[key]
    if "resolution" in cfg:
        kwargs["resolution"] = _parse_resolution(cfg["resolution"])
    return PipelineConfig.from_dict(kwargs)


def _require_dirs(cfg, keys):
    for key in keys:
        if not cfg.get(key):
            raise ConfigInvalid(f"missing required input '{key}'")
        if not Path(cfg[key]).is_dir():
            raise ConfigInvalid(f"{key} directory does not exist: {cfg[key]}")


def _load_composite(cfg, config: PipelineConfig):
    _require_dirs(cfg, ("fg", "bg", "mask"))
    if not cfg.get("out"):
        raise ConfigInvalid("missing required output directory 'out'")
    try:
        placement = Placement(**cfg.get("placement", {}))
    except (InvalidPlacement, TypeError) as exc:
        raise ConfigInvalid(f"bad placement: {exc}") from None
    try:
        fg = vio.read_frames(cfg["fg"])
        masks = vio.read_masks(cfg["mask"])
        bg = vio.read_frames(cfg["bg"])
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read inputs: {exc}", EXIT_IO) from None
    if not (len(fg) == len(masks) == len(bg)):
        raise LengthMismatch(f"fg has {len(fg)} frames, mask {len(masks)}, bg {len(bg)}")
    for i, (f, m) in enumerate(zip(fg, masks)):
        if f.shape[:2] != m.shape:
            raise DimensionMismatch(f"fg frame {i} is {f.shape[:2]} but its mask is {m.shape}")
    composite, placed_masks, background = composite_from_layers(fg, masks, bg, placement, config.resolution)
    return composite, placed_masks, background, placement


def _metric_sources(cfg, reference_frames, required: bool):
    metrics = cfg.get("metrics", {})
    flows = None
    if metrics.get("flows"):
        try:
            flows = vio.read_flow_dir(metrics["flows"])
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read flows: {exc}", EXIT_IO) from None
    elif metrics.get("flow_adapter"):
        adapter = make_flow_adapter(metrics["flow_adapter"])
        flows = flows_for(reference_frames, adapter)
    elif required:
        raise ConfigInvalid("no flows supplied and no flow adapter named (use --flows or --flow-adapter)")
    extractor = make_extractor(metrics.get("extractor"))
    return flows, extractor


def _inputs_record(cfg, placement) -> dict:
    return {
        "fg": str(cfg["fg"]),
        "bg": str(cfg["bg"]),
        "mask": str(cfg["mask"]),
        "placement": {"scale": placement.scale, "translate_x": placement.translate_x,
                      "translate_y": placement.translate_y},
        "backend": cfg.get("backend", "toy"),
    }


# --- subcommands -----------------------------------------------------------------

def cmd_compose(args) -> int:
    if args.from_manifest:
        cfg = _config_from_manifest(args.from_manifest)
        if args.out:
            cfg["out"] = args.out
    else:
        cfg = _merge(args)
    config = pipeline_config(cfg)
    backend = make_backend(cfg.get("backend", "toy"))
    composite, masks, background, placement = _load_composite(cfg, config)

    out = Path(cfg["out"])
    outputs, manifest = run_pipeline(
        composite, masks, config.prompt, config, backend,
        background=background,
        scratch_dir=out / "scratch" if cfg.get("save_latents") else None,
        save_latents=bool(cfg.get("save_latents")),
    )
    metrics_cfg = cfg.get("metrics", {})
    if metrics_cfg.get("enabled"):
        flows, extractor = _metric_sources(cfg, composite, required=False)
        manifest.metrics = compute_metrics(outputs, background, flows, extractor).to_dict()
    paths = vio.write_frames(out / "frames", outputs)
    manifest.output_paths = [str(p.relative_to(out)) for p in paths]
    manifest.inputs = _inputs_record(cfg, placement)
    _save_manifest(manifest, out / "manifest.json")
    vio.contact_sheet(outputs, out / "contact_sheet.png")
    print(f"wrote {len(paths)} frames to {out / 'frames'}")
    if manifest.metrics:
        print(format_table([("ours", MetricsReport.from_dict(manifest.metrics))]))
    return EXIT_OK


def _save_manifest(manifest: RunManifest, path: Path):
    manifest.save(path)


def _config_from_manifest(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"manifest not found: {path}")
    d = json.loads(path.read_text())
    inputs = d.get("inputs") or {}
    if not inputs:
        raise ConfigInvalid("manifest has no inputs record")
    c = d["config"]
    return {
        "fg": inputs["fg"], "bg": inputs["bg"], "mask": inputs["mask"],
        "placement": inputs["placement"], "backend": inputs["backend"],
        "prompt": c["prompt"], "steps": c["T"], "t_b": c["t_b"], "tau": c["tau"],
        "disparity": c["disparity"], "guidance_scale": c["guidance_scale"],
        "cross_attn_strength": c["cross_attn_strength"], "seed": c["seed"],
        "stages": c["stages"], "resolution": c["resolution"],
    }


def cmd_ablate(args) -> int:
    cfg = _merge(args)
    config = pipeline_config(cfg)
    backend = make_backend(cfg.get("backend", "toy"))
    composite, masks, background, placement = _load_composite(cfg, config)
    flows, extractor = _metric_sources(cfg, composite, required=False)
    if flows is None:
        logger.warning("no flows or flow adapter given; TL column will read n/a")

    arms = run_ablation(composite, masks, config.prompt, backend, config,
                        background=background, flows=flows, extractor=extractor)
    out = Path(cfg["out"])
    rows = []
    for arm in arms:
        arm_dir = out / arm.name
        paths = vio.write_frames(arm_dir / "frames", arm.outputs)
        arm.manifest.output_paths = [str(p.relative_to(arm_dir)) for p in paths]
        arm.manifest.inputs = _inputs_record(cfg, placement)
        _save_manifest(arm.manifest, arm_dir / "manifest.json")
        vio.contact_sheet(arm.outputs, arm_dir / "contact_sheet.png")
        rows.append((arm.name, arm.metrics))
    lines = ["arm,stages,TL_x1e3,SL_x1e3"]
    for (name, stages), (_, report) in zip(ABLATION_ARMS, rows):
        f = report.formatted()
        lines.append(f"{name},{'+'.join(sorted(stages)) or 'none'},{f['TL']},{f['SL']}")
    (out / "comparison.csv").write_text("\n".join(lines) + "\n")
    print(format_table(rows))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    for key, val in (("outputs", args.outputs), ("bg", args.bg)):
        if not val or not Path(val).is_dir():
            raise ConfigInvalid(f"{key} directory does not exist: {val}")
    try:
        outputs = vio.read_frames(args.outputs)
        bg = vio.read_frames(args.bg)
        flow_frames = vio.read_frames(args.flow_frames) if args.flow_frames else outputs
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read frames: {exc}", EXIT_IO) from None
    if len(outputs) != len(bg):
        raise LengthMismatch(f"{len(outputs)} output frames vs {len(bg)} background frames")
    if outputs[0].shape != bg[0].shape:
        raise DimensionMismatch(f"output frames {outputs[0].shape} vs background {bg[0].shape}")
    cfg = {"metrics": {"flows": args.flows, "flow_adapter": args.flow_adapter, "extractor": args.extractor}}
    flows, extractor = _metric_sources(cfg, flow_frames, required=True)
    report = compute_metrics(outputs, bg, flows, extractor)
    table = format_table([("ours", report)])
    print(table)
    report_path = Path(args.report) if args.report else Path(args.outputs).parent / "metrics.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

def _add_run_flags(p):
    p.add_argument("--config", help="YAML/JSON config file; flags override its values")
    p.add_argument("--fg", help="foreground frame directory")
    p.add_argument("--bg", help="background frame directory")
    p.add_argument("--mask", help="foreground mask directory (same file names as --fg)")
    p.add_argument("--prompt")
    p.add_argument("--out", help="output directory")
    p.add_argument("--steps", type=int, help="total diffusion steps T")
    p.add_argument("--t-b", dest="t_b", type=int, help="inversion depth")
    p.add_argument("--tau", type=int, help="lower end of the IFA window")
    p.add_argument("--disparity", choices=["shallow", "deep"], help="pick a default t_b")
    p.add_argument("--guidance-scale", type=float)
    p.add_argument("--cross-strength", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--stages", help="comma list from bpi,cross_attention,ifa,bg_replace")
    p.add_argument("--resolution", help="working resolution, e.g. 512x512")
    p.add_argument("--scale", type=float, help="foreground placement scale")
    p.add_argument("--tx", type=float, help="foreground placement x offset (pixels)")
    p.add_argument("--ty", type=float, help="foreground placement y offset (pixels)")
    p.add_argument("--backend", help="'toy' or an adapter 'package.module:factory'")
    p.add_argument("--flows", help="directory of .flo files for TL")
    p.add_argument("--flow-adapter", help="'farneback' or 'package.module:factory'")
    p.add_argument("--extractor", help="'pyramid', 'identity' or 'package.module:factory'")
    p.add_argument("--save-latents", action="store_true", help="keep inversion latents in out/scratch")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidcompose", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compose", help="harmonise one composite video")
    _add_run_flags(p)
    p.add_argument("--metrics", action="store_true", help="also compute TL/SL")
    p.add_argument("--from-manifest", help="rerun exactly the run recorded in a manifest")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("ablate", help="run the five-arm stage ladder")
    _add_run_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("evaluate", help="compute TL and SL for a frame directory")
    p.add_argument("--outputs", required=True)
    p.add_argument("--bg", required=True, help="reference background frames")
    p.add_argument("--flows", help="directory of .flo files, one per consecutive pair")
    p.add_argument("--flow-adapter", help="'farneback' or 'package.module:factory'")
    p.add_argument("--flow-frames", help="frames to estimate flow on (default: the outputs)")
    p.add_argument("--extractor")
    p.add_argument("--report", help="where to write the metrics JSON")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except LengthMismatch as exc:
        print(f"length error: {exc}", file=sys.stderr)
        return EXIT_LENGTH
    except (ConfigInvalid, EmptyPlacement, InvalidPlacement, DimensionMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BackendFailure, NonFinite, ExtractorFailure) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except VidComposeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
