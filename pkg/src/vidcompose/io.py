"""Frame directories, ``.flo`` flow files and contact sheets.

Frame directories hold numbered images (``frame_0000.png`` ...) read in
lexicographic order. Mask directories use the same file names and are read as
single-channel images binarised at 0.5.

``.flo`` layout (little endian): float32 magic ``202021.25``, int32 width,
int32 height, then ``height * width * 2`` float32 values, row-major, with dx
and dy interleaved per pixel. Components with magnitude above ``1e9`` mark
unknown flow and are read as invalid pixels.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .compositing import as_frame, binarize
from .metrics import FlowField

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
FLO_MAGIC = 202021.25
FLO_UNKNOWN = 1e9


def frame_name(index: int) -> str:
    return f"frame_{index:04d}.png"


def list_images(directory) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no image files in {directory}")
    return files


def read_frame(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return binarize(arr / 255.0)


def read_frames(directory) -> list:
    return [read_frame(p) for p in list_images(directory)]


def read_masks(directory, like=None) -> list:
    """Read a mask directory. If ``like`` (a frame directory) is given, names must match."""
    files = list_images(directory)
    if like is not None:
        names = [p.stem for p in list_images(like)]
        if [p.stem for p in files] != names:
            raise ValueError(f"mask names in {directory} do not match frame names in {like}")
    return [read_mask(p) for p in files]


def to_uint8(frame) -> np.ndarray:
    return np.round(np.clip(np.asarray(frame, dtype=np.float64), 0, 1) * 255).astype(np.uint8)


def write_frames(directory, frames) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(frames):
        p = directory / frame_name(i)
        Image.fromarray(to_uint8(as_frame(f))).save(p)
        paths.append(p)
    return paths


def write_masks(directory, masks) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, m in enumerate(masks):
        p = directory / frame_name(i)
        Image.fromarray(np.asarray(m, dtype=bool).astype(np.uint8) * 255).save(p)
        paths.append(p)
    return paths


def write_flo(path, flow: FlowField):
    h, w = flow.shape
    data = flow.flow.astype("<f4")
    data[~flow.valid] = FLO_UNKNOWN * 10
    with open(path, "wb") as fh:
        np.array([FLO_MAGIC], dtype="<f4").tofile(fh)
        np.array([w, h], dtype="<i4").tofile(fh)
        data.tofile(fh)


def read_flo(path) -> FlowField:
    with open(path, "rb") as fh:
        magic = np.fromfile(fh, dtype="<f4", count=1)
        if magic.size != 1 or magic[0] != np.float32(FLO_MAGIC):
            raise ValueError(f"{path}: bad .flo magic")
        w, h = np.fromfile(fh, dtype="<i4", count=2)
        data = np.fromfile(fh, dtype="<f4", count=int(w) * int(h) * 2)
    if data.size != w * h * 2:
        raise ValueError(f"{path}: truncated .flo payload")
    data = data.reshape(int(h), int(w), 2).astype(np.float64)
    valid = np.all(np.abs(data) < FLO_UNKNOWN, axis=2) & np.all(np.isfinite(data), axis=2)
    return FlowField(np.where(valid[..., None], data, 0.0), valid)


def read_flow_dir(directory) -> list:
    directory = Path(directory)
    files = sorted(directory.glob("*.flo"))
    if not files:
        raise FileNotFoundError(f"no .flo files in {directory}")
    return [read_flo(p) for p in files]


def write_flow_dir(directory, flows) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(flows):
        p = directory / f"flow_{i:04d}.flo"
        write_flo(p, f)
        paths.append(p)
    return paths


def contact_sheet(frames, path, height: int = 128, gap: int = 4):
    """Save a horizontal strip of frames, each resized to ``height`` pixels tall."""
    tiles = []
    for f in frames:
        im = Image.fromarray(to_uint8(f))
        w = max(1, round(im.width * height / im.height))
        tiles.append(im.resize((w, height), Image.BILINEAR))
    total = sum(t.width for t in tiles) + gap * (len(tiles) - 1)
    sheet = Image.new("RGB", (total, height), (255, 255, 255))
    x = 0
    for t in tiles:
        sheet.paste(t, (x, 0))
        x += t.width + gap
    sheet.save(path)
    return Path(path)
