import numpy as np
import pytest

from vidcompose import io as vio
from vidcompose.metrics import FlowField


def test_frame_roundtrip_8bit(tmp_path):
    rng = np.random.default_rng(0)
    frames = [np.round(rng.uniform(size=(5, 6, 3)) * 255) / 255 for _ in range(3)]
    paths = vio.write_frames(tmp_path / "f", frames)
    assert [p.name for p in paths] == ["frame_0000.png", "frame_0001.png", "frame_0002.png"]
    back = vio.read_frames(tmp_path / "f")
    for a, b in zip(frames, back):
        assert np.array_equal(np.round(a * 255), np.round(b * 255))


def test_write_maps_by_rounding(tmp_path):
    f = np.full((2, 2, 3), 0.5)
    vio.write_frames(tmp_path / "f", [f])
    back = vio.read_frames(tmp_path / "f")[0]
    assert np.all(back == 128 / 255)


def test_mask_roundtrip_and_name_matching(tmp_path):
    m = np.zeros((4, 4), bool)
    m[1:3, 1:3] = True
    vio.write_masks(tmp_path / "m", [m, ~m])
    vio.write_frames(tmp_path / "f", [np.zeros((4, 4, 3))] * 2)
    back = vio.read_masks(tmp_path / "m", like=tmp_path / "f")
    assert np.array_equal(back[0], m) and np.array_equal(back[1], ~m)
    vio.write_frames(tmp_path / "g", [np.zeros((4, 4, 3))] * 3)
    with pytest.raises(ValueError):
        vio.read_masks(tmp_path / "m", like=tmp_path / "g")


def test_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        vio.read_frames(tmp_path / "nope")


def test_flo_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    flow = rng.standard_normal((5, 7, 2)).astype(np.float32).astype(np.float64)
    valid = np.ones((5, 7), bool)
    valid[2, 3] = False
    vio.write_flo(tmp_path / "a.flo", FlowField(flow, valid))
    raw = (tmp_path / "a.flo").read_bytes()
    assert np.frombuffer(raw[:4], "<f4")[0] == np.float32(202021.25)
    assert tuple(np.frombuffer(raw[4:12], "<i4")) == (7, 5)
    assert len(raw) == 12 + 5 * 7 * 2 * 4
    back = vio.read_flo(tmp_path / "a.flo")
    assert np.array_equal(back.valid, valid)
    assert np.array_equal(back.flow[valid], flow[valid])


def test_flo_bad_magic(tmp_path):
    (tmp_path / "x.flo").write_bytes(b"\x00" * 20)
    with pytest.raises(ValueError):
        vio.read_flo(tmp_path / "x.flo")


def test_contact_sheet(tmp_path):
    from PIL import Image

    frames = [np.full((32, 48, 3), v) for v in (0.1, 0.5, 0.9)]
    p = vio.contact_sheet(frames, tmp_path / "s.png", height=16, gap=2)
    with Image.open(p) as im:
        assert im.size == (3 * 24 + 2 * 2, 16)
