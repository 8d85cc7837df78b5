from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vidcompose.errors import DimensionMismatch, EmptyValidRegion, ExtractorFailure, LengthMismatch
from vidcompose.metrics import (
    FarnebackFlow,
    FlowField,
    IdentityExtractor,
    MetricsReport,
    PyramidExtractor,
    evaluate,
    format_table,
    gram,
    semantic_loss,
    temporal_loss,
    temporal_losses,
    warp,
)


def _frame(seed, h=6, w=7):
    return np.random.default_rng(seed).uniform(size=(h, w, 3))


def test_zero_flow_warp_is_identity():
    f = _frame(0)
    out, valid = warp(f, FlowField.zeros(6, 7))
    assert valid.all() and np.array_equal(out, f)


def test_integer_shift_warp():
    f = _frame(1)
    flow = np.zeros((6, 7, 2))
    flow[..., 0] = -1
    out, valid = warp(f, FlowField(flow))
    assert not valid[:, 0].any() and valid[:, 1:].all()
    for c in range(1, 7):
        assert np.array_equal(out[:, c], f[:, c - 1])


def test_out_of_bounds_flow_all_invalid():
    flow = np.full((6, 7, 2), 50.0)
    _, valid = warp(_frame(2), FlowField(flow))
    assert not valid.any()


def test_warp_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        warp(_frame(0), FlowField.zeros(5, 7))


def test_temporal_loss_static_video():
    f = _frame(3)
    assert temporal_loss([f, f, f], [FlowField.zeros(6, 7)] * 2) == 0.0


def test_temporal_loss_shifted_pair():
    f1 = _frame(4)
    f2 = np.zeros_like(f1)
    f2[:, 1:] = f1[:, :-1]
    flow = np.zeros((6, 7, 2))
    flow[..., 0] = -1
    assert temporal_loss([f1, f2], [FlowField(flow)]) == 0.0


def test_temporal_loss_constant_offset():
    f1 = np.full((4, 4, 3), 0.5)
    f2 = f1 + 0.1
    assert temporal_loss([f1, f2], [FlowField.zeros(4, 4)]) == pytest.approx(0.01, abs=1e-12)


def test_temporal_loss_respects_validity_bitmap():
    f1 = np.zeros((2, 2, 3))
    f2 = np.zeros((2, 2, 3))
    f2[0, 0] = 1.0
    valid = np.ones((2, 2), bool)
    valid[0, 0] = False
    assert temporal_loss([f1, f2], [FlowField(np.zeros((2, 2, 2)), valid)]) == 0.0


def test_temporal_loss_errors(caplog):
    f = _frame(5)
    with pytest.raises(LengthMismatch):
        temporal_loss([f, f, f], [FlowField.zeros(6, 7)])
    gone = FlowField(np.full((6, 7, 2), 99.0))
    with pytest.raises(EmptyValidRegion):
        temporal_loss([f, f], [gone])
    pairs = temporal_losses([f, f, f], [gone, FlowField.zeros(6, 7)])
    assert pairs == [None, 0.0]
    assert temporal_loss([f, f, f], [gone, FlowField.zeros(6, 7)]) == 0.0
    assert "skipped" in caplog.text


def test_gram_constant_channel():
    v = 0.3
    g = gram(np.full((1, 10), v))
    assert g.shape == (1, 1) and g[0, 0] == pytest.approx(v * v, rel=1e-15)


def test_gram_zero_and_orthogonal():
    assert not gram(np.zeros((3, 5))).any()
    f = np.array([[1.0, 0.0, 1.0, 0.0], [0.0, 2.0, 0.0, 2.0]])
    g = gram(f)
    assert g[0, 1] == 0 and g[1, 0] == 0
    assert g[0, 0] == pytest.approx(2 / 8) and g[1, 1] == pytest.approx(8 / 8)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 30), st.integers(0, 2**31 - 1))
def test_gram_symmetric_psd(c, n, seed):
    f = np.random.default_rng(seed).standard_normal((c, n))
    g = gram(f)
    assert np.max(np.abs(g - g.T)) <= 1e-9
    assert np.linalg.eigvalsh(g).min() >= -1e-8


def _hand_gram_distance(out, bg):
    # exact rational arithmetic for a single-channel frame
    o = [Fraction(x).limit_denominator(10**6) for x in out.ravel()]
    b = [Fraction(x).limit_denominator(10**6) for x in bg.ravel()]
    n = len(o)
    go = sum(x * x for x in o) / n
    gb = sum(x * x for x in b) / n
    return float((go - gb) ** 2)


def test_semantic_loss_identical_is_zero():
    f = _frame(6)
    assert semantic_loss([f, f], [f, f], IdentityExtractor()) == 0.0
    assert semantic_loss([f], [f], PyramidExtractor()) == 0.0


def test_semantic_loss_hand_computed():
    bg = np.array([[0.1, 0.2], [0.3, 0.4]])
    out = bg + 0.1
    expected = _hand_gram_distance(out, bg)
    assert expected == pytest.approx(0.0036, abs=1e-12)
    assert semantic_loss([out], [bg], IdentityExtractor()) == pytest.approx(expected, abs=1e-9)


def test_semantic_loss_ignores_spatial_layout():
    rng = np.random.default_rng(7)
    out = rng.uniform(size=(4, 5, 3))
    bg = rng.uniform(size=(4, 5, 3))
    perm = rng.permutation(20)
    shuffled = out.reshape(20, 3)[perm].reshape(4, 5, 3)
    a = semantic_loss([out], [bg], IdentityExtractor())
    b = semantic_loss([shuffled], [bg], IdentityExtractor())
    assert a == pytest.approx(b, rel=1e-12)


def test_semantic_loss_errors():
    f = _frame(8)
    with pytest.raises(LengthMismatch):
        semantic_loss([f], [f, f], IdentityExtractor())

    def broken(frame):
        raise RuntimeError("boom")

    with pytest.raises(ExtractorFailure):
        semantic_loss([f], [f], broken)


def test_metrics_deterministic():
    frames = [_frame(i) for i in range(3)]
    flows = [FlowField.zeros(6, 7)] * 2
    a = evaluate(frames, frames[::-1], flows, PyramidExtractor())
    b = evaluate(frames, frames[::-1], flows, PyramidExtractor())
    assert a.to_dict() == b.to_dict()
    assert a.temporal_loss >= 0 and a.semantic_loss >= 0


def test_report_formatting():
    r = MetricsReport(temporal_loss=0.00751, semantic_loss=0.07391)
    assert r.formatted() == {"TL": "7.51", "SL": "73.91"}
    table = format_table([("ours", r)])
    assert "x10^3" in table.splitlines()[0]
    assert "7.51" in table and "73.91" in table
    assert MetricsReport(semantic_loss=0.1).formatted()["TL"] == "n/a"


def test_farneback_recovers_a_shift():
    pytest.importorskip("cv2")
    yy, xx = np.mgrid[:48, :48]
    base = 0.5 + 0.4 * np.sin(xx / 3.0) * np.cos(yy / 4.0)
    f1 = np.repeat(base[..., None], 3, axis=2)
    f2 = np.roll(f1, 2, axis=1)
    flow = FarnebackFlow()(f1, f2)
    inner = flow.flow[8:-8, 8:-8]
    assert np.median(inner[..., 0]) == pytest.approx(-2.0, abs=0.3)
    assert temporal_loss([f1, f2], [flow]) < temporal_loss([f1, f2], [FlowField.zeros(48, 48)])
