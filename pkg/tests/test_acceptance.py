"""Acceptance suite: one test per criterion, each with a wall-clock budget.

Every test records a PASS/FAIL line that is printed in the pytest terminal
summary under "acceptance criteria".
"""
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS, make_clip
from vidcompose.compositing import assemble_composite
from vidcompose.diffusion import make_schedule
from vidcompose.ifa import IfaWindow, generate_frame, splice_attention
from vidcompose.inversion import invert_partial
from vidcompose.metrics import FlowField, IdentityExtractor, gram, semantic_loss, temporal_loss
from vidcompose.pipeline import ABLATION_ARMS, PipelineConfig, run_ablation, run_pipeline


@contextmanager
def criterion(key, budget):
    """Run the body, then fail if it raised or overran ``budget`` seconds."""
    start = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        ACCEPTANCE_RESULTS[key] = (False, f"{type(exc).__name__}: {exc}"[:120])
        raise
    elapsed = time.perf_counter() - start
    ok = elapsed < budget
    ACCEPTANCE_RESULTS[key] = (ok, f"{elapsed:.2f}s (budget {budget}s)")
    assert ok, f"criterion {key} took {elapsed:.2f}s, budget {budget}s"


def _n_self(backend, shape):
    return sum(1 for l in backend.layer_catalog(shape) if l.kind == "self")


def test_1_composite_exactness():
    with criterion("1 composite exactness", 5):
        rng = np.random.default_rng(101)
        for _ in range(100):
            n, h, w = rng.integers(1, 4), rng.integers(1, 24), rng.integers(1, 24)
            fg = rng.random((n, h, w, 3))
            bg = rng.random((n, h, w, 3))
            mask = rng.random((n, h, w)) < rng.random()
            out = assemble_composite(fg, bg, mask)
            oracle = np.empty_like(fg)
            for i in range(n):
                for y in range(h):
                    for x in range(w):
                        oracle[i, y, x] = fg[i, y, x] if mask[i, y, x] else bg[i, y, x]
            assert out.dtype == oracle.dtype and np.array_equal(out, oracle)


def test_2_inversion_round_trip(backend):
    with criterion("2 inversion round trip", 30):
        frame = make_clip(1, seed=3)[0][0]
        sched = make_schedule(20)
        worst = 0.0
        for t_b in range(1, 21):
            tr = invert_partial(frame, t_b, backend, sched)
            z0 = tr.latents[0]
            rel = np.linalg.norm(tr.replay(sched) - z0) / np.linalg.norm(z0)
            worst = max(worst, rel)
        assert worst <= 1e-5, worst


def test_3_bpi_monotonicity(backend):
    with criterion("3 BPI monotonicity", 60):
        sched = make_schedule(20)
        cond = backend.embed_text("a watercolor street at dusk")
        frames = make_clip(3, seed=11, drift=3)[0]
        for frame in frames:
            errs = []
            for t_b in range(2, 21):
                tr = invert_partial(frame, t_b, backend, sched)
                z0 = generate_frame(tr.initial_point, None, cond, IfaWindow(1, t_b), backend, sched)
                errs.append(float(np.linalg.norm(backend.decode(z0) - frame)))
            assert np.all(np.diff(errs) >= -1e-9), errs
            assert errs[-1] > errs[0]


def _row_stochastic(rng, shape):
    a = rng.random(shape) + 1e-3
    return a / a.sum(axis=-1, keepdims=True)


def test_4_splice_correctness():
    with criterion("4 splice correctness", 5):
        rng = np.random.default_rng(4)
        for _ in range(200):
            nq, nk, heads = rng.integers(1, 40), rng.integers(1, 40), rng.integers(1, 4)
            cur = _row_stochastic(rng, (heads, nq, nk))
            prev = _row_stochastic(rng, (heads, nq, nk))
            q = rng.random(nq) < rng.random()
            out = splice_attention(cur, prev, q)
            assert np.array_equal(out[:, q], prev[:, q])
            assert np.array_equal(out[:, ~q], cur[:, ~q])
            assert np.all(np.abs(out.sum(axis=-1) - 1) <= 1e-6)
            assert np.array_equal(splice_attention(out, prev, q), out)


def test_5_ifa_gating(backend):
    with criterion("5 IFA gating", 30):
        frames, masks, _ = make_clip(2)
        n_self = _n_self(backend, backend.encode(frames[0]).shape)
        steps = []
        cfg = PipelineConfig(T=20, t_b=15, tau=3)
        _, manifest = run_pipeline(frames, masks, "p", cfg, backend,
                                   observers=[lambda layer, step, *rest: steps.append(step)])
        assert manifest.frames[0]["ifa_splices"] == 0
        assert manifest.frames[1]["ifa_splices"] == 13 * n_self
        assert len(steps) == 13 * n_self
        assert sorted(set(steps)) == list(range(3, 16))


def test_6_background_fidelity(backend):
    with criterion("6 background fidelity", 30):
        frames, masks, bgs = make_clip(4, drift=3, seed=6)
        out, _ = run_pipeline(frames, masks, "a bronze statue", PipelineConfig(T=20), backend, background=bgs)
        for o, b, m in zip(out, bgs, masks):
            assert np.array_equal(o[~m], b[~m])


def test_7_causality_and_determinism(backend):
    with criterion("7 causality and determinism", 60):
        frames, masks, _ = make_clip(4, seed=7)
        cfg = PipelineConfig(T=20, seed=42)
        base, _ = run_pipeline(frames, masks, "p", cfg, backend)
        again, _ = run_pipeline(frames, masks, "p", cfg, backend)
        assert np.array_equal(base, again)
        for j in (1, 3):
            mutated = frames.copy()
            mutated[j] = np.clip(mutated[j] + 0.3 * masks[j][..., None], 0, 1)
            out, _ = run_pipeline(mutated, masks, "p", cfg, backend)
            assert np.array_equal(out[:j], base[:j])
            assert not np.array_equal(out[j], base[j])


def test_8_metric_oracles():
    with criterion("8 metric oracles", 10):
        rng = np.random.default_rng(8)
        f = rng.random((12, 10, 3))
        zero = [FlowField.zeros(12, 10)] * 2
        assert temporal_loss([f, f, f], zero) == 0.0
        g = np.clip(f, 0, 0.9)
        assert temporal_loss([g, g + 0.1], zero[:1]) == pytest.approx(0.01, abs=1e-12)
        assert semantic_loss([f], [f], IdentityExtractor()) == 0.0
        # single-channel 2x2 frames: Gram is the mean square, 0.135 vs 0.075
        bg = np.array([[0.1, 0.2], [0.3, 0.4]])
        assert semantic_loss([bg + 0.1], [bg], IdentityExtractor()) == pytest.approx(0.06**2, abs=1e-9)
        for _ in range(100):
            c, n = rng.integers(1, 12), rng.integers(1, 64)
            gm = gram(rng.normal(size=(c, n)))
            assert np.array_equal(gm, gm.T)
            assert np.linalg.eigvalsh(gm).min() >= -1e-12


def test_9_ablation_ladder(backend):
    with criterion("9 ablation ladder", 60):
        frames, masks, _ = make_clip(3, drift=3)
        arms = run_ablation(frames, masks, "a glowing paper lantern", backend, PipelineConfig(T=20, seed=3))
        assert [a.name for a in arms] == [name for name, _ in ABLATION_ARMS] == [
            "baseline", "bpi", "cross", "ifa", "bg"
        ]
        for lo, hi in zip(arms, arms[1:]):
            assert lo.stages < hi.stages
        for i, a in enumerate(arms):
            for b in arms[i + 1:]:
                assert not np.array_equal(a.outputs, b.outputs), (a.name, b.name)


@pytest.mark.skip(reason="needs a pretrained denoiser adapter; pass one with --backend module:factory and inspect by hand")
def test_10_real_backend():
    pass


def setup_module():
    ACCEPTANCE_RESULTS["10 real backend (manual)"] = (None, "not run: no pretrained weights in this environment")
