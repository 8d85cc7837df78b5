import numpy as np
import pytest

from vidcompose.toy import toy_backend

# criterion id -> (passed or None if skipped, detail); filled by test_acceptance, printed at the end
ACCEPTANCE_RESULTS = {}


def make_clip(n=3, size=32, drift=2, seed=0):
    """Small synthetic composite: textured background, a moving round foreground."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size]
    frames, masks, bgs = [], [], []
    noise = rng.uniform(0, 0.05, (size, size, 3))
    for i in range(n):
        bg = np.stack(
            [0.3 + 0.2 * np.sin(xx / 5 + 0.3 * i), 0.5 + 0.1 * np.cos(yy / 4), 0.4 + 0 * xx], -1
        ) + noise
        m = (yy - size * 0.4) ** 2 + (xx - size * 0.3 - drift * i) ** 2 < (size / 4.5) ** 2
        fg = np.stack([0.9 + 0 * xx, 0.2 + 0.01 * xx, 0.1 + 0.02 * yy], -1)
        frames.append(np.clip(np.where(m[..., None], fg, bg), 0, 1))
        masks.append(m)
        bgs.append(np.clip(bg, 0, 1))
    return np.stack(frames), np.stack(masks), np.stack(bgs)


@pytest.fixture
def clip():
    return make_clip()


@pytest.fixture(scope="session")
def backend():
    return toy_backend(0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0])):
        passed, detail = ACCEPTANCE_RESULTS[key]
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        terminalreporter.write_line(f"{status}  criterion {key}  {detail}")
