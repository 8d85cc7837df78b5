"""Synthetic layers shared by the demo scripts."""
import numpy as np


def scene(n=4, size=64, seed=0):
    """A striped background drifting right and a warm disc drifting diagonally."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:size, :size] / size
    grain = rng.uniform(0, 0.04, (size, size, 3))
    bgs, fgs, masks = [], [], []
    for i in range(n):
        phase = 0.4 * i
        bg = np.stack([0.25 + 0.15 * np.sin(12 * xx + phase), 0.45 + 0.1 * np.cos(9 * yy), 0.55 + 0 * xx], -1)
        bgs.append(np.clip(bg + grain, 0, 1))
        cy, cx = 0.4 + 0.03 * i, 0.35 + 0.05 * i
        masks.append((yy - cy) ** 2 + (xx - cx) ** 2 < 0.04)
        fgs.append(np.clip(np.stack([0.95 + 0 * xx, 0.55 + 0.3 * yy, 0.2 + 0.2 * xx], -1), 0, 1))
    return np.stack(fgs), np.stack(bgs), np.stack(masks)
