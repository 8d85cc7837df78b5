# coding: utf-8

# # How deep to invert
#
# Inverting a frame all the way to pure noise gives the prompt total control
# and loses the frame. Inverting only a few steps keeps the frame and
# leaves the prompt nothing to do. `t_b` picks the point in between.

import numpy as np

from _scene import scene
from vidcompose.compositing import assemble_composite
from vidcompose.diffusion import make_schedule
from vidcompose.ifa import IfaWindow, generate_frame
from vidcompose.inversion import default_t_b, invert_partial
from vidcompose.toy import toy_backend

fgs, bgs, masks = scene(n=1)
frame = assemble_composite(fgs, bgs, masks)[0]
backend = toy_backend(seed=0)
sched = make_schedule(20)

# Replaying the stored noise predictions backwards gives the latent back to
# round-off, whatever the depth.

tr = invert_partial(frame, 20, backend, sched)
rel = np.linalg.norm(tr.replay(sched) - tr.latents[0]) / np.linalg.norm(tr.latents[0])
print(f"replay relative error at full depth: {rel:.2e}")

# Regenerating under a prompt is another matter. The deeper we start, the
# further the result drifts from the input.

cond = backend.embed_text("a lacquered red sculpture")
for t_b in (2, 5, 9, 15, 20):
    start = invert_partial(frame, t_b, backend, sched).initial_point
    z0 = generate_frame(start, None, cond, IfaWindow(1, t_b), backend, sched)
    err = np.linalg.norm(backend.decode(z0) - frame)
    print(f"t_b={t_b:2d}  reconstruction error {err:8.3f}")

print("defaults at T=20:", default_t_b("shallow", 20), default_t_b("deep", 20))
