# coding: utf-8

# # Borrowing attention from the previous frame
#
# Each frame is generated while the previous output frame is denoised next
# to it. In the self-attention layers, rows that belong to foreground
# queries are copied over from the previous frame, so the foreground keeps
# attending the way it did one frame earlier.

import numpy as np

from _scene import scene
from vidcompose.compositing import assemble_composite
from vidcompose.diffusion import make_schedule
from vidcompose.ifa import IfaWindow, downscale_mask, generate_frame, splice_attention
from vidcompose.inversion import invert_partial
from vidcompose.toy import toy_backend

# The splice itself on a 4-query map:

rng = np.random.default_rng(0)
cur = rng.dirichlet(np.ones(4), size=4)
prev = rng.dirichlet(np.ones(4), size=4)
q = np.array([True, False, False, True])
print(np.round(splice_attention(cur, prev, q), 3))

# The query mask is the pixel mask pooled onto each layer's grid.

fgs, bgs, masks = scene(n=2)
print(downscale_mask(masks[1], (8, 8)).reshape(8, 8).astype(int))

# Now a real generation call, counting splices per step.

backend = toy_backend(0)
sched = make_schedule(20)
frames = assemble_composite(fgs, bgs, masks)
window = IfaWindow(tau=3, t_b=15)
prev = invert_partial(frames[0], 15, backend, sched)
cur = invert_partial(frames[1], 15, backend, sched)
log = []
generate_frame(cur.initial_point, prev, backend.embed_text("a brass bell"), window, backend, sched,
               masks[1], observers=[lambda layer, step, kind, pre, post: log.append(step)])
print("splices:", len(log), "steps:", sorted(set(log)))
