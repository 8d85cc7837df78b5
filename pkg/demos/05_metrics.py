# coding: utf-8

# # Measuring flicker and style gap
#
# TL warps each frame onto the next along a backward flow and takes the mean
# squared difference over pixels the warp can see. SL compares Gram
# matrices, so it cares about colour and texture statistics and not where
# things are.

import numpy as np

from vidcompose.io import read_flo, write_flo
from vidcompose.metrics import FlowField, IdentityExtractor, gram, semantic_loss, temporal_loss

rng = np.random.default_rng(1)
a = rng.random((16, 16, 3)) * 0.9
zero = FlowField.zeros(16, 16)
print("static:", temporal_loss([a, a], [zero]))
print("+0.1 everywhere:", temporal_loss([a, a + 0.1], [zero]))

# A frame shifted right by 2 pixels is explained perfectly by a flow of dx=-2
# (each pixel looks 2 to the left in the earlier frame). The left 2 columns
# have nowhere to look and are excluded.

b = np.roll(a, 2, axis=1)
shift = FlowField(np.stack([np.full((16, 16), -2.0), np.zeros((16, 16))], -1))
print("shift with matching flow:", temporal_loss([a, b], [shift]))

# Gram matrices ignore layout: shuffling pixels leaves SL at 0.

perm = rng.permutation(256)
shuffled = a.reshape(256, 3)[perm].reshape(16, 16, 3)
print("shuffled SL:", semantic_loss([shuffled], [a], IdentityExtractor()))
print(np.round(gram(a.reshape(-1, 3).T), 4))

# Flow fields round-trip through .flo files.

write_flo("out_05_shift.flo", shift)
print(np.array_equal(read_flo("out_05_shift.flo").flow, shift.flow))
