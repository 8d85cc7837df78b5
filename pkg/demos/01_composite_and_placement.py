# coding: utf-8

# # Building a composite clip
#
# A composite is a hard paste: foreground pixels inside the mask, background
# pixels outside. Nothing is blended at the seam, which is exactly why the
# result usually looks wrong and needs harmonising.

import numpy as np

from _scene import scene
from vidcompose.compositing import Placement, assemble_composite, place_foreground
from vidcompose.io import contact_sheet

fgs, bgs, masks = scene()
composite = assemble_composite(fgs, bgs, masks)
print(composite.shape, composite.dtype)

# Inside the mask we get the foreground back exactly, outside the background.

m = masks[0]
print(np.array_equal(composite[0][m], fgs[0][m]), np.array_equal(composite[0][~m], bgs[0][~m]))

# ## Placement
#
# A foreground layer can be scaled and shifted before pasting. The mask moves
# with it (nearest-neighbour, so it stays binary); pixels outside the shifted
# layer come out as 0.

p = Placement(scale=0.6, translate_x=20, translate_y=8)
fg2, m2 = place_foreground(fgs[0], masks[0], p, canvas=(64, 64))
print("mask area before/after:", masks[0].sum(), m2.sum())

moved = assemble_composite(fg2[None], bgs[:1], m2[None])
contact_sheet([composite[0], moved[0]], "out_01_composite.png")
print("wrote out_01_composite.png")
