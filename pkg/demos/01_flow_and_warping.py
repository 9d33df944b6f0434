# # Flow from depth, and warping frames onto the target
#
# A camera slides sideways over a textured plane. Because we know the depth,
# intrinsics and poses exactly, the optical flow between any two frames follows
# from reprojection alone. Warping a neighbour along that flow should land it
# on top of the target frame.

import numpy as np

from autoremover.fixtures import plane_sequence
from autoremover.geometry import flow_from_depth, warp_bilinear, warp_mask

seq = plane_sequence(num_frames=5, height=64, width=96, shift_px=7.5, seed=0)
m = seq.target_index
print("frames", seq.frames.shape, "target index", m)

# ## Target-to-reference flow
#
# `flow_from_depth` back-projects each target pixel with its depth and projects
# it into the reference camera. For a fronto-parallel plane and a pure x
# translation this is the constant -fx * t / Z.

cam = seq.camera(m)
flow = flow_from_depth(cam, seq.poses[m + 2])
fx, Z = seq.intrinsics[0, 0], seq.depths[m][0, 0]
t = seq.poses[m + 2][0, 3] - seq.poses[m][0, 3]
print("predicted dx", -fx * t / Z)
print("computed dx  min/max", flow.displacement[..., 0].min(), flow.displacement[..., 0].max())
print("valid pixels", int(flow.valid.sum()), "of", flow.valid.size)

# ## Backward warping
#
# Sampling frame m+2 at (x + dx, y + dy) rebuilds the target wherever the sample
# point falls inside the frame; elsewhere the result is zero and `in_bounds`
# says so.

res = warp_bilinear(seq.frames[m + 2], flow)
inside = res.in_bounds > 0
err = np.abs(np.asarray(res.warped) - seq.frames[m])[inside]
print("in-bounds fraction %.3f, mean abs error there %.2e" % (inside.mean(), err.mean()))

# ## Masks travel the same way
#
# A hole in the reference frame shows up in the target where the warped mask
# drops to 0.5 or below. Pixels that sample outside the reference also count
# as holes, so look only at in-bounds ones.

hole = np.ones((64, 96), np.uint8)
hole[20:40, 60:80] = 0
moved = warp_mask(hole, flow)
ys, xs = np.nonzero((moved == 0) & inside)
print("hole columns in reference 60..79, in target %d..%d" % (xs.min(), xs.max()))
