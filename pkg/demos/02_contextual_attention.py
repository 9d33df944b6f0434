# # Contextual attention across frames
#
# Features inside a hole are rebuilt as a softmax-weighted mix of known 3x3
# patches, gathered from every frame of the window.

import numpy as np

from autoremover.attention import contextual_attention, extract_patches

rng = np.random.default_rng(0)

# ## Counting patches
#
# Stride 1 with same padding gives one patch per location, so a 5-frame 96x96
# feature map yields 5 * 96 * 96 candidates.

ps = extract_patches(np.zeros((5, 96, 96, 1), np.float32), k=3, stride=1, same_padding=True)
print("patches:", len(ps))

# ## Copying texture from another frame
#
# Build a background whose frames are shifted copies of one feature map. The
# target has a hole; the other frame still shows that content.

feat = rng.normal(size=(12, 16, 4))
bg = np.stack([feat, np.roll(feat, 3, axis=1)])
masks = np.ones((2, 12, 16))
masks[0, 4:8, 6:10] = 0  # hole in the target only

# Inside the hole the network only has a rough coarse estimate.
fg = feat.copy()
fg[4:8, 6:10] += rng.normal(scale=0.5, size=(4, 4, 4))
fg_mask = masks[0]

patches = extract_patches(bg, k=3, mask=masks)
print("valid background patches", patches.num_valid, "of", len(patches))

for scale in (1.0, 10.0, 100.0):
    recon, scores = contextual_attention(fg, patches, scale=scale, fg_mask=fg_mask)
    err = np.abs(recon[4:8, 6:10] - feat[4:8, 6:10]).mean()
    print("scale %6.1f  mean error in hole %.3f  peak score %.3f" % (scale, err, scores[4:8, 6:10].max()))

# The known pixels pass through untouched.
print("known region unchanged:", np.array_equal(recon[fg_mask == 1], fg[fg_mask == 1]))
