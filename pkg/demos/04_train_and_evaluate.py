# # Training the inpainter and measuring it
#
# This is a desk-sized run: a handful of synthetic sequences with large camera
# motion, a few hundred iterations and narrow layers. It shows the loop and the
# hole-only metrics, not final quality.

import numpy as np
import torch

from autoremover.fixtures import moving_hole_masks, plane_sequence
from autoremover.metrics import evaluate
from autoremover.trainer import TrainConfig, inpaint_target, make_sample, train_inpainting

torch.manual_seed(0)
H, W = 48, 96


def sample(seed):
    seq = plane_sequence(height=H, width=W, shift_px=22.0, seed=seed)
    rng = np.random.default_rng(seed)
    holes = moving_hole_masks(5, H, W, rng, 24, 3.0, center=(H // 2, int(rng.integers(30, 66))))
    return make_sample(seq, holes)


train = [sample(s) for s in range(100, 108)]
test = [sample(s) for s in range(200, 203)]

# ## Training
#
# Each iteration takes one discriminator step and one generator step. The log
# holds the reconstruction loss L_g, the adversarial loss L_G and the hinge
# loss L_D.

cfg = TrainConfig(learning_rate=1e-3, batch_size=2, max_iters=150, coarse_channels=8, feature_channels=16,
                  disc_channels=16, disc_layers=4, log_every=0, checkpoint_every=0)
res = train_inpainting(cfg, train)
for r in res.log[::30]:
    print("iter %4d  L_g %.3f  L_G %.3f  L_D %.3f" % (r["iter"], r["L_g"], r["L_G"], r["L_D"]))

# ## Evaluation on held-out sequences
#
# The scores only count hole pixels, on the 0-255 scale.

m = res.generator.config.target_index
preds, gts, holes = [], [], []
for s in test:
    preds.append(inpaint_target(res.generator, s).permute(1, 2, 0).numpy())
    gts.append(s["frames"][m].permute(1, 2, 0).numpy())
    holes.append(s["masks"][m, 0].numpy())
print(evaluate(preds, gts, holes).summary_table())
