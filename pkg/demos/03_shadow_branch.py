# # The shadow branch
#
# Object masks from a detector stop at the car's outline, and the dark cast
# shadow under it stays. A small U-net learns to flag those shadow pixels so
# that they are removed together with the car.

import numpy as np
import torch

from autoremover.fixtures import shadow_dataset
from autoremover.maskgen import merge_shadow_mask
from autoremover.shadow_net import iou, shadow_forward
from autoremover.trainer import TrainConfig, train_shadow

torch.manual_seed(0)
train = shadow_dataset(40, 64, 96, seed=1)
test = shadow_dataset(5, 64, 96, seed=2)
print("shadow pixel fraction per image:", np.round([d["shadow"].mean() for d in train[:5]], 3))

# ## Training
#
# The loss is a class-balanced cross entropy, so the few shadow pixels weigh as
# much as the large background.

cfg = TrainConfig(learning_rate=1e-3, batch_size=8, max_iters=300, shadow_depth=3, shadow_base_channels=16,
                  log_every=100, checkpoint_every=0)
res = train_shadow(cfg, train, holdout=test)
for r in res.log:
    if "iou" in r:
        print("iter %4d  loss %.3f  held-out IoU %.3f" % (r["iter"], r["loss"], r["iou"]))

# ## Extending the hole
#
# Thresholding the probability map and intersecting it with the object mask
# gives the hole handed to the inpainter.

item = test[0]
prob = shadow_forward(item["rgb"], item["object_mask"], res.model)
hole = merge_shadow_mask(item["object_mask"], prob)
print("object hole pixels", int((item["object_mask"] == 0).sum()),
      "-> extended", int((hole == 0).sum()))
print("IoU on this image %.3f" % iou(prob, item["shadow"]))
