"""Training objectives for the inpainting GAN."""

from dataclasses import dataclass
import math

import numpy as np
import torch

from .errors import BadArgument, EmptyLossSupport, ShapeMismatch


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0  # weight of the coarse term in the reconstruction loss
    adv_weight: float = 0.01

    def __post_init__(self):
        for name in ("alpha", "adv_weight"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise BadArgument(f"{name} must be finite and non-negative, got {v}")


def masked_l1(pred, target, valid):
    """Mean absolute error over valid pixels and all channels.

    ``valid`` has a singleton channel axis (or none) and broadcasts over channels.
    Excluded pixels contribute neither value nor gradient.
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if valid.dim() == pred.dim() - 1:
        valid = valid.unsqueeze(-3)
    valid = valid.to(pred.dtype).expand_as(pred)
    n = valid.sum()
    if n.item() == 0:
        raise EmptyLossSupport("no valid pixel in loss support")
    return (torch.abs(pred - target) * valid).sum() / n


def reconstruction_loss(coarse_out, refined_target, gt, valid_loss_mask, alpha=1.0, target_index=None):
    """L1 reconstruction: ``alpha * |coarse - gt| + |refined - gt_target|``.

    coarse_out, gt: (..., F, C, H, W); refined_target: (..., C, H, W);
    valid_loss_mask: (..., F, 1, H, W) or (..., F, H, W), 1 where the ground truth
    is trustworthy. The coarse term averages over the valid pixels of all F
    frames, the refined term over those of the target frame (the middle one
    unless ``target_index`` is given).
    """
    n_frames = coarse_out.shape[-4]
    m = n_frames // 2 if target_index is None else target_index
    valid = valid_loss_mask if valid_loss_mask.dim() == coarse_out.dim() else valid_loss_mask.unsqueeze(-3)
    coarse_term = masked_l1(coarse_out, gt, valid)
    refine_term = masked_l1(refined_target, gt[..., m, :, :, :], valid[..., m, :, :, :])
    return alpha * coarse_term + refine_term


def d_hinge_loss(d_real, d_fake):
    return torch.relu(1.0 - d_real).mean() + torch.relu(1.0 + d_fake).mean()


def g_hinge_loss(d_fake):
    return -d_fake.mean()


def build_loss_validity(real_object_masks, synthetic_hole_masks):
    """Pixels whose ground truth may supervise the generator.

    Real (unlabelled-background) objects are excluded; synthetic holes stay valid
    because their ground truth is known. Both inputs use 1 = known, 0 = hole.
    """
    if tuple(real_object_masks.shape) != tuple(synthetic_hole_masks.shape):
        raise ShapeMismatch(f"{tuple(real_object_masks.shape)} vs {tuple(synthetic_hole_masks.shape)}")
    if isinstance(real_object_masks, torch.Tensor):
        return (real_object_masks > 0.5).to(real_object_masks.dtype)
    return (np.asarray(real_object_masks) > 0.5).astype(np.uint8)
