"""Shadow detection branch: a U-net mapping RGB + object mask to shadow probability."""

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import BadLabels, BadParams, ShapeMismatch

CLAMP_EPS = 1e-7


def _block(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1), nn.LeakyReLU(0.2),
        nn.Conv2d(cout, cout, 3, padding=1), nn.LeakyReLU(0.2),
    )


class ShadowUNet(nn.Module):
    """Encoder-decoder with skip connections.

    Input channels are RGB in [-1, 1] plus a hole indicator (1 on the object).
    Downsampling is 2x max pooling, upsampling is nearest-neighbour followed by a
    3x3 convolution.
    """

    def __init__(self, depth=4, base_channels=32):
        super().__init__()
        self.depth = depth
        self.base_channels = base_channels
        chans = [base_channels * 2 ** i for i in range(depth + 1)]
        self.enc = nn.ModuleList([_block(4 if i == 0 else chans[i - 1], chans[i]) for i in range(depth)])
        self.bottleneck = _block(chans[depth - 1], chans[depth])
        self.up = nn.ModuleList([nn.Conv2d(chans[i + 1], chans[i], 3, padding=1) for i in range(depth)])
        self.dec = nn.ModuleList([_block(2 * chans[i], chans[i]) for i in range(depth)])
        self.head = nn.Conv2d(chans[0], 1, 1)

    @property
    def config(self):
        return {"depth": self.depth, "base_channels": self.base_channels}

    def logits(self, x):
        skips = []
        for enc in self.enc:
            x = enc(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottleneck(x)
        for i in reversed(range(self.depth)):
            x = F.leaky_relu(self.up[i](F.interpolate(x, scale_factor=2, mode="nearest")), 0.2)
            x = self.dec[i](torch.cat([x, skips[i]], 1))
        return self.head(x)[:, 0]

    def forward(self, rgb, object_mask):
        """rgb: (B, 3, H, W); object_mask: (B, H, W) with 1 = known. Returns (B, H, W) probabilities."""
        hole = 1.0 - object_mask.to(rgb.dtype).unsqueeze(1)
        return torch.sigmoid(self.logits(torch.cat([rgb, hole], 1)))


def shadow_forward(rgb, object_mask, params: ShadowUNet):
    """Shadow probability for one (H, W, 3) frame or a (B, 3, H, W) batch.

    Numpy input is evaluated without gradients and returns an (H, W) array.
    """
    as_numpy = not isinstance(rgb, torch.Tensor)
    dtype = next(params.parameters()).dtype
    if as_numpy:
        x = torch.as_tensor(np.asarray(rgb), dtype=dtype).permute(2, 0, 1).unsqueeze(0)
        m = torch.as_tensor(np.asarray(object_mask), dtype=dtype).unsqueeze(0)
    else:
        x, m = rgb, object_mask
    h, w = x.shape[-2:]
    step = 2 ** params.depth
    if h % step or w % step:
        raise ShapeMismatch(f"input {h}x{w} is not divisible by {step}")
    if m.shape[-2:] != x.shape[-2:]:
        raise ShapeMismatch(f"mask {tuple(m.shape)} does not match image {tuple(x.shape)}")
    for name, p in params.named_parameters():
        if not torch.isfinite(p).all():
            raise BadParams(f"non-finite values in {name}")
    if as_numpy:
        with torch.no_grad():
            return params(x, m)[0].numpy()
    return params(x, m)


def class_weights(gt):
    """Per-image (w_pos, w_neg); balanced labels give unit weights.

    The rarer class is up-weighted: ``w_pos = 2 N_neg / N``, ``w_neg = 2 N_pos / N``.
    An image with a single class falls back to unit weights.
    """
    n = gt.shape[-1] * gt.shape[-2]
    n_pos = gt.sum(dim=(-2, -1))
    n_neg = n - n_pos
    single = (n_pos == 0) | (n_neg == 0)
    w_pos = torch.where(single, torch.ones_like(n_pos), 2 * n_neg / n)
    w_neg = torch.where(single, torch.ones_like(n_pos), 2 * n_pos / n)
    return w_pos, w_neg


def shadow_loss(pred, gt, eps=CLAMP_EPS):
    """Class-balanced binary cross entropy, averaged per image then over the batch.

    pred: (H, W) or (B, H, W) probabilities; gt: binary labels, 1 = shadow.
    """
    gt = torch.as_tensor(gt)
    if not isinstance(pred, torch.Tensor):
        pred = torch.as_tensor(np.asarray(pred))
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {tuple(pred.shape)} vs labels {tuple(gt.shape)}")
    if not bool(((gt == 0) | (gt == 1)).all()):
        raise BadLabels("shadow labels must be binary")
    y = gt.to(pred.dtype)
    if y.dim() == 2:
        y, pred = y.unsqueeze(0), pred.unsqueeze(0)
    p = pred.clamp(eps, 1 - eps)
    w_pos, w_neg = class_weights(y)
    per_pixel = w_pos[:, None, None] * y * torch.log(p) + w_neg[:, None, None] * (1 - y) * torch.log(1 - p)
    return -per_pixel.mean(dim=(-2, -1)).mean()


def iou(prob, gt, threshold=0.5):
    """Intersection over union of the thresholded prediction; 1 when both are empty."""
    pred = np.asarray(prob) >= threshold
    gt = np.asarray(gt) > 0
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def save_shadow(path, model: ShadowUNet, extra=None):
    save_checkpoint(path, "shadow_unet", model.config, {"net": model.state_dict()}, extra)


def load_shadow(path):
    payload = load_checkpoint(path, "shadow_unet")
    model = ShadowUNet(**payload["meta"]["config"])
    model.load_state_dict(payload["tensors"]["net"])
    model.eval()
    return model
