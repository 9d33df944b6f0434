"""Coarse-to-fine video inpainting generator and patch discriminator.

Tensor layout throughout: frames ``(B, F, 3, H, W)`` in [-1, 1], masks
``(B, F, 1, H, W)`` with 1 = known, flows ``(B, F, 2, H, W)`` holding the
target-to-frame displacement for every frame (the target slot is ignored).
"""

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.parametrizations import spectral_norm

from .attention import DEFAULT_PATCH_SIZE, DEFAULT_SCALE, attention_layer
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import BadSequence, ShapeMismatch
from .geometry import warp_tensor


@dataclass
class InpaintConfig:
    num_frames: int = 5
    coarse_channels: int = 32
    feature_channels: int = 32
    assembler_kernel: int = 3  # spatial size of the 3D aggregation/merging kernels
    patch_size: int = DEFAULT_PATCH_SIZE
    attention_scale: float = DEFAULT_SCALE
    attention_chunk: Optional[int] = None
    use_warping: bool = True
    use_attention: bool = True
    disc_channels: int = 64
    disc_layers: int = 6

    @property
    def target_index(self):
        return self.num_frames // 2


class GatedConv2d(nn.Module):
    """``act(conv_f(x)) * sigmoid(conv_g(x))``."""

    def __init__(self, cin, cout, kernel_size=3, stride=1, dilation=1, activation=F.elu):
        super().__init__()
        pad = dilation * (kernel_size - 1) // 2
        self.conv = nn.Conv2d(cin, 2 * cout, kernel_size, stride, pad, dilation)
        self.activation = activation

    def forward(self, x):
        feat, gate = self.conv(x).chunk(2, dim=1)
        if self.activation is not None:
            feat = self.activation(feat)
        return feat * torch.sigmoid(gate)


class Upsample(nn.Module):
    def forward(self, x):
        return F.interpolate(x, scale_factor=2, mode="nearest")


class CoarseNet(nn.Module):
    """Single-frame gated encoder-decoder: 1/4 resolution with a dilated bottleneck."""

    def __init__(self, c=32):
        super().__init__()
        self.body = nn.Sequential(
            GatedConv2d(4, c, 5),
            GatedConv2d(c, 2 * c, 3, stride=2),
            GatedConv2d(2 * c, 2 * c, 3),
            GatedConv2d(2 * c, 4 * c, 3, stride=2),
            GatedConv2d(4 * c, 4 * c, 3),
            GatedConv2d(4 * c, 4 * c, 3, dilation=2),
            GatedConv2d(4 * c, 4 * c, 3, dilation=4),
            GatedConv2d(4 * c, 4 * c, 3),
            Upsample(),
            GatedConv2d(4 * c, 2 * c, 3),
            GatedConv2d(2 * c, 2 * c, 3),
            Upsample(),
            GatedConv2d(2 * c, c, 3),
            GatedConv2d(c, max(c // 2, 1), 3),
            nn.Conv2d(max(c // 2, 1), 3, 3, padding=1),
        )

    def forward(self, image_in, mask):
        return torch.tanh(self.body(torch.cat([image_in, 1.0 - mask], 1)))


def _encoder(c):
    half = max(c // 2, 1)
    return nn.Sequential(
        GatedConv2d(4, half, 5),
        GatedConv2d(half, c, 3, stride=2),
        GatedConv2d(c, c, 3),
        GatedConv2d(c, c, 3, stride=2),
        GatedConv2d(c, c, 3, dilation=2),
    )


class FeatureExtractor(nn.Module):
    """Per-frame gated encoder to 1/4 resolution.

    The target frame has its own weights; all reference frames share a second set.
    """

    def __init__(self, c=32):
        super().__init__()
        self.target = _encoder(c)
        self.reference = _encoder(c)

    def forward(self, frames, target_index):
        b, n, ch, h, w = frames.shape
        refs = [i for i in range(n) if i != target_index]
        out_t = self.target(frames[:, target_index])
        out_r = self.reference(frames[:, refs].reshape(b * len(refs), ch, h, w))
        out_r = out_r.reshape(b, len(refs), *out_r.shape[1:])
        pieces = list(out_r.unbind(1))
        pieces.insert(target_index, out_t)
        return torch.stack(pieces, 1)


class TemporalConv(nn.Module):
    """3D convolution with temporal depth F that collapses F frames into one map."""

    def __init__(self, c, num_frames, spatial=3):
        super().__init__()
        self.conv = nn.Conv3d(c, c, (num_frames, spatial, spatial), padding=(0, spatial // 2, spatial // 2))

    def forward(self, feats):
        # feats: B, F, C, h, w
        return self.conv(feats.transpose(1, 2))[:, :, 0]


class Decoder(nn.Module):
    def __init__(self, c=32):
        super().__init__()
        half, quarter = max(c // 2, 1), max(c // 4, 1)
        self.body = nn.Sequential(
            GatedConv2d(2 * c, c, 3),
            GatedConv2d(c, c, 3),
            Upsample(),
            GatedConv2d(c, half, 3),
            Upsample(),
            GatedConv2d(half, quarter, 3),
            nn.Conv2d(quarter, 3, 3, padding=1),
        )

    def forward(self, x):
        return torch.tanh(self.body(x))


def downsample_known(mask, factor=4):
    """Feature-resolution mask: known only where the whole block is known."""
    return -F.max_pool2d(-mask, factor)


class InpaintGenerator(nn.Module):
    def __init__(self, config: InpaintConfig = None):
        super().__init__()
        self.config = config or InpaintConfig()
        cfg = self.config
        self.coarse = CoarseNet(cfg.coarse_channels)
        self.ca_extractor = FeatureExtractor(cfg.feature_channels)
        self.global_extractor = FeatureExtractor(cfg.feature_channels)
        self.aggregator = TemporalConv(cfg.feature_channels, cfg.num_frames, cfg.assembler_kernel)
        self.merger = TemporalConv(cfg.feature_channels, cfg.num_frames, cfg.assembler_kernel)
        self.decoder = Decoder(cfg.feature_channels)

    def coarse_frames(self, frames_in, masks):
        b, n = frames_in.shape[:2]
        out = self.coarse(frames_in.flatten(0, 1), masks.flatten(0, 1).to(frames_in.dtype))
        return out.view(b, n, *out.shape[1:])

    def align(self, coarse, masks, flows):
        """Warp every reference frame (and its mask) onto the target grid."""
        m = self.config.target_index
        if not self.config.use_warping:
            return coarse, masks.to(coarse.dtype)
        warped, warped_masks = [], []
        for i in range(coarse.shape[1]):
            if i == m:
                warped.append(coarse[:, i])
                warped_masks.append(masks[:, i].to(coarse.dtype))
                continue
            img, inb = warp_tensor(coarse[:, i], flows[:, i])
            soft, _ = warp_tensor(masks[:, i].to(coarse.dtype), flows[:, i])
            warped.append(img)
            warped_masks.append(((soft > 0.5) & (inb > 0)).to(coarse.dtype))
        return torch.stack(warped, 1), torch.stack(warped_masks, 1)

    def assemble(self, warped, warped_masks):
        """Extract, aggregate, attend and merge; returns the decoder input and the aggregated map."""
        cfg = self.config
        m = cfg.target_index
        x = torch.cat([warped, 1.0 - warped_masks], 2)
        ca_feats = self.ca_extractor(x, m)
        global_feats = self.global_extractor(x, m)
        aggregated = self.aggregator(ca_feats)
        small = downsample_known(warped_masks.flatten(0, 1)).view(*warped_masks.shape[:2], 1, *ca_feats.shape[-2:])
        if cfg.use_attention:
            attended = attention_layer(ca_feats[:, m], aggregated, small.amax(1), small[:, m],
                                       cfg.patch_size, cfg.attention_scale, cfg.attention_chunk)
        else:
            attended = aggregated
        merged = self.merger(global_feats)
        return torch.cat([attended, merged], 1), aggregated

    def refine(self, coarse, masks, flows):
        if flows is None or flows.shape[1] != coarse.shape[1]:
            raise BadSequence("refinement needs a flow for every reference frame")
        warped, warped_masks = self.align(coarse, masks, flows.to(coarse.dtype))
        features, _ = self.assemble(warped, warped_masks)
        return self.decoder(features)

    def forward(self, frames_in, masks, flows):
        """Returns ``(coarse, refined_target)``; coarse is composited with the known pixels
        before refinement."""
        _check_frames(frames_in, masks, self.config.num_frames)
        masks = masks.to(frames_in.dtype)
        coarse = self.coarse_frames(frames_in, masks)
        composite = masks * frames_in + (1 - masks) * coarse
        return coarse, self.refine(composite, masks, flows)


def _check_frames(frames, masks, num_frames):
    if frames.dim() != 5 or frames.shape[2] != 3:
        raise ShapeMismatch(f"frames must be (B,F,3,H,W), got {tuple(frames.shape)}")
    if masks.shape != (*frames.shape[:2], 1, *frames.shape[3:]):
        raise ShapeMismatch(f"masks {tuple(masks.shape)} do not match frames {tuple(frames.shape)}")
    if frames.shape[1] != num_frames:
        raise ShapeMismatch(f"expected {num_frames} frames, got {frames.shape[1]}")
    h, w = frames.shape[-2:]
    if h % 8 or w % 8:
        raise ShapeMismatch(f"frame size {h}x{w} must be divisible by 8")


class PatchDiscriminator(nn.Module):
    """Spectrally normalized fully convolutional discriminator (5x5, stride 2 per layer)."""

    def __init__(self, channels=64, num_layers=6, power_iterations=1):
        super().__init__()
        self.channels, self.num_layers = channels, num_layers
        widths = [4] + [channels * min(2 ** i, 4) for i in range(num_layers - 1)] + [1]
        self.layers = nn.ModuleList([
            spectral_norm(nn.Conv2d(widths[i], widths[i + 1], 5, 2, 2), n_power_iterations=power_iterations)
            for i in range(num_layers)
        ])

    def forward(self, image, mask):
        x = torch.cat([image, 1.0 - mask.to(image.dtype)], 1)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.leaky_relu(x, 0.2)
        return x[:, 0]


def layer_spectral_norms(disc: PatchDiscriminator):
    """Largest singular value of each normalized weight, reshaped to (out, in*k*k)."""
    with torch.no_grad():
        return [float(torch.linalg.matrix_norm(l.weight.flatten(1), ord=2)) for l in disc.layers]


def lipschitz_bound(disc: PatchDiscriminator):
    """Upper bound on the l2 Lipschitz constant of the discriminator.

    A k x k stride-s convolution applies its weight matrix to patches, and every
    input pixel appears in at most ceil(k/s)^2 patches, so its operator norm is at
    most ``ceil(k/s) * ||W||_2``. Leaky ReLU is 1-Lipschitz.
    """
    bound = 1.0
    for layer, sigma in zip(disc.layers, layer_spectral_norms(disc)):
        k, s = layer.kernel_size[0], layer.stride[0]
        bound *= sigma * -(-k // s)
    return bound


# ------------------------------------------------------------------ functional API

def _batched(x, dims):
    return (x, False) if x.dim() == dims else (x.unsqueeze(0), True)


def coarse_forward(frames_in, masks, params: InpaintGenerator):
    """Run the shared coarse network on every frame. Accepts (F,...) or (B,F,...)."""
    x, single = _batched(frames_in, 5)
    m, _ = _batched(masks, 5)
    _check_frames(x, m, x.shape[1])
    out = params.coarse_frames(x, m)
    return out[0] if single else out


def refine_forward(coarse, masks, flows, params: InpaintGenerator):
    """Inpaint the target frame from (composited) coarse frames, masks and flows."""
    x, single = _batched(coarse, 5)
    m, _ = _batched(masks, 5)
    if flows is None:
        raise BadSequence("missing flows")
    fl, _ = _batched(flows, 5)
    _check_frames(x, m, params.config.num_frames)
    out = params.refine(x, m, fl)
    return out[0] if single else out


def discriminator_forward(frame, mask, params: PatchDiscriminator):
    x, single = _batched(frame, 4)
    m, _ = _batched(mask, 4)
    if x.shape[1] != 3 or m.shape[-2:] != x.shape[-2:]:
        raise ShapeMismatch(f"discriminator input {tuple(x.shape)} / mask {tuple(m.shape)}")
    out = params(x, m)
    return out[0] if single else out


def composite_output(pred, image_in, mask):
    """Known pixels from ``image_in``, hole pixels from ``pred``.

    ``mask`` broadcasts against the images (use a singleton channel axis).
    """
    if isinstance(pred, torch.Tensor):
        m = mask.to(pred.dtype)
        return torch.where(m > 0.5, image_in.to(pred.dtype), pred)
    m = np.asarray(mask) > 0.5
    return np.where(m, np.asarray(image_in), np.asarray(pred))


def flows_to_tensor(flows, num_frames, target_index, height, width):
    """Pack F-1 FlowFields into an (F, 2, H, W) tensor with a zero target slot."""
    out = torch.zeros(num_frames, 2, height, width)
    refs = [i for i in range(num_frames) if i != target_index]
    if len(flows) != len(refs):
        raise BadSequence(f"expected {len(refs)} flows, got {len(flows)}")
    for i, f in zip(refs, flows):
        out[i] = torch.as_tensor(np.asarray(f.displacement, np.float32)).permute(2, 0, 1)
    return out


def save_inpaint(path, generator: InpaintGenerator, discriminator: Optional[PatchDiscriminator] = None,
                 extra=None):
    config = asdict(generator.config)
    tensors = {"generator": generator.state_dict()}
    if discriminator is not None:
        tensors["discriminator"] = discriminator.state_dict()
        config.update(disc_channels=discriminator.channels, disc_layers=discriminator.num_layers)
    save_checkpoint(path, "inpaint_gan", config, tensors, extra)


def load_inpaint(path):
    """Returns ``(generator, discriminator_or_None, payload)``."""
    payload = load_checkpoint(path, "inpaint_gan")
    cfg = InpaintConfig(**payload["meta"]["config"])
    gen = InpaintGenerator(cfg)
    gen.load_state_dict(payload["tensors"]["generator"])
    disc = None
    if "discriminator" in payload["tensors"]:
        disc = PatchDiscriminator(cfg.disc_channels, cfg.disc_layers)
        disc.load_state_dict(payload["tensors"]["discriminator"])
    return gen, disc, payload
