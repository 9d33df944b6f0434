"""End-to-end inference: shadow-extended masks, then sliding-window inpainting."""

import logging
import os

import numpy as np
import torch

from .errors import BadSequence
from .geometry import CameraModel, flow_from_depth, read_flow, write_flow
from .inpaint_net import InpaintGenerator, composite_output
from .maskgen import DEFAULT_SHADOW_THRESHOLD, merge_shadow_mask
from .shadow_net import shadow_forward

logger = logging.getLogger(__name__)

CACHE_ENV = "AUTOREMOVER_CACHE"


def window_indices(num_frames, center, delta):
    """Indices ``center - delta .. center + delta`` clamped to the sequence; boundary
    frames are duplicated."""
    return [min(max(center + k, 0), num_frames - 1) for k in range(-delta, delta + 1)]


def flow_cache_path(root, seq_id, src_id, dst_id):
    return os.path.join(root, seq_id, "flow", f"{src_id}_{dst_id}.bin")


class FlowProvider:
    """Target-to-reference flows from depth and poses, optionally memoized on disk
    under ``$AUTOREMOVER_CACHE/<seq>/flow/<src>_<dst>.bin``."""

    def __init__(self, intrinsics, poses, depths, frame_ids=None, seq_id=None, cache_root=None):
        if intrinsics is None or poses is None or depths is None:
            raise BadSequence("inference needs depth maps, poses and intrinsics")
        self.intrinsics = np.asarray(intrinsics)
        self.poses = np.asarray(poses)
        self.depths = np.asarray(depths)
        self.frame_ids = list(frame_ids) if frame_ids is not None else list(range(len(self.poses)))
        self.seq_id = seq_id
        self.cache_root = cache_root if cache_root is not None else os.environ.get(CACHE_ENV)

    def __call__(self, src, dst):
        path = None
        if self.cache_root and self.seq_id is not None:
            path = flow_cache_path(self.cache_root, self.seq_id, self.frame_ids[src], self.frame_ids[dst])
            if os.path.exists(path):
                return read_flow(path)
        flow = flow_from_depth(CameraModel(self.intrinsics, self.poses[src], self.depths[src]), self.poses[dst])
        if path is not None:
            write_flow(path, flow)
        return flow


def shadow_extended_masks(frames, object_masks, shadow_model, threshold=DEFAULT_SHADOW_THRESHOLD):
    out = []
    for frame, mask in zip(frames, object_masks):
        prob = shadow_forward(frame, mask, shadow_model)
        out.append(merge_shadow_mask(mask, prob, threshold))
    return np.stack(out)


@torch.no_grad()
def inpaint_sequence(frames, masks, flow_provider, generator: InpaintGenerator):
    """Inpaint every frame with a window of F frames centred on it.

    frames: (N, H, W, 3) in [-1, 1]; masks: (N, H, W), 1 = known. Returns
    (N, H, W, 3) with known pixels copied from the input.
    """
    generator.eval()
    n_frames = generator.config.num_frames
    delta = n_frames // 2
    n, h, w = masks.shape
    masks = masks.astype(np.float32)
    frames_in = frames * masks[..., None]
    outputs = np.empty_like(frames, dtype=np.float32)
    for t in range(n):
        idx = window_indices(n, t, delta)
        flows = torch.zeros(1, n_frames, 2, h, w)
        for slot, i in enumerate(idx):
            if slot != delta and i != t:
                disp = np.asarray(flow_provider(t, i).displacement, np.float32)
                flows[0, slot] = torch.from_numpy(disp).permute(2, 0, 1)
        x = torch.from_numpy(np.ascontiguousarray(frames_in[idx])).permute(0, 3, 1, 2).unsqueeze(0)
        m = torch.from_numpy(masks[idx]).unsqueeze(1).unsqueeze(0)
        _, refined = generator(x, m, flows)
        pred = refined[0].permute(1, 2, 0).numpy()
        outputs[t] = composite_output(pred, frames_in[t], masks[t][..., None])
    return outputs


def remove_objects(frames, object_masks, flow_provider, generator, shadow_model=None,
                   threshold=DEFAULT_SHADOW_THRESHOLD):
    """Full pipeline. Without ``shadow_model`` the object masks are used as they are.

    Returns ``(inpainted_frames, hole_masks_used)``.
    """
    masks = np.asarray(object_masks, np.uint8)
    if shadow_model is not None:
        masks = shadow_extended_masks(frames, masks, shadow_model, threshold)
    return inpaint_sequence(frames, masks, flow_provider, generator), masks
