"""Hole synthesis and mask editing.

Masks follow the pipeline convention: 1 = known background, 0 = hole.
"""

import numpy as np
from scipy import ndimage

from .errors import BadArgument, ShapeMismatch
from .geometry import FlowField, warp_bilinear

DEFAULT_JITTER_PX = 3.0
DEFAULT_SHADOW_THRESHOLD = 0.5


def _as_mask(mask):
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ShapeMismatch(f"mask must be (H,W), got {m.shape}")
    return (m > 0).astype(np.uint8)


def generate_temporal_masks(base_mask, flows, rng, jitter_px=DEFAULT_JITTER_PX):
    """Propagate a target-frame hole onto other frames.

    ``flows[i]`` maps pixels of frame i into the frame that owns ``base_mask``
    (backward-warp convention, as in :func:`geometry.warp_bilinear`). Each output is
    the base hole warped by ``flows[i]`` plus a uniform random displacement in
    ``[-jitter_px, jitter_px]^2`` drawn per frame. The hole indicator is what gets
    resampled, so pixels whose sample falls outside the base frame become known
    rather than hole. Results are binarized at 0.5.
    """
    base = _as_mask(base_mask)
    hole = (1 - base).astype(np.float64)
    out = []
    for flow in flows:
        disp = np.asarray(flow.displacement if isinstance(flow, FlowField) else flow, np.float64)
        if disp.shape[:2] != base.shape:
            raise ShapeMismatch(f"flow {disp.shape[:2]} does not match mask {base.shape}")
        shift = rng.uniform(-jitter_px, jitter_px, size=2) if jitter_px > 0 else np.zeros(2)
        warped = warp_bilinear(hole, disp + shift).warped
        out.append((warped < 0.5).astype(np.uint8))
    return out


def merge_shadow_mask(object_mask, shadow_prob, threshold=DEFAULT_SHADOW_THRESHOLD):
    """Extend an object hole with pixels whose shadow probability reaches ``threshold``."""
    m = _as_mask(object_mask)
    p = np.asarray(shadow_prob)
    if p.shape != m.shape:
        raise ShapeMismatch(f"shadow map {p.shape} does not match mask {m.shape}")
    if not 0 < threshold < 1:
        raise BadArgument(f"threshold must lie in (0, 1), got {threshold}")
    return (m.astype(bool) & (p < threshold)).astype(np.uint8)


def city_block_disc(radius):
    r = np.arange(-radius, radius + 1)
    return (np.abs(r)[:, None] + np.abs(r)[None, :]) <= radius


def dilate_mask(mask, radius):
    """Grow the hole by an L1 disc of the given radius."""
    if radius < 0:
        raise BadArgument(f"radius must be >= 0, got {radius}")
    m = _as_mask(mask)
    if radius == 0:
        return m
    hole = ndimage.binary_dilation(m == 0, structure=city_block_disc(radius))
    return (~hole).astype(np.uint8)


def box_mask(height, width, top, left, box_h, box_w):
    m = np.ones((height, width), np.uint8)
    m[max(top, 0):top + box_h, max(left, 0):left + box_w] = 0
    return m


def random_box_mask(height, width, rng, min_size=8, max_size=None):
    """A single rectangular hole with random size and position."""
    max_size = max_size or min(height, width) // 2
    bh = int(rng.integers(min_size, max_size + 1))
    bw = int(rng.integers(min_size, max_size + 1))
    top = int(rng.integers(0, height - bh + 1))
    left = int(rng.integers(0, width - bw + 1))
    return box_mask(height, width, top, left, bh, bw)
