"""Contextual attention: fill hole features from similar known-region patches.

Every foreground location takes the k x k patch around it, scores it against all
valid background patches by cosine similarity, turns the scores into a softmax
distribution and pastes the score-weighted average of background patches back.
Overlapping pastes are averaged.

Patch vectors are flattened channel-major, ``(C, ky, kx)``, which is the layout of
``torch.nn.functional.unfold``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .errors import BadArgument, NoBackground, ShapeMismatch

DEFAULT_PATCH_SIZE = 3
DEFAULT_SCALE = 10.0
COSINE_EPS = 1e-8


@dataclass
class PatchSet:
    """Flattened patches with their centre coordinates and validity.

    ``origins[n]`` is the (y, x) centre of patch n in its source map and
    ``frame_index[n]`` the source map it came from.
    """

    patches: torch.Tensor  # N, C*k*k
    origins: np.ndarray  # N, 2
    frame_index: np.ndarray  # N
    source_validity: torch.Tensor  # N bool
    k: int
    stride: int
    pad: int

    def __len__(self):
        return self.patches.shape[0]

    @property
    def num_valid(self):
        return int(self.source_validity.sum())


def _to_tchw(features):
    t = features if isinstance(features, torch.Tensor) else torch.as_tensor(np.asarray(features))
    if t.dim() == 3:
        t = t.unsqueeze(0)
    if t.dim() != 4:
        raise ShapeMismatch(f"features must be (H,W,C) or (T,H,W,C), got {tuple(t.shape)}")
    return t.permute(0, 3, 1, 2)


def extract_patches(features, k=DEFAULT_PATCH_SIZE, stride=1, same_padding=True, mask=None) -> PatchSet:
    """Slice (H, W, C) or (T, H, W, C) feature maps into k x k patches.

    With ``same_padding`` the maps are zero-padded by ``k // 2`` and there is one
    patch per ``stride``-spaced pixel. When a known/hole ``mask`` ((H, W) or
    (T, H, W)) is given, patches touching any hole pixel are marked invalid;
    padding counts as known.
    """
    if k < 1 or k % 2 == 0:
        raise BadArgument(f"patch size must be a positive odd integer, got {k}")
    if stride < 1:
        raise BadArgument(f"stride must be >= 1, got {stride}")
    x = _to_tchw(features)
    t, c, h, w = x.shape
    pad = k // 2 if same_padding else 0
    if k > min(h, w) + 2 * pad:
        raise ShapeMismatch(f"patch size {k} exceeds padded map {h}x{w} (pad {pad})")
    if not x.is_floating_point():
        x = x.float()

    cols = F.unfold(x, k, padding=pad, stride=stride)  # T, C*k*k, L
    n_y = (h + 2 * pad - k) // stride + 1
    n_x = (w + 2 * pad - k) // stride + 1
    patches = cols.permute(0, 2, 1).reshape(t * n_y * n_x, c * k * k)

    cy = np.arange(n_y) * stride - pad + k // 2
    cx = np.arange(n_x) * stride - pad + k // 2
    grid = np.stack(np.meshgrid(cy, cx, indexing="ij"), -1).reshape(-1, 2)
    origins = np.tile(grid, (t, 1))
    frame_index = np.repeat(np.arange(t), n_y * n_x)

    if mask is None:
        validity = torch.ones(len(patches), dtype=torch.bool)
    else:
        m = torch.as_tensor(np.asarray(mask) if not isinstance(mask, torch.Tensor) else mask)
        if m.dim() == 2:
            m = m.unsqueeze(0)
        if tuple(m.shape) != (t, h, w):
            raise ShapeMismatch(f"mask {tuple(m.shape)} does not match features {(t, h, w)}")
        hole = (m <= 0.5).to(torch.float32).unsqueeze(1)
        touched = F.unfold(hole, k, padding=pad, stride=stride).amax(dim=1)  # T, L
        validity = (touched.reshape(-1) == 0)
    return PatchSet(patches, origins, frame_index, validity, k, stride, pad)


def cosine_scores(query, keys, valid, scale):
    """Softmax over ``scale * cos(query, key)``; invalid keys get zero weight."""
    dots = query @ keys.T
    qn = torch.linalg.vector_norm(query, dim=1, keepdim=True)
    kn = torch.linalg.vector_norm(keys, dim=1, keepdim=True)
    sim = dots / (qn * kn.T + COSINE_EPS)
    logits = (scale * sim).masked_fill(~valid.view(1, -1), float("-inf"))
    return torch.softmax(logits, dim=1)


def attend(fg_chw, bg, valid, k, scale, chunk_size=None, return_scores=False):
    """Core attention on one (C, H, W) foreground map against flattened bg patches.

    Returns the overlap-averaged reconstruction (C, H, W) and optionally the (H*W, N)
    score matrix. ``chunk_size`` bounds the number of foreground locations scored
    at once.
    """
    c, h, w = fg_chw.shape
    pad = k // 2
    fg_cols = F.unfold(fg_chw.unsqueeze(0), k, padding=pad)[0].T  # H*W, D
    bg = bg.to(fg_cols.dtype)
    n_loc = fg_cols.shape[0]
    step = n_loc if not chunk_size else int(chunk_size)
    pastes, scores = [], []
    for start in range(0, n_loc, step):
        s = cosine_scores(fg_cols[start:start + step], bg, valid, scale)
        pastes.append(s @ bg)
        if return_scores:
            scores.append(s)
    paste = torch.cat(pastes, 0)  # H*W, D
    summed = F.fold(paste.T.unsqueeze(0), (h, w), k, padding=pad)[0]
    ones = torch.ones(1, 1, h, w, dtype=paste.dtype, device=paste.device)
    counts = F.fold(F.unfold(ones, k, padding=pad), (h, w), k, padding=pad)[0]
    recon = summed / counts
    return recon, (torch.cat(scores, 0) if return_scores else None)


def contextual_attention(fg, bg_patches: PatchSet, fg_mask=None, scale=DEFAULT_SCALE,
                         chunk_size: Optional[int] = None, return_scores=True):
    """Reconstruct an (H, W, C) foreground map from background patches.

    Returns ``(reconstructed, scores)`` with scores shaped (H, W, N); every row of
    scores sums to one over the valid patches. If ``fg_mask`` is given, known
    foreground features (mask 1) are kept and only hole locations take the
    reconstruction. Numpy inputs give numpy outputs; torch inputs keep autograd.
    """
    if scale <= 0:
        raise BadArgument(f"scale must be positive, got {scale}")
    if bg_patches.num_valid == 0:
        raise NoBackground("no valid background patch to attend to")
    as_numpy = not isinstance(fg, torch.Tensor)
    fg_t = torch.as_tensor(np.asarray(fg)) if as_numpy else fg
    if fg_t.dim() != 3:
        raise ShapeMismatch(f"foreground must be (H,W,C), got {tuple(fg_t.shape)}")
    h, w, c = fg_t.shape
    k = bg_patches.k
    if bg_patches.patches.shape[1] != c * k * k:
        raise ShapeMismatch(f"background patch length {bg_patches.patches.shape[1]} != {c}*{k}*{k}")

    recon, scores = attend(fg_t.permute(2, 0, 1), bg_patches.patches, bg_patches.source_validity,
                           k, scale, chunk_size, return_scores)
    recon = recon.permute(1, 2, 0)
    if fg_mask is not None:
        m = torch.as_tensor(np.asarray(fg_mask) if not isinstance(fg_mask, torch.Tensor) else fg_mask)
        m = m.to(recon.dtype).unsqueeze(-1)
        recon = m * fg_t.to(recon.dtype) + (1 - m) * recon
    if scores is not None:
        scores = scores.reshape(h, w, -1)
    if as_numpy:
        return recon.detach().numpy(), None if scores is None else scores.detach().numpy()
    return recon, scores


def attention_layer(fg, bg, bg_known, fg_known=None, k=DEFAULT_PATCH_SIZE, scale=DEFAULT_SCALE,
                    chunk_size=None):
    """Batched attention for network use.

    fg, bg: (B, C, H, W); bg_known, fg_known: (B, 1, H, W) with 1 = known. A
    sample without any fully-known background patch falls back to attending over
    all patches instead of failing.
    """
    pad = k // 2
    out = []
    for b in range(fg.shape[0]):
        bg_cols = F.unfold(bg[b:b + 1], k, padding=pad)[0].T
        hole = (bg_known[b:b + 1] <= 0.5).to(bg.dtype)
        valid = F.unfold(hole, k, padding=pad)[0].amax(0) == 0
        if not bool(valid.any()):
            valid = torch.ones_like(valid)
        recon, _ = attend(fg[b], bg_cols, valid, k, scale, chunk_size)
        if fg_known is not None:
            m = fg_known[b]
            recon = m * fg[b] + (1 - m) * recon
        out.append(recon)
    return torch.stack(out, 0)
