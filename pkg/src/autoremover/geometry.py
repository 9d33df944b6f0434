"""Depth-based flow fields and differentiable bilinear warping.

A flow field stores, for every pixel ``p`` of a target frame, the displacement
``U(p)`` to the location of the same scene point in a reference frame. Warping
a reference image with that flow resamples it onto the target pixel grid::

    warped(p) = source(p + U(p))

Sampling is bilinear and implemented with plain tensor ops, so gradients flow
to both the sampled values and the displacement.
"""

import os
import struct
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch

from .errors import BadCamera, ShapeMismatch

ArrayLike = Union[np.ndarray, torch.Tensor]


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with a per-pixel depth map.

    ``pose`` is the world-from-camera rigid transform, ``depth`` is in meters and
    ``depth_valid`` marks usable depth samples (defaults to ``depth > 0``).
    """

    intrinsics: np.ndarray
    pose: np.ndarray
    depth: np.ndarray
    depth_valid: Optional[np.ndarray] = None

    @classmethod
    def from_params(cls, fx, fy, cx, cy, pose=None, depth=None, depth_valid=None):
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        pose = np.eye(4) if pose is None else np.asarray(pose, dtype=np.float64)
        return cls(K, pose, np.asarray(depth, dtype=np.float64), depth_valid)

    @property
    def valid(self) -> np.ndarray:
        if self.depth_valid is not None:
            return np.asarray(self.depth_valid).astype(bool) & (self.depth > 0)
        return self.depth > 0

    def check(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        if K.shape != (3, 3) or not np.all(np.isfinite(K)):
            raise BadCamera(f"intrinsics must be a finite 3x3 matrix, got shape {K.shape}")
        if abs(np.linalg.det(K)) < 1e-12:
            raise BadCamera("intrinsics are not invertible")
        if np.any(np.tril(K, -1) != 0) or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise BadCamera("intrinsics must be upper-triangular with positive focal lengths")
        check_pose(self.pose)


def check_pose(pose):
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4) or not np.all(np.isfinite(pose)):
        raise BadCamera(f"pose must be a finite 4x4 matrix, got shape {pose.shape}")
    R = pose[:3, :3]
    if np.abs(R.T @ R - np.eye(3)).max() >= 1e-6 or np.linalg.det(R) <= 0:
        raise BadCamera("pose rotation block is not a proper rotation")


@dataclass(frozen=True)
class FlowField:
    """Dense displacement (H, W, 2) in pixels as (dx, dy), plus an (H, W) validity map."""

    displacement: ArrayLike
    valid: ArrayLike

    @property
    def shape(self):
        return tuple(self.displacement.shape[:2])

    @classmethod
    def zeros(cls, height, width):
        return cls(np.zeros((height, width, 2), np.float32), np.ones((height, width), np.uint8))

    @classmethod
    def constant(cls, height, width, dx, dy):
        disp = np.empty((height, width, 2), np.float32)
        disp[..., 0] = dx
        disp[..., 1] = dy
        return cls(disp, np.ones((height, width), np.uint8))

    def crop(self, top, left, height, width):
        """Re-index to a sub-window; displacement values are left untouched."""
        sl = (slice(top, top + height), slice(left, left + width))
        return FlowField(self.displacement[sl], self.valid[sl])


@dataclass(frozen=True)
class WarpResult:
    warped: ArrayLike
    in_bounds: ArrayLike


def flow_from_depth(camera: CameraModel, pose_ref) -> FlowField:
    """Flow from the camera's own frame to a reference camera with pose ``pose_ref``.

    Each valid pixel is back-projected with its depth, moved to world coordinates,
    expressed in the reference camera and projected again. Both cameras share the
    same intrinsics. Pixels with invalid depth or landing at z <= 0 in the
    reference camera get zero displacement and ``valid = 0``.
    """
    camera.check()
    pose_ref = np.asarray(pose_ref, dtype=np.float64)
    check_pose(pose_ref)
    K = np.asarray(camera.intrinsics, dtype=np.float64)
    depth = np.asarray(camera.depth, dtype=np.float64)
    h, w = depth.shape
    valid = camera.valid

    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    pix = np.stack([u, v, np.ones_like(u)], axis=-1)  # H,W,3
    rays = pix @ np.linalg.inv(K).T
    pts = rays * np.where(valid, depth, 0.0)[..., None]

    ref_from_target = np.linalg.inv(pose_ref) @ np.asarray(camera.pose, dtype=np.float64)
    pts_ref = pts @ ref_from_target[:3, :3].T + ref_from_target[:3, 3]
    z = pts_ref[..., 2]
    valid = valid & (z > 0)
    proj = pts_ref @ K.T
    safe_z = np.where(valid, z, 1.0)
    disp = np.stack([proj[..., 0] / safe_z - u, proj[..., 1] / safe_z - v], axis=-1)
    disp[~valid] = 0.0
    return FlowField(disp.astype(np.float32), valid.astype(np.uint8))


def warp_tensor(source: torch.Tensor, displacement: torch.Tensor):
    """Batched bilinear backward warp.

    source: (B, C, H, W); displacement: (B, 2, H, W) with channels (dx, dy).
    Returns ``(warped, in_bounds)`` with in_bounds shaped (B, 1, H, W). A pixel is
    in bounds when its sample point lies inside ``[0, W-1] x [0, H-1]``, i.e. every
    tap with nonzero weight is inside the source; elsewhere the output is 0.
    """
    if source.dim() != 4 or displacement.dim() != 4 or displacement.shape[1] != 2:
        raise ShapeMismatch(f"expected (B,C,H,W) and (B,2,H,W), got {tuple(source.shape)} and {tuple(displacement.shape)}")
    b, c, h, w = source.shape
    if displacement.shape[0] != b or displacement.shape[2:] != source.shape[2:]:
        raise ShapeMismatch(f"flow {tuple(displacement.shape)} does not match source {tuple(source.shape)}")

    dtype = source.dtype if source.is_floating_point() else torch.float32
    source = source.to(dtype)
    displacement = displacement.to(dtype)
    ys = torch.arange(h, dtype=dtype, device=source.device).view(1, h, 1)
    xs = torch.arange(w, dtype=dtype, device=source.device).view(1, 1, w)
    finite = torch.isfinite(displacement).all(dim=1)
    disp = torch.where(finite.unsqueeze(1), displacement, torch.zeros_like(displacement))
    x = xs + disp[:, 0]
    y = ys + disp[:, 1]
    in_bounds = finite & (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)

    x0f = torch.floor(x).detach()
    y0f = torch.floor(y).detach()
    wx = (x - x0f).unsqueeze(1)
    wy = (y - y0f).unsqueeze(1)
    x0 = x0f.clamp(0, w - 1).long()
    x1 = (x0f + 1).clamp(0, w - 1).long()
    y0 = y0f.clamp(0, h - 1).long()
    y1 = (y0f + 1).clamp(0, h - 1).long()

    flat = source.reshape(b, c, h * w)

    def tap(yi, xi):
        idx = (yi * w + xi).view(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, idx).view(b, c, h, w)

    out = ((1 - wx) * (1 - wy) * tap(y0, x0) + wx * (1 - wy) * tap(y0, x1)
           + (1 - wx) * wy * tap(y1, x0) + wx * wy * tap(y1, x1))
    mask = in_bounds.unsqueeze(1).to(dtype)
    return out * mask, mask


def _displacement_of(flow):
    return flow.displacement if isinstance(flow, FlowField) else flow


def warp_bilinear(source: ArrayLike, flow) -> WarpResult:
    """Warp an (H, W, C) or (H, W) image/feature map with a flow field.

    Works on numpy arrays or torch tensors; torch inputs keep their autograd graph
    (both through ``source`` and through the flow displacement).
    """
    disp = _displacement_of(flow)
    as_numpy = not isinstance(source, torch.Tensor)
    src = torch.as_tensor(source) if as_numpy else source
    squeeze = src.dim() == 2
    if squeeze:
        src = src.unsqueeze(-1)
    if src.dim() != 3:
        raise ShapeMismatch(f"source must be (H,W) or (H,W,C), got {tuple(src.shape)}")
    d = torch.as_tensor(disp) if not isinstance(disp, torch.Tensor) else disp
    if tuple(d.shape) != (src.shape[0], src.shape[1], 2):
        raise ShapeMismatch(f"flow shape {tuple(d.shape)} does not match source {tuple(src.shape)}")
    if src.is_floating_point() and d.dtype != src.dtype:
        d = d.to(src.dtype)
    warped, inb = warp_tensor(src.permute(2, 0, 1).unsqueeze(0), d.permute(2, 0, 1).unsqueeze(0))
    warped = warped[0].permute(1, 2, 0)
    if squeeze:
        warped = warped[..., 0]
    inb = inb[0, 0]
    if as_numpy:
        return WarpResult(warped.detach().numpy(), inb.numpy().astype(np.uint8))
    return WarpResult(warped, inb)


def warp_mask(mask: ArrayLike, flow) -> np.ndarray:
    """Warp a known/hole mask; a pixel stays known only if the interpolated value exceeds 0.5
    and the sample point is in bounds. Ties go to the hole."""
    m = np.asarray(mask, dtype=np.float64)
    res = warp_bilinear(m, np.asarray(_displacement_of(flow), dtype=np.float64))
    return ((res.warped > 0.5) & (res.in_bounds > 0)).astype(np.uint8)


def write_flow(path, flow: FlowField):
    """Write ``<H><W>`` (uint32 LE), float32 (dx, dy) pairs, then uint8 validity."""
    disp = np.ascontiguousarray(np.asarray(flow.displacement, dtype="<f4"))
    valid = np.ascontiguousarray(np.asarray(flow.valid, dtype=np.uint8))
    h, w = disp.shape[:2]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(struct.pack("<II", h, w))
        f.write(disp.tobytes())
        f.write(valid.tobytes())


def read_flow(path) -> FlowField:
    with open(path, "rb") as f:
        h, w = struct.unpack("<II", f.read(8))
        disp = np.frombuffer(f.read(h * w * 8), dtype="<f4")
        valid = np.frombuffer(f.read(h * w), dtype=np.uint8)
    if disp.size != h * w * 2 or valid.size != h * w:
        raise ShapeMismatch(f"truncated flow file {path}")
    return FlowField(disp.reshape(h, w, 2).astype(np.float32), valid.reshape(h, w).copy())
