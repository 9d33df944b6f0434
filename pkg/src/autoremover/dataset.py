"""Sequence loading, on-disk formats and preprocessing crops.

Layout of a dataset root::

    <root>/<seq_id>/image/<frame_id>.png    8-bit RGB
    <root>/<seq_id>/mask/<frame_id>.png     8-bit, 255 = known, 0 = hole
    <root>/<seq_id>/depth/<frame_id>.png    16-bit millimeters, 0 = invalid (optional)
    <root>/<seq_id>/poses.txt               frame_id + 16 row-major floats per line (optional)
    <root>/<seq_id>/intrinsics.txt          fx fy cx cy (optional)

In memory, pixels live in [-1, 1] and masks in {0, 1}.
"""

import glob
import logging
import os
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import cv2
import numpy as np
from PIL import Image

from .errors import MissingFrame, ShapeMismatch
from .geometry import CameraModel, FlowField, flow_from_depth

logger = logging.getLogger(__name__)

TRAIN_BOTTOM_CROP = (562, 226)  # (W, H)
TRAIN_CROP = (384, 192)
EVAL_CROP = (560, 448)


@dataclass(frozen=True)
class VideoSequence:
    """A window of ``F = 2 * delta + 1`` frames centred on ``target_index``.

    ``flows[j]`` is the flow from the target frame to ``reference_indices()[j]``.
    """

    frames: np.ndarray  # F,H,W,3 float32 in [-1, 1]
    masks: np.ndarray  # F,H,W uint8, 1 = known
    target_index: int
    delta: int
    flows: List[FlowField] = field(default_factory=list)
    frame_ids: Optional[List[int]] = None
    intrinsics: Optional[np.ndarray] = None
    poses: Optional[np.ndarray] = None  # F,4,4 world-from-camera
    depths: Optional[np.ndarray] = None  # F,H,W meters, 0 = invalid

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ShapeMismatch(f"frames must be (F,H,W,3), got {self.frames.shape}")
        n = self.frames.shape[0]
        if self.masks.shape != self.frames.shape[:3]:
            raise ShapeMismatch(f"masks {self.masks.shape} do not match frames {self.frames.shape}")
        if n != 2 * self.delta + 1 or self.target_index != self.delta:
            raise ShapeMismatch(f"{n} frames is not a window of half-width {self.delta} around index {self.target_index}")
        if self.flows and len(self.flows) != n - 1:
            raise ShapeMismatch(f"expected {n - 1} flows, got {len(self.flows)}")
        for f in self.flows:
            if f.shape != self.shape:
                raise ShapeMismatch(f"flow shape {f.shape} does not match frames {self.shape}")

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape[1:3]

    def reference_indices(self):
        return [i for i in range(self.num_frames) if i != self.target_index]

    def camera(self, index) -> CameraModel:
        if self.intrinsics is None or self.poses is None or self.depths is None:
            raise MissingFrame("sequence carries no depth/pose data")
        return CameraModel(self.intrinsics, self.poses[index], self.depths[index])

    def masked_input(self):
        """The incomplete frames ``I_gt * M``; hole pixels are exactly zero."""
        return self.frames * self.masks[..., None].astype(self.frames.dtype)


def reference_indices(num_frames, target_index):
    return [i for i in range(num_frames) if i != target_index]


# ---------------------------------------------------------------- file formats

def to_uint8(img):
    return np.clip(np.round((np.asarray(img, np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(img, dtype=np.float32):
    return (np.asarray(img, np.float64) / 127.5 - 1.0).astype(dtype)


def write_image(path, img):
    _ensure_dir(path)
    Image.fromarray(to_uint8(img)).save(path)


def read_image(path, dtype=np.float32):
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")), dtype)


def write_mask(path, mask):
    _ensure_dir(path)
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path)


def read_mask(path):
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) >= 128).astype(np.uint8)


def write_depth(path, depth_m):
    _ensure_dir(path)
    mm = np.clip(np.round(np.asarray(depth_m, np.float64) * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path)


def read_depth(path):
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 1000.0


def write_poses(path, frame_ids, poses):
    _ensure_dir(path)
    with open(path, "w") as f:
        for fid, pose in zip(frame_ids, poses):
            vals = " ".join(repr(float(v)) for v in np.asarray(pose, np.float64).ravel())
            f.write(f"{int(fid)} {vals}\n")


def read_poses(path):
    poses = {}
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 17:
                raise ValueError(f"{path}: expected frame id + 16 floats, got {len(parts)} fields")
            poses[int(parts[0])] = np.array([float(v) for v in parts[1:]]).reshape(4, 4)
    return poses


def write_intrinsics(path, K):
    _ensure_dir(path)
    K = np.asarray(K, np.float64)
    with open(path, "w") as f:
        f.write(" ".join(repr(float(v)) for v in (K[0, 0], K[1, 1], K[0, 2], K[1, 2])) + "\n")


def read_intrinsics(path):
    with open(path) as f:
        fx, fy, cx, cy = (float(v) for v in f.read().split())
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


def _ensure_dir(path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)


def frame_path(root, seq_id, kind, frame_id):
    """Resolve ``<root>/<seq>/<kind>/<frame_id>.png``; accepts zero-padded names."""
    base = os.path.join(root, seq_id, kind)
    for name in (f"{frame_id:06d}.png", f"{frame_id}.png"):
        p = os.path.join(base, name)
        if os.path.exists(p):
            return p
    for p in glob.glob(os.path.join(base, "*.png")):
        stem = os.path.splitext(os.path.basename(p))[0]
        if stem.isdigit() and int(stem) == frame_id:
            return p
    return None


def list_frame_ids(root, seq_id):
    files = glob.glob(os.path.join(root, seq_id, "image", "*.png"))
    return sorted(int(os.path.splitext(os.path.basename(p))[0]) for p in files
                  if os.path.splitext(os.path.basename(p))[0].isdigit())


def list_sequences(root):
    return sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d, "image")))


# ---------------------------------------------------------------- loading

def compute_flows(seq: VideoSequence) -> List[FlowField]:
    """Target-to-reference flows for every reference frame of the window."""
    cam = seq.camera(seq.target_index)
    return [flow_from_depth(cam, seq.poses[i]) for i in seq.reference_indices()]


@dataclass(frozen=True)
class FrameStack:
    """Frames of a sequence without the odd-window constraint (used for inference)."""

    frames: np.ndarray
    masks: np.ndarray
    frame_ids: List[int]
    intrinsics: Optional[np.ndarray] = None
    poses: Optional[np.ndarray] = None
    depths: Optional[np.ndarray] = None


def load_frames(root, seq_id, frame_ids) -> FrameStack:
    ids = list(frame_ids)
    frames, masks, depths = [], [], []
    for fid in ids:
        ip = frame_path(root, seq_id, "image", fid)
        mp = frame_path(root, seq_id, "mask", fid)
        if ip is None:
            raise MissingFrame(f"{seq_id}: no image for frame {fid}")
        if mp is None:
            raise MissingFrame(f"{seq_id}: no mask for frame {fid}")
        frames.append(read_image(ip))
        masks.append(read_mask(mp))
        dp = frame_path(root, seq_id, "depth", fid)
        depths.append(read_depth(dp) if dp is not None else None)

    shape = frames[0].shape[:2]
    for fid, img, m, d in zip(ids, frames, masks, depths):
        if img.shape[:2] != shape or m.shape != shape or (d is not None and d.shape != shape):
            raise ShapeMismatch(f"{seq_id}: frame {fid} resolution differs from {shape}")

    intrinsics = poses = depth_stack = None
    pose_path = os.path.join(root, seq_id, "poses.txt")
    k_path = os.path.join(root, seq_id, "intrinsics.txt")
    if all(d is not None for d in depths) and os.path.exists(pose_path) and os.path.exists(k_path):
        table = read_poses(pose_path)
        if all(fid in table for fid in ids):
            intrinsics = read_intrinsics(k_path)
            poses = np.stack([table[fid] for fid in ids])
            depth_stack = np.stack(depths)
    return FrameStack(np.stack(frames), np.stack(masks), ids, intrinsics, poses, depth_stack)


def load_sequence(root, seq_id, center_frame, delta) -> VideoSequence:
    """Load frames ``center - delta .. center + delta``; flows are computed when
    depth, poses and intrinsics are all present, otherwise left empty."""
    st = load_frames(root, seq_id, range(center_frame - delta, center_frame + delta + 1))
    seq = VideoSequence(st.frames, st.masks, delta, delta, [], st.frame_ids,
                        st.intrinsics, st.poses, st.depths)
    if seq.poses is not None and delta > 0:
        seq = replace(seq, flows=compute_flows(seq))
    return seq


def save_sequence(root, seq_id, seq: VideoSequence, frame_ids: Optional[Sequence[int]] = None):
    """Write a sequence in the on-disk layout (used for fixtures)."""
    ids = list(frame_ids if frame_ids is not None else (seq.frame_ids or range(seq.num_frames)))
    for k, fid in enumerate(ids):
        write_image(os.path.join(root, seq_id, "image", f"{fid:06d}.png"), seq.frames[k])
        write_mask(os.path.join(root, seq_id, "mask", f"{fid:06d}.png"), seq.masks[k])
        if seq.depths is not None:
            write_depth(os.path.join(root, seq_id, "depth", f"{fid:06d}.png"), seq.depths[k])
    if seq.poses is not None:
        write_poses(os.path.join(root, seq_id, "poses.txt"), ids, seq.poses)
    if seq.intrinsics is not None:
        write_intrinsics(os.path.join(root, seq_id, "intrinsics.txt"), seq.intrinsics)


# ---------------------------------------------------------------- preprocessing

def crop_sequence(seq: VideoSequence, top, left, height, width) -> VideoSequence:
    """Apply one spatial window to frames, masks, depths and flows alike."""
    h, w = seq.shape
    if top < 0 or left < 0 or top + height > h or left + width > w:
        raise ShapeMismatch(f"crop {width}x{height}+{left}+{top} exceeds frame {w}x{h}")
    sl = (slice(None), slice(top, top + height), slice(left, left + width))
    K = None
    if seq.intrinsics is not None:
        K = np.array(seq.intrinsics, np.float64)
        K[0, 2] -= left
        K[1, 2] -= top
    return replace(
        seq,
        frames=seq.frames[sl].copy(),
        masks=seq.masks[sl].copy(),
        flows=[f.crop(top, left, height, width) for f in seq.flows],
        intrinsics=K,
        depths=None if seq.depths is None else seq.depths[sl].copy(),
    )


def _check_size(seq, width, height):
    h, w = seq.shape
    if w < width or h < height:
        raise ShapeMismatch(f"frame {w}x{h} is smaller than crop {width}x{height}")


def bottom_crop(seq, size=TRAIN_BOTTOM_CROP):
    width, height = size
    _check_size(seq, width, height)
    h, w = seq.shape
    return crop_sequence(seq, h - height, (w - width) // 2, height, width)


def center_crop(seq, size=EVAL_CROP):
    width, height = size
    _check_size(seq, width, height)
    h, w = seq.shape
    return crop_sequence(seq, (h - height) // 2, (w - width) // 2, height, width)


def window_around_holes(shape, rng, size, hole_union=None):
    """Pick ``(top, left)`` of a ``size = (W, H)`` window containing at least one hole pixel.

    A pixel is drawn uniformly from the hole union, then the offset is drawn
    uniformly among the placements that contain it. Without holes the window is
    uniform.
    """
    width, height = size
    h, w = shape
    if w < width or h < height:
        raise ShapeMismatch(f"frame {w}x{h} is smaller than crop {width}x{height}")
    ys, xs = np.nonzero(hole_union) if hole_union is not None else ((), ())
    if len(ys) == 0:
        return int(rng.integers(0, h - height + 1)), int(rng.integers(0, w - width + 1))
    k = int(rng.integers(0, len(ys)))
    py, px = int(ys[k]), int(xs[k])
    top = int(rng.integers(max(0, py - height + 1), min(py, h - height) + 1))
    left = int(rng.integers(max(0, px - width + 1), min(px, w - width) + 1))
    return top, left


def train_crop_window(shape, rng, holes, bottom_size=TRAIN_BOTTOM_CROP, crop_size=TRAIN_CROP):
    """Bottom crop followed by a random crop around the holes, as one window in
    input coordinates: ``(top, left, height, width)``.

    ``holes`` is an (F, H, W) stack of masks (0 = hole) or None.
    """
    h, w = shape
    bw, bh = bottom_size
    if w < bw or h < bh:
        raise ShapeMismatch(f"frame {w}x{h} is smaller than bottom crop {bw}x{bh}")
    b_top, b_left = h - bh, (w - bw) // 2
    union = None
    if holes is not None:
        union = np.any(np.asarray(holes)[:, b_top:, b_left:b_left + bw] == 0, axis=0)
    top, left = window_around_holes((bh, bw), rng, crop_size, union)
    return b_top + top, b_left + left, crop_size[1], crop_size[0]


def preprocess_train(seq: VideoSequence, rng: np.random.Generator, bottom_size=TRAIN_BOTTOM_CROP,
                     crop_size=TRAIN_CROP, holes=None) -> VideoSequence:
    """Bottom crop, then a random crop that intersects the holes (``holes`` defaults to
    the sequence masks)."""
    window = train_crop_window(seq.shape, rng, seq.masks if holes is None else holes, bottom_size, crop_size)
    return crop_sequence(seq, *window)


def preprocess_eval(seq: VideoSequence, size=EVAL_CROP) -> VideoSequence:
    return center_crop(seq, size)


def downsample(seq: VideoSequence, factor=4, method="area") -> VideoSequence:
    """Shrink a sequence by an integer factor.

    Images use area (or bilinear) filtering, masks stay known only where the whole
    source block was known, depth uses nearest sampling, flows and intrinsics are
    rescaled.
    """
    if factor == 1:
        return seq
    interp = {"area": cv2.INTER_AREA, "bilinear": cv2.INTER_LINEAR}[method]
    h, w = seq.shape
    nh, nw = h // factor, w // factor

    def rs(a, mode):
        return cv2.resize(np.ascontiguousarray(a), (nw, nh), interpolation=mode)

    frames = np.stack([rs(f, interp) for f in seq.frames]).astype(np.float32)
    masks = np.stack([(rs(m.astype(np.float32), cv2.INTER_AREA) > 1 - 1e-6) for m in seq.masks]).astype(np.uint8)
    depths = None if seq.depths is None else np.stack([rs(d, cv2.INTER_NEAREST) for d in seq.depths])
    flows = [FlowField(rs(np.asarray(f.displacement, np.float32), cv2.INTER_NEAREST) / factor,
                       rs(np.asarray(f.valid, np.uint8), cv2.INTER_NEAREST)) for f in seq.flows]
    K = None
    if seq.intrinsics is not None:
        K = np.array(seq.intrinsics, np.float64)
        K[:2] /= factor
        # pixel-centre convention: continuous coordinate of pixel centres shifts by half a pixel
        K[0, 2] = (seq.intrinsics[0, 2] + 0.5) / factor - 0.5
        K[1, 2] = (seq.intrinsics[1, 2] + 0.5) / factor - 0.5
    return replace(seq, frames=frames, masks=masks, depths=depths, flows=flows, intrinsics=K)
