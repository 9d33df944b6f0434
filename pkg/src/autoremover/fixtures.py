"""Synthetic scenes with exact geometry, used by tests, demos and smoke training.

The background is a fronto-parallel textured plane at constant depth. The camera
translates along x, so the true target-to-reference flow is the constant
``-fx * (t_ref - t_target) / depth``. The texture is an analytic sum of
sinusoids, so every frame is rendered exactly rather than resampled.
"""

from dataclasses import replace

import numpy as np

from .dataset import VideoSequence, compute_flows
from .geometry import FlowField, flow_from_depth
from .maskgen import box_mask, generate_temporal_masks


class Texture:
    """Random band-limited colour texture over plane coordinates in pixels."""

    def __init__(self, rng, n_waves=12, min_period=6.0, max_period=40.0):
        periods = np.exp(rng.uniform(np.log(min_period), np.log(max_period), n_waves))
        angles = rng.uniform(0, np.pi, n_waves)
        self.freq = np.stack([np.cos(angles), np.sin(angles)], 1) * (2 * np.pi / periods)[:, None]
        self.phase = rng.uniform(0, 2 * np.pi, (n_waves, 3))
        amp = rng.uniform(0.3, 1.0, (n_waves, 3))
        self.amp = 0.85 * amp / amp.sum(0, keepdims=True)
        self.offset = rng.uniform(-0.1, 0.1, 3)

    def __call__(self, xp, yp):
        arg = xp[..., None] * self.freq[:, 0] + yp[..., None] * self.freq[:, 1]  # ..., n_waves
        vals = (np.sin(arg[..., None] + self.phase) * self.amp).sum(-2)
        return np.clip(vals + self.offset, -1, 1).astype(np.float32)


def _intrinsics(fx, height, width):
    return np.array([[fx, 0.0, (width - 1) / 2.0], [0.0, fx, (height - 1) / 2.0], [0.0, 0.0, 1.0]])


def plane_sequence(num_frames=5, height=64, width=96, shift_px=22.0, depth=10.0, fx=80.0, seed=0,
                   texture=None, with_flows=True) -> VideoSequence:
    """Camera sliding along x over a textured plane; all masks fully known.

    Consecutive frames are ``shift_px`` pixels apart on the image plane.
    """
    rng = np.random.default_rng(seed)
    texture = texture or Texture(rng)
    K = _intrinsics(fx, height, width)
    step = shift_px * depth / fx
    m = num_frames // 2
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    frames, poses = [], []
    for i in range(num_frames):
        tx = (i - m) * step
        pose = np.eye(4)
        pose[0, 3] = tx
        poses.append(pose)
        frames.append(texture(u - K[0, 2] + tx * fx / depth, v - K[1, 2]))
    seq = VideoSequence(np.stack(frames), np.ones((num_frames, height, width), np.uint8), m, m, [],
                        list(range(num_frames)), K, np.stack(poses),
                        np.full((num_frames, height, width), depth))
    if with_flows and num_frames > 1:
        seq = replace(seq, flows=compute_flows(seq))
    return seq


def consecutive_flows(seq: VideoSequence):
    """Flows on frame t+1 pointing into frame t, for t = 0 .. F-2."""
    return [flow_from_depth(seq.camera(t + 1), seq.poses[t]) for t in range(seq.num_frames - 1)]


def reference_to_target_flows(seq: VideoSequence):
    """Flows on each reference frame's grid pointing into the target frame."""
    m = seq.target_index
    return [flow_from_depth(seq.camera(i), seq.poses[m]) for i in seq.reference_indices()]


def moving_hole_masks(num_frames, height, width, rng, hole_size=24, jitter_px=3.0, object_step=0.0,
                      center=None):
    """Temporally consistent box holes for an object drifting ``object_step`` px per frame
    in image space (0 = moving along with the camera), plus per-frame jitter."""
    m = num_frames // 2
    if center is None:
        cy = int(rng.integers(hole_size // 2, height - hole_size // 2 + 1))
        cx = int(rng.integers(hole_size // 2, width - hole_size // 2 + 1))
    else:
        cy, cx = center
    base = box_mask(height, width, cy - hole_size // 2, cx - hole_size // 2, hole_size, hole_size)
    flows = [FlowField.constant(height, width, -(i - m) * object_step, 0.0)
             for i in range(num_frames) if i != m]
    others = generate_temporal_masks(base, flows, rng, jitter_px)
    others.insert(m, base)
    return np.stack(others)


# ---------------------------------------------------------------- shadow scenes

SHADOW_DARKENING = 0.4


def darken(img, factor=SHADOW_DARKENING):
    return ((np.asarray(img) + 1.0) * factor - 1.0).astype(np.float32)


def place_car(clean, rng, top, left, car_h, car_w, shadow_h):
    """Paint a car box with a cast shadow band below it.

    Returns ``(observed, object_mask, shadow_label)``; object_mask uses 1 = known,
    shadow_label is 1 on shadowed background pixels.
    """
    h, w = clean.shape[:2]
    observed = clean.copy()
    shadow = np.zeros((h, w), np.uint8)
    s_top, s_left = top + car_h, max(left - 2, 0)
    shadow[s_top:s_top + shadow_h, s_left:left + car_w + 2] = 1
    observed[shadow > 0] = darken(clean[shadow > 0])
    obj = box_mask(h, w, top, left, car_h, car_w)
    colour = rng.uniform(-0.8, 0.8, 3).astype(np.float32)
    car = colour + rng.normal(0, 0.05, (car_h, car_w, 3)).astype(np.float32)
    observed[top:top + car_h, left:left + car_w] = np.clip(car, -1, 1)
    return observed, obj, shadow


def shadow_image(height=32, width=32, seed=0):
    """One labelled shadow example: a car with a dark band under it on textured ground."""
    rng = np.random.default_rng(seed)
    tex = Texture(rng)
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    clean = tex(u + rng.uniform(0, 500), v + rng.uniform(0, 500))
    car_h = int(rng.integers(height // 5, height // 3 + 1))
    car_w = int(rng.integers(width // 4, width // 2 + 1))
    shadow_h = int(rng.integers(3, max(4, height // 6) + 1))
    top = int(rng.integers(1, height - car_h - shadow_h))
    left = int(rng.integers(2, width - car_w - 2))
    observed, obj, shadow = place_car(clean, rng, top, left, car_h, car_w, shadow_h)
    return {"rgb": observed, "clean": clean, "object_mask": obj, "shadow": shadow}


def shadow_dataset(n, height=32, width=32, seed=0):
    return [shadow_image(height, width, seed * 1000 + i) for i in range(n)]


def shadow_scene_sequence(num_frames=5, height=64, width=96, shift_px=8.0, seed=0, car_size=(16, 28),
                          shadow_h=6):
    """Plane sequence with a car (and its shadow) moving along with the camera.

    Returns ``(observed_seq, clean_seq, shadow_labels)``. ``observed_seq.masks`` are
    the car masks only; the clean sequence has the true background everywhere.
    """
    rng = np.random.default_rng(seed)
    clean = plane_sequence(num_frames, height, width, shift_px, seed=seed)
    car_h, car_w = car_size
    top = int(rng.integers(4, height - car_h - shadow_h - 4))
    left = int(rng.integers(4, width - car_w - 4))
    obs_frames, masks, shadows = [], [], []
    for i in range(num_frames):
        jitter = int(rng.integers(-1, 2))
        o, m, s = place_car(clean.frames[i], rng, top, left + jitter, car_h, car_w, shadow_h)
        obs_frames.append(o)
        masks.append(m)
        shadows.append(s)
    observed = replace(clean, frames=np.stack(obs_frames), masks=np.stack(masks))
    return observed, clean, np.stack(shadows)
