import os
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from autoremover import dataset as ds
from autoremover.errors import MissingFrame, ShapeMismatch
from autoremover.fixtures import plane_sequence
from autoremover.geometry import FlowField


def _seq(h, w, n=5, seed=0, flows=True):
    rng = np.random.default_rng(seed)
    frames = rng.uniform(-1, 1, (n, h, w, 3)).astype(np.float32)
    masks = np.ones((n, h, w), np.uint8)
    fl = [FlowField(rng.normal(size=(h, w, 2)).astype(np.float32), np.ones((h, w), np.uint8))
          for _ in range(n - 1)] if flows else []
    return ds.VideoSequence(frames, masks, n // 2, n // 2, fl, list(range(n)))


def _coord_seq(h, w, n=3):
    """Sequence whose every channel encodes pixel coordinates, for crop bookkeeping."""
    v, u = np.mgrid[0:h, 0:w].astype(np.float32)
    code = np.stack([u, v, u + v], -1)
    frames = np.repeat(code[None], n, 0)
    flow = FlowField(np.stack([u, v], -1), np.ones((h, w), np.uint8))
    K = np.array([[50.0, 0, w / 2], [0, 50.0, h / 2], [0, 0, 1]])
    return ds.VideoSequence(frames, np.ones((n, h, w), np.uint8), n // 2, n // 2, [flow] * (n - 1),
                            list(range(n)), K, np.repeat(np.eye(4)[None], n, 0),
                            np.repeat((u * 1000 + v)[None], n, 0))


# ------------------------------------------------------------------ io

def test_image_round_trip_within_quantization(tmp_path):
    img = np.random.default_rng(0).uniform(-1, 1, (7, 9, 3)).astype(np.float32)
    p = str(tmp_path / "a.png")
    ds.write_image(p, img)
    assert np.abs(ds.read_image(p) - img).max() <= 1 / 255 + 1e-6


def test_mask_and_depth_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    m = (rng.random((6, 5)) > 0.5).astype(np.uint8)
    ds.write_mask(str(tmp_path / "m.png"), m)
    assert np.array_equal(ds.read_mask(str(tmp_path / "m.png")), m)
    d = rng.uniform(0.5, 60, (6, 5))
    d[0, 0] = 0
    ds.write_depth(str(tmp_path / "d.png"), d)
    back = ds.read_depth(str(tmp_path / "d.png"))
    assert np.abs(back - d).max() <= 0.0005 + 1e-9
    assert back[0, 0] == 0


def test_load_sequence_window(tmp_path):
    seq = plane_sequence(7, 16, 24, shift_px=3, seed=2)
    ds.save_sequence(str(tmp_path), "s", seq)
    out = ds.load_sequence(str(tmp_path), "s", 3, 2)
    assert out.num_frames == 5 and out.target_index == 2 and out.frame_ids == [1, 2, 3, 4, 5]
    assert len(out.flows) == 4
    assert np.abs(out.flows[0].displacement[..., 0] - 6.0).max() < 0.05
    single = ds.load_sequence(str(tmp_path), "s", 3, 0)
    assert single.num_frames == 1 and single.flows == []


def test_load_without_camera_leaves_flows_empty(tmp_path):
    seq = replace(plane_sequence(5, 16, 24, seed=2), depths=None)
    ds.save_sequence(str(tmp_path), "s", seq)
    out = ds.load_sequence(str(tmp_path), "s", 2, 2)
    assert out.flows == [] and out.poses is None


def test_missing_frame(tmp_path):
    ds.save_sequence(str(tmp_path), "s", plane_sequence(5, 16, 24, seed=2))
    os.remove(tmp_path / "s" / "image" / "000003.png")
    with pytest.raises(MissingFrame):
        ds.load_sequence(str(tmp_path), "s", 2, 2)


def test_mismatched_resolution(tmp_path):
    ds.save_sequence(str(tmp_path), "s", plane_sequence(5, 16, 24, seed=2))
    ds.write_image(str(tmp_path / "s" / "image" / "000001.png"), np.zeros((8, 8, 3)))
    with pytest.raises(ShapeMismatch):
        ds.load_sequence(str(tmp_path), "s", 2, 2)


def test_sequence_invariants():
    with pytest.raises(ShapeMismatch):
        ds.VideoSequence(np.zeros((4, 8, 8, 3)), np.ones((4, 8, 8)), 2, 2)
    seq = _seq(8, 8)
    assert seq.reference_indices() == [0, 1, 3, 4]


def test_masked_input_zero_in_holes():
    seq = _seq(8, 8)
    masks = (np.random.default_rng(3).random((5, 8, 8)) > 0.4).astype(np.uint8)
    seq = replace(seq, masks=masks)
    x = seq.masked_input()
    assert (x[masks == 0] == 0).all()


# ------------------------------------------------------------------ crops

def test_preprocess_train_shape_and_determinism():
    seq = _seq(226, 562, n=3)
    a = ds.preprocess_train(seq, np.random.default_rng(7))
    b = ds.preprocess_train(seq, np.random.default_rng(7))
    assert a.shape == (192, 384)
    assert np.array_equal(a.frames, b.frames) and np.array_equal(a.masks, b.masks)


def test_preprocess_train_crop_hits_hole():
    seq = _seq(226, 562, n=3, flows=False)
    masks = np.ones_like(seq.masks)
    masks[:, 100:110, 10:20] = 0  # hole in the left half only
    seq = replace(seq, masks=masks)
    for s in range(20):
        out = ds.preprocess_train(seq, np.random.default_rng(s))
        assert (out.masks == 0).any()


def test_preprocess_train_too_small():
    with pytest.raises(ShapeMismatch):
        ds.preprocess_train(_seq(100, 300, n=1), np.random.default_rng(0))


def test_preprocess_eval_center():
    seq = _coord_seq(600, 800, n=1)
    out = ds.preprocess_eval(seq)
    assert out.shape == (448, 560)
    assert out.frames[0, 0, 0, 0] == 120 and out.frames[0, 0, 0, 1] == 76
    same = ds.preprocess_eval(_coord_seq(448, 560, n=1))
    assert np.array_equal(same.frames, _coord_seq(448, 560, n=1).frames)
    with pytest.raises(ShapeMismatch):
        ds.preprocess_eval(_seq(440, 560, n=1))


def test_flow_crop_values_reindexed():
    seq = _seq(600, 800, n=3)
    out = ds.preprocess_eval(seq)
    oy, ox = 76, 120
    for y, x in ((0, 0), (10, 33), (447, 559)):
        assert np.array_equal(out.flows[1].displacement[y, x], seq.flows[1].displacement[y + oy, x + ox])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_all_arrays_share_the_crop(seed):
    seq = _coord_seq(60, 90)
    out = ds.preprocess_train(seq, np.random.default_rng(seed), bottom_size=(80, 50), crop_size=(40, 24))
    top = int(out.frames[0, 0, 0, 1])
    left = int(out.frames[0, 0, 0, 0])
    assert np.array_equal(out.flows[0].displacement[..., 0], out.frames[1, ..., 0])
    assert np.array_equal(out.flows[0].displacement[..., 1], out.frames[1, ..., 1])
    assert np.array_equal(out.depths[0], out.frames[0, ..., 0] * 1000 + out.frames[0, ..., 1])
    assert np.array_equal(out.masks.shape[1:], out.frames.shape[1:3])
    assert out.intrinsics[0, 2] == seq.intrinsics[0, 2] - left
    assert out.intrinsics[1, 2] == seq.intrinsics[1, 2] - top
    assert 60 - 50 <= top and top + 24 <= 60


def test_downsample_area_quarter():
    seq = plane_sequence(3, 64, 96, shift_px=8, seed=0)
    small = ds.downsample(seq, 4)
    assert small.shape == (16, 24)
    assert np.allclose(small.frames[0, 0, 0], seq.frames[0, :4, :4].mean((0, 1)), atol=1e-5)
    assert np.allclose(small.flows[0].displacement, seq.flows[0].displacement[::4, ::4] / 4)
