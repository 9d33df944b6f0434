import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from autoremover.errors import BadCamera, ShapeMismatch
from autoremover.geometry import (CameraModel, FlowField, flow_from_depth, read_flow, warp_bilinear,
                                  warp_mask, write_flow)
from oracles import backproject_pixel, central_difference, project_points, rel_error, warp_loop


def _K(fx=80.0, fy=80.0, cx=15.5, cy=11.5):
    return np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])


def _pose(tx=0.0, ty=0.0, tz=0.0, yaw=0.0):
    c, s = np.cos(yaw), np.sin(yaw)
    p = np.eye(4)
    p[:3, :3] = [[c, 0, s], [0, 1, 0], [-s, 0, c]]
    p[:3, 3] = [tx, ty, tz]
    return p


# ------------------------------------------------------------------ warp

def test_warp_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        src = rng.normal(size=(16, 16, 3))
        disp = rng.uniform(-4, 4, size=(16, 16, 2))
        res = warp_bilinear(src, disp)
        ref, inb = warp_loop(src, disp)
        assert np.array_equal(res.in_bounds, inb)
        assert np.abs(res.warped - ref).max() < 1e-6


def test_zero_flow_is_identity():
    src = np.random.default_rng(1).normal(size=(9, 7, 2))
    res = warp_bilinear(src, FlowField.zeros(9, 7))
    assert np.allclose(res.warped, src)
    assert res.in_bounds.all()


def test_integer_shift_matches_index_oracle():
    src = np.random.default_rng(2).normal(size=(10, 12, 3))
    res = warp_bilinear(src, FlowField.constant(10, 12, 3, 0))
    assert np.allclose(res.warped[:, :9], src[:, 3:])
    assert res.in_bounds[:, :9].all() and not res.in_bounds[:, 9:].any()
    assert (res.warped[:, 9:] == 0).all()


def test_far_out_of_bounds():
    res = warp_bilinear(np.ones((5, 5, 1)), FlowField.constant(5, 5, 10, 0))
    assert not res.in_bounds.any()
    assert (res.warped == 0).all()


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        warp_bilinear(np.zeros((4, 4, 3)), np.zeros((4, 5, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_warp_within_tap_hull(seed):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(8, 8, 2))
    disp = rng.uniform(-3, 3, size=(8, 8, 2))
    res = warp_bilinear(src, disp)
    for y, x in zip(*np.nonzero(res.in_bounds)):
        sx, sy = x + disp[y, x, 0], y + disp[y, x, 1]
        x0, y0 = int(np.floor(sx)), int(np.floor(sy))
        taps = src[y0:min(y0 + 2, 8), x0:min(x0 + 2, 8)].reshape(-1, 2)
        assert (res.warped[y, x] >= taps.min(0) - 1e-9).all()
        assert (res.warped[y, x] <= taps.max(0) + 1e-9).all()


def _non_integer_flow(rng, shape, lo=-2.0, hi=2.0):
    disp = rng.uniform(lo, hi, size=shape)
    frac = disp - np.floor(disp)
    return disp + np.where(frac < 0.1, 0.2, 0) - np.where(frac > 0.9, 0.2, 0)


def test_warp_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    src0 = rng.normal(size=(6, 6, 2))
    disp0 = _non_integer_flow(rng, (6, 6, 2), -1.5, 1.5)
    weights = rng.normal(size=(6, 6, 2))

    def loss(src, disp):
        return (warp_bilinear(src, disp).warped * torch.as_tensor(weights)).sum()

    s = torch.tensor(src0, requires_grad=True)
    d = torch.tensor(disp0, requires_grad=True)
    loss(s, d).backward()
    num_s = central_difference(lambda a: float(loss(torch.tensor(a), torch.tensor(disp0))), src0.copy(), 1e-3)
    num_d = central_difference(lambda a: float(loss(torch.tensor(src0), torch.tensor(a))), disp0.copy(), 1e-3)
    assert rel_error(s.grad.numpy(), num_s) < 1e-4
    assert rel_error(d.grad.numpy(), num_d) < 1e-4


def test_warp_keeps_torch_graph():
    src = torch.randn(5, 5, 3, requires_grad=True)
    res = warp_bilinear(src, torch.zeros(5, 5, 2))
    assert res.warped.requires_grad


# ------------------------------------------------------------------ warp_mask

def test_warp_mask_identity_and_bounds():
    m = (np.random.default_rng(4).random((8, 8)) > 0.5).astype(np.uint8)
    assert np.array_equal(warp_mask(m, FlowField.zeros(8, 8)), m)
    ones = np.ones((8, 8), np.uint8)
    out = warp_mask(ones, FlowField.constant(8, 8, 4, 0))
    assert (out[:, :4] == 1).all() and (out[:, 4:] == 0).all()


def test_warp_mask_half_pixel_checker():
    m = (np.indices((8, 8)).sum(0) % 2).astype(np.uint8)
    out = warp_mask(m, FlowField.constant(8, 8, 0.5, 0))
    ref, inb = warp_loop(m[..., None].astype(np.float64), np.broadcast_to([0.5, 0.0], (8, 8, 2)))
    expected = ((ref[..., 0] > 0.5) & (inb > 0)).astype(np.uint8)
    assert np.array_equal(out, expected)
    # every interpolated value is exactly 0.5, which goes to the hole
    assert not out.any()


def test_warp_mask_quarter_pixel_checker():
    m = (np.indices((8, 8)).sum(0) % 2).astype(np.uint8)
    out = warp_mask(m, FlowField.constant(8, 8, 0.25, 0))
    ref, inb = warp_loop(m[..., None].astype(np.float64), np.broadcast_to([0.25, 0.0], (8, 8, 2)))
    assert np.array_equal(out, ((ref[..., 0] > 0.5) & (inb > 0)).astype(np.uint8))
    assert np.array_equal(out[:, :7], m[:, :7])


# ------------------------------------------------------------------ flow from depth

def test_identity_pose_gives_zero_flow():
    rng = np.random.default_rng(5)
    cam = CameraModel(_K(), _pose(1, 2, 3, 0.3), rng.uniform(1, 20, (24, 32)))
    f = flow_from_depth(cam, _pose(1, 2, 3, 0.3))
    assert f.valid.all()
    assert np.abs(f.displacement).max() < 1e-9


def test_fronto_parallel_translation_closed_form():
    Z, t, fx = 12.0, 0.7, 80.0
    cam = CameraModel(_K(fx), _pose(), np.full((24, 32), Z))
    f = flow_from_depth(cam, _pose(tx=t))
    assert np.abs(f.displacement[..., 0] - (-fx * t / Z)).max() < 1e-3
    assert np.abs(f.displacement[..., 1]).max() < 1e-3


def test_invalid_depth_and_behind_camera():
    depth = np.full((6, 8), 2.0)
    depth[1, 1] = 0
    f = flow_from_depth(CameraModel(_K(cx=3.5, cy=2.5), _pose(), depth), _pose(tz=5.0))
    assert f.valid[1, 1] == 0 and f.displacement[1, 1].tolist() == [0, 0]
    # reference camera 5 m ahead of a plane at 2 m: everything is behind it
    assert not f.valid.any()


def test_bad_intrinsics():
    K = _K()
    K[0, 0] = 0
    with pytest.raises(BadCamera):
        flow_from_depth(CameraModel(K, _pose(), np.ones((4, 4))), _pose())


def test_flow_matches_per_pixel_reprojection():
    rng = np.random.default_rng(6)
    K = _K()
    pose_t, pose_r = _pose(0.2, -0.1, 0.3, 0.05), _pose(-0.4, 0.1, 0.0, -0.08)
    depth = rng.uniform(3, 15, (24, 32))
    f = flow_from_depth(CameraModel(K, pose_t, depth), pose_r)
    for v in range(0, 24, 5):
        for u in range(0, 32, 7):
            p = backproject_pixel(K, pose_t, u, v, depth[v, u])
            uu, vv, _ = project_points(K, pose_r, [p])[0]
            assert abs(f.displacement[v, u, 0] - (uu - u)) < 1e-3
            assert abs(f.displacement[v, u, 1] - (vv - v)) < 1e-3


def test_composition_on_tilted_plane():
    # plane z = 10 + 0.05 x in the target camera, rotated reference camera
    K = _K()
    h, w = 24, 32
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    # ray (a, b, 1) * z with z = 10 + 0.05 * a * z  ->  z = 10 / (1 - 0.05 a)
    a = (u - K[0, 2]) / K[0, 0]
    depth = 10.0 / (1 - 0.05 * a)
    pose_r = _pose(0.5, 0.0, 0.2, 0.03)
    f = flow_from_depth(CameraModel(K, np.eye(4), depth), pose_r)
    pts = [backproject_pixel(K, np.eye(4), uu, vv, depth[vv, uu]) for vv in range(h) for uu in range(w)]
    proj = project_points(K, pose_r, pts)
    target = np.stack([u.ravel(), v.ravel()], 1) + f.displacement.reshape(-1, 2)
    assert np.abs(target - proj[:, :2]).max() < 1e-3


# ------------------------------------------------------------------ flow files

def test_flow_file_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    flow = FlowField(rng.normal(size=(5, 7, 2)).astype(np.float32), (rng.random((5, 7)) > 0.3).astype(np.uint8))
    p = tmp_path / "seq" / "flow" / "2_0.bin"
    write_flow(str(p), flow)
    assert p.stat().st_size == 8 + 5 * 7 * 8 + 5 * 7
    back = read_flow(str(p))
    assert np.array_equal(back.displacement, flow.displacement)
    assert np.array_equal(back.valid, flow.valid)


def test_flow_crop_reindexes():
    rng = np.random.default_rng(8)
    flow = FlowField(rng.normal(size=(10, 12, 2)).astype(np.float32), np.ones((10, 12), np.uint8))
    c = flow.crop(2, 3, 5, 6)
    assert np.array_equal(c.displacement[1, 4], flow.displacement[3, 7])
