import numpy as np
import pytest

from conftest import make_frame
from rgbdseg.rgbd_io import CameraIntrinsics, RgbdFrame
from rgbdseg.scene_flow import (
    BlockMatchingFlow,
    FlowField2D,
    dense_flow,
    flow_to_array,
    lift_flow,
    read_flow,
    round_half_up,
    scene_flow,
    write_flow,
)


def textured(h=48, w=64, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (h, w, 3), dtype=np.uint8)


def shifted_pair(di, dj, h=48, w=64, seed=0, depth=None):
    img = textured(h, w, seed)
    nxt = np.roll(img, (dj, di), axis=(0, 1))
    depth = np.full((h, w), 7500) if depth is None else depth
    k = CameraIntrinsics.default_for(w, h)
    return RgbdFrame(img, depth, 0.0, k), RgbdFrame(nxt, np.roll(depth, (dj, di), axis=(0, 1)), 1.0, k)


def test_identical_frames_give_zero_flow():
    a, _ = shifted_pair(0, 0)
    f = dense_flow(a, a)
    assert np.all(f.di[f.valid] == 0) and np.all(f.dj[f.valid] == 0)


@pytest.mark.parametrize("shift", [(3, 0), (0, 2), (-2, 1), (4, -3), (-4, 4)])
def test_integer_shift_recovered_on_interior(shift):
    a, b = shifted_pair(*shift)
    f = dense_flow(a, b)
    inner = (slice(8, -8), slice(8, -8))
    assert np.all(f.di[inner] == shift[0])
    assert np.all(f.dj[inner] == shift[1])


@pytest.mark.parametrize("size", [(48, 64), (96, 128)])
def test_shift_beyond_radius_mostly_recovered(size):
    # larger motion relies on the coarser levels, which are not exact on iid noise
    a, b = shifted_pair(5, -3, *size)
    f = dense_flow(a, b)
    inner = (slice(8, -8), slice(8, -8))
    ok = (f.di[inner] == 5) & (f.dj[inner] == -3)
    assert ok.mean() > 0.95


def test_textureless_pair_has_zero_flow():
    a = make_frame((120, 80, 40), np.full((24, 32), 5000))
    f = dense_flow(a, a)
    assert not f.di.any() and not f.dj.any()


def test_flow_invalid_where_source_depth_missing():
    depth = np.full((48, 64), 5000)
    depth[10:20, 10:20] = 0
    a, b = shifted_pair(1, 0, depth=depth)
    f = dense_flow(a, b)
    assert np.array_equal(f.valid, depth > 0)


def test_dimension_mismatch():
    a = make_frame((0, 0, 0), np.ones((4, 4)))
    b = make_frame((0, 0, 0), np.ones((4, 5)))
    with pytest.raises(ValueError):
        dense_flow(a, b)


def test_estimator_is_pluggable():
    a, b = shifted_pair(2, 0)
    calls = []

    def fixed(p, n):
        calls.append(1)
        return FlowField2D(np.full(p.shape, 2.0), np.zeros(p.shape), p.valid.copy())

    sf = scene_flow(a, b, fixed)
    assert calls and np.allclose(sf.uvw[sf.valid][:, 0], 2 * 1.5 / a.intrinsics.fx)


def test_block_matching_rejects_bad_settings():
    with pytest.raises(ValueError):
        BlockMatchingFlow(patch=4)
    with pytest.raises(ValueError):
        BlockMatchingFlow(levels=0)


def test_zero_flow_static_depth_is_zero_field():
    a = make_frame((5, 5, 5), np.full((4, 4), 6000))
    sf = lift_flow(a, a, FlowField2D.zeros(a.shape))
    assert np.all(sf.valid) and not sf.uvw.any()


def test_u_hand_example():
    # di=2, z_n = 1 m, fx = 500 -> u = 0.004
    k = CameraIntrinsics(500.0, 500.0, 3.5, 1.5, 5000.0)
    a = make_frame((0, 0, 0), np.full((4, 8), 5000), k)
    flow = FlowField2D(np.full((4, 8), 2.0), np.zeros((4, 8)), np.ones((4, 8), bool))
    sf = lift_flow(a, a, flow)
    assert sf.uvw[0, 0, 0] == pytest.approx(0.004, abs=1e-15)
    assert not sf.valid[:, 6:].any()  # targets beyond the right edge


def test_w_hand_example():
    a = make_frame((0, 0, 0), np.full((2, 3), 7500))
    b = make_frame((0, 0, 0), np.full((2, 3), 10000))
    sf = lift_flow(a, b, FlowField2D.zeros((2, 3)))
    assert np.all(sf.uvw[..., 2] == 0.5)


def test_target_rounds_half_up():
    assert round_half_up(np.array([0.5, 1.5, -0.5, -1.5, 2.49])).tolist() == [1, 2, 0, -1, 2]
    a = make_frame((0, 0, 0), np.full((1, 4), 5000))
    flow = FlowField2D(np.full((1, 4), 0.5), np.zeros((1, 4)), np.ones((1, 4), bool))
    sf = lift_flow(a, a, flow)
    assert sf.target_i.tolist() == [[1, 2, 3, -1]]


def test_invalid_target_depth_marks_invalid():
    a = make_frame((0, 0, 0), np.full((1, 3), 5000))
    depth = np.full((1, 3), 5000)
    depth[0, 1] = 0
    b = make_frame((0, 0, 0), depth)
    flow = FlowField2D(np.ones((1, 3)), np.zeros((1, 3)), np.ones((1, 3), bool))
    sf = lift_flow(a, b, flow)
    assert sf.valid.tolist() == [[False, True, False]]


def test_uv_scale_linearly_with_depth():
    rng = np.random.default_rng(4)
    d = rng.integers(3000, 9000, (10, 12))
    flow = FlowField2D(rng.integers(-2, 3, (10, 12)).astype(float), rng.integers(-2, 3, (10, 12)).astype(float),
                       np.ones((10, 12), bool))
    one = lift_flow(make_frame((0, 0, 0), d), make_frame((0, 0, 0), d), flow)
    two = lift_flow(make_frame((0, 0, 0), 2 * d), make_frame((0, 0, 0), 2 * d), flow)
    assert np.array_equal(one.valid, two.valid)
    assert np.array_equal(2 * one.uvw[..., :2], two.uvw[..., :2])


def test_w_antisymmetric_under_reversed_shift():
    rng = np.random.default_rng(5)
    depth = rng.integers(4000, 8000, (48, 64))
    a, b = shifted_pair(2, 1, depth=depth)
    fwd = scene_flow(a, b)
    back = scene_flow(b, a)
    inner = (slice(8, -8), slice(8, -8))
    w_fwd = fwd.uvw[inner][..., 2]
    # back flow at the target pixel undoes the forward depth change
    w_back = back.uvw[..., 2][fwd.target_j[inner], fwd.target_i[inner]]
    assert np.array_equal(w_fwd, -w_back)


def test_flw1_round_trip(tmp_path):
    a, b = shifted_pair(1, 1, h=6, w=5)
    sf = scene_flow(a, b)
    write_flow(tmp_path / "f.flw", flow_to_array(sf))
    raw = (tmp_path / "f.flw").read_bytes()
    assert raw[:4] == b"FLW1"
    assert int.from_bytes(raw[4:8], "little") == 5 and int.from_bytes(raw[8:12], "little") == 6
    assert len(raw) == 12 + 5 * 6 * 3 * 4
    back = read_flow(tmp_path / "f.flw")
    assert np.array_equal(back, sf.uvw.astype(np.float32))
    (tmp_path / "bad").write_bytes(b"XXXX")
    with pytest.raises(ValueError):
        read_flow(tmp_path / "bad")
