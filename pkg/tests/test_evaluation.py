import numpy as np
import pytest

from conftest import make_frame, scene_window
from oracles import brute_distance_to
from rgbdseg.evaluation import (
    SWEEP_HEADER,
    chamfer34_distance,
    chamfer_error,
    distance_to,
    explained_variation,
    extract_boundaries,
    frame_errors,
    sweep,
    temporal_consistency,
    write_sweep_csv,
)
from rgbdseg.graph_seg import Segmentation, build_window, segment_linear_baseline, segment_multistage
from rgbdseg.hierarchy import DEFAULT_ZETA
from rgbdseg.estimators import HierarchicalSegmenter
from rgbdseg.synthetic import two_plane_scene


def test_constant_map_has_no_boundary():
    assert not extract_boundaries(np.full((5, 6), 3)).any()


def test_vertical_split_marks_both_sides():
    labels = np.array([[1, 1, 2, 2]] * 4)
    b = extract_boundaries(labels)
    assert b.sum() == 8
    assert b[:, 1:3].all() and not b[:, [0, 3]].any()


def test_single_pixel_marks_itself_and_neighbours():
    labels = np.ones((5, 5), int)
    labels[2, 2] = 2
    b = extract_boundaries(labels)
    assert b.sum() == 5
    assert b[2, 2] and b[1, 2] and b[3, 2] and b[2, 1] and b[2, 3]


def test_unlabelled_pixels_do_not_create_boundaries():
    labels = np.array([[1, 0, 1]])
    assert not extract_boundaries(labels).any()


def test_identical_boundaries_have_zero_error():
    gt = extract_boundaries(np.array([[1, 1, 2, 2]] * 4))
    assert chamfer_error(gt, gt) == 0.0


def test_shifted_line_costs_one_over_width():
    h, w = 12, 20
    gt = np.zeros((h, w), bool)
    gt[:, 7] = True
    out = np.zeros((h, w), bool)
    out[:, 8] = True
    assert chamfer_error(out, gt) == pytest.approx(1 / w)


def test_error_is_one_directional():
    a = np.zeros((8, 8), bool)
    a[:, 2] = True
    b = a.copy()
    b[:, 6] = True  # a is a subset of b
    assert chamfer_error(a, b) == 0.0
    assert chamfer_error(b, a) == pytest.approx(8 * 4 / 64)


def test_empty_ground_truth_is_an_error():
    with pytest.raises(ValueError):
        chamfer_error(np.ones((3, 3), bool), np.zeros((3, 3), bool))
    with pytest.raises(ValueError):
        chamfer_error(np.ones((3, 3), bool), np.ones((3, 4), bool))
    with pytest.raises(ValueError):
        chamfer_error(np.ones((3, 3), bool), np.ones((3, 3), bool), mask="5-7")


def test_exact_transform_matches_brute_force(rng):
    for _ in range(20):
        b = rng.random((16, 16)) < rng.uniform(0.01, 0.2)
        if not b.any():
            b[0, 0] = True
        assert np.allclose(distance_to(b), brute_distance_to(b), atol=1e-12)


def test_chamfer34_bounds_exact_distance(rng):
    for _ in range(20):
        b = rng.random((24, 24)) < 0.05
        b[3, 3] = True
        exact = distance_to(b)
        approx = chamfer34_distance(b)
        # diagonal steps cost 4/3 instead of sqrt(2); straight runs are exact
        assert np.all(approx >= exact * 4 / (3 * np.sqrt(2)) - 1e-9)
        assert np.all(approx <= exact * 1.06 + 1e-9)
        assert np.array_equal(approx == 0, exact == 0)


def test_frame_errors_skip_frames_without_truth():
    gt = [np.ones((4, 4), int), np.array([[1, 1, 2, 2]] * 4)]
    pred = [np.ones((4, 4), int), np.array([[1, 2, 2, 2]] * 4)]
    errs = frame_errors(pred, gt)
    assert len(errs) == 1 and errs[0] > 0


def lab_window(lab, depth=5000):
    h, w, _ = lab.shape
    f = make_frame((0, 0, 0), np.full((h, w), depth))
    win = build_window([f], [])
    win.lab[:] = lab.reshape(-1, 3)
    return win


def test_explained_variation_endpoints(rng):
    lab = rng.uniform(0, 100, (4, 5, 3))
    w = lab_window(lab)
    singletons = Segmentation(np.arange(1, 21, dtype=np.int32), 20)
    whole = Segmentation(np.ones(20, np.int32), 1)
    assert explained_variation(w, singletons) == pytest.approx(1.0)
    assert explained_variation(w, whole) == pytest.approx(0.0)


def test_explained_variation_of_exact_two_colour_split():
    lab = np.zeros((4, 6, 3))
    lab[:, :3] = (30, 10, 10)
    lab[:, 3:] = (70, -20, 5)
    w = lab_window(lab)
    seg = Segmentation((1 + (np.indices((4, 6))[1] >= 3)).ravel().astype(np.int32), 2)
    assert explained_variation(w, seg) == pytest.approx(1.0)


def test_zero_variance_is_one():
    w = lab_window(np.full((3, 3, 3), 40.0))
    assert explained_variation(w, Segmentation(np.ones(9, np.int32), 1)) == 1.0


def test_explained_variation_orders_hierarchy_levels():
    w, _ = scene_window(two_plane_scene(32, 24, n_frames=2, texture=10.0))
    est = HierarchicalSegmenter(k_color=50).fit(w)
    over = explained_variation(w, est.overseg_)
    cut = explained_variation(w, est.segmentation_)
    single = explained_variation(w, Segmentation((w.valid).astype(np.int32), 1))
    assert 1.0 >= over >= cut >= single == 0.0
    assert est.zeta == DEFAULT_ZETA


def test_sweep_rows_and_csv(tmp_path):
    w, gt = scene_window(two_plane_scene(32, 24, n_frames=2))
    methods = {
        "multistage": lambda win, v: segment_multistage(win),
        "baseline": lambda win, v: segment_linear_baseline(win, v),
    }
    rows = sweep({"two-plane": (w, gt)}, "alpha", [0.2, 0.8], methods)
    assert len(rows) == 4
    ms = [r.e_bound for r in rows if r.method == "multistage"]
    assert ms[0] == ms[1]  # multistage ignores alpha
    write_sweep_csv(tmp_path / "s.csv", rows)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_HEADER) == "scene,method,param,value,frame,E_bound"
    assert lines[1].startswith("two-plane,multistage,alpha,0.2,mean,")


def test_temporal_consistency_scores():
    gt = np.zeros((4, 2, 4), int)
    gt[:, :, :2] = 1
    gt[:, :, 2:] = 2
    pred = np.where(gt == 1, 10, 20)
    assert temporal_consistency(pred, gt) == 1.0
    # object 2 switches ID in one frame
    pred2 = pred.copy()
    pred2[3][gt[3] == 2] = 30
    assert temporal_consistency(pred2, gt) == pytest.approx(7 / 8)
    # both objects share one ID: neither counts in the merged frames
    merged = pred.copy()
    merged[:1] = 10
    assert temporal_consistency(merged, gt) == pytest.approx(6 / 8)
    assert temporal_consistency(pred2, gt, objects=[1]) == 1.0
    with pytest.raises(ValueError):
        temporal_consistency(pred, np.zeros_like(gt))
