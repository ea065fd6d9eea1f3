import numpy as np
import pytest

from conftest import scene_window
from rgbdseg.features import DEFAULT_HISTOGRAMS, RegionFeatures, compute_features
from rgbdseg.graph_seg import segment_multistage
from rgbdseg.synthetic import moving_boxes_scene, tabletop_scene
from rgbdseg.temporal_match import (
    MatchParams,
    TrackState,
    blocking_pairs,
    calibrate_gates,
    centroid_distance,
    distance_matrix,
    histogram_distance,
    match_windows,
    mutual_best_matching,
    region_distance,
    size_distance,
)


def features(bin_of=0, size=100, centroid=(0.0, 0.0, 1.0), mass=None):
    """Region whose every histogram holds all ``size`` counts in ``bin_of``."""
    hists = []
    for spec in DEFAULT_HISTOGRAMS:
        h = np.zeros(spec.bins)
        h[bin_of] = size
        hists.append(h)
    if mass is not None:
        hists[0] = np.asarray(mass, float)
    counts = np.array([h.sum() for h in hists])
    return RegionFeatures(tuple(hists), counts, size, np.asarray(centroid, float), np.zeros(3))


def test_identical_features_have_zero_distance():
    r = features()
    assert histogram_distance(r, r) == 0.0
    d = region_distance(r, r)
    assert d.h == 0.0 and d.admissible


def test_disjoint_histograms_reach_maximum():
    assert histogram_distance(features(0), features(1)) == pytest.approx(18.0)


def test_half_split_l_histogram():
    s_mass = np.zeros(20)
    s_mass[:2] = 50
    assert histogram_distance(features(0), features(0, mass=s_mass)) == pytest.approx(1.0)


def test_histograms_are_normalised_per_region():
    assert histogram_distance(features(0, size=10), features(0, size=1000)) == 0.0


def test_centroid_distance_scales_with_size():
    s = features(centroid=(0.0, 0.0, 1.0))
    assert centroid_distance(features(size=100, centroid=(0.1, 0.2, 1.3)), s) == pytest.approx(0.006)
    assert centroid_distance(features(size=1000, centroid=(0.1, 0.2, 1.3)), s) == pytest.approx(0.0006)
    assert centroid_distance(s, s) == 0.0


def test_centroid_distance_advects_by_mean_flow():
    s = RegionFeatures(features().hists, features().hist_counts, 100, np.array([0.0, 0.0, 1.0]),
                       np.array([0.01, 0.0, 0.0]))
    r = features(centroid=(0.04, 0.0, 1.0))
    assert centroid_distance(r, s, steps=4) == pytest.approx(0.0)


def test_size_distance():
    assert size_distance(features(size=100), features(size=100)) == 0
    assert size_distance(features(size=100), features(size=140)) == 40


def test_weighted_sum_with_default_weights():
    s_mass = np.zeros(20)
    s_mass[:2] = 70
    r = features(size=100, centroid=(0.1, 0.2, 1.3))
    s = features(size=140, centroid=(0.0, 0.0, 1.0), mass=s_mass)
    d = region_distance(r, s, MatchParams(beta=1, gamma=10, epsilon=0.001))
    assert (d.dh, d.dd, d.dn) == pytest.approx((1.0, 0.006, 40))
    assert d.h == pytest.approx(1.10)


@pytest.mark.parametrize("gate", ["max_dh", "max_dd", "max_dn_ratio"])
def test_any_failed_gate_makes_pair_inadmissible(gate):
    r = features(0, size=100, centroid=(0.1, 0.2, 1.3))
    s = features(1, size=300)
    p = MatchParams.ungated()
    assert region_distance(r, s, p).admissible
    setattr(p, gate, 0.001)
    d = region_distance(r, s, p)
    assert not d.admissible and np.isfinite(d.h)


def test_negative_parameters_rejected():
    with pytest.raises(ValueError):
        MatchParams(gamma=-1.0)


def test_two_by_two_hand_trace():
    assert mutual_best_matching(np.array([[1.0, 2.0], [2.0, 1.0]])) == [(0, 0), (1, 1)]


def test_mutual_best_resolves_chains():
    # row 0 and column 1 prefer each other; row 1 then takes column 0
    h = np.array([[2.0, 1.0], [1.5, 3.0]])
    assert mutual_best_matching(h) == [(0, 1), (1, 0)]


def test_ties_break_toward_lower_index():
    assert mutual_best_matching(np.ones((2, 2))) == [(0, 0), (1, 1)]


def test_inadmissible_entries_never_match():
    h = np.array([[np.inf, 1.0], [np.inf, 0.5]])
    assert mutual_best_matching(h) == [(1, 1)]
    assert mutual_best_matching(np.full((3, 2), np.inf)) == []
    assert mutual_best_matching(np.zeros((0, 3))) == []


def test_random_matrices_are_stable_and_injective(rng):
    for _ in range(300):
        r, c = rng.integers(1, 8, 2)
        h = rng.random((r, c))
        h[rng.random((r, c)) < 0.3] = np.inf
        pairs = mutual_best_matching(h)
        rows, cols = zip(*pairs) if pairs else ((), ())
        assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols)
        assert all(np.isfinite(h[p]) for p in pairs)
        assert blocking_pairs(h, pairs) == []


def test_matching_is_maximal_over_admissible_pairs(rng):
    for _ in range(100):
        h = rng.random((5, 6))
        h[rng.random((5, 6)) < 0.5] = np.inf
        pairs = mutual_best_matching(h)
        used_r = {p[0] for p in pairs}
        used_c = {p[1] for p in pairs}
        for r in range(5):
            for s in range(6):
                if np.isfinite(h[r, s]):
                    assert r in used_r or s in used_c


def test_blocking_pair_detected():
    h = np.array([[1.0, 2.0], [2.0, 1.0]])
    assert blocking_pairs(h, [(0, 1), (1, 0)]) == [(0, 0), (1, 1)]


def window_table(params, seed=0):
    w, _ = scene_window(params, seed)
    seg = segment_multistage(w)
    return compute_features(w, seg)


def test_identical_window_matches_itself():
    table = window_table(tabletop_scene(32, 24, n_frames=4))
    state = TrackState()
    first = match_windows(None, table, MatchParams(), state)
    assert first.n_new == len(table)
    second = match_windows(table, table, MatchParams(), state, steps=0)
    assert second.n_new == 0
    assert np.array_equal(second.global_ids, first.global_ids)
    assert state.next_global_id == len(table) + 1


def test_all_inadmissible_gives_fresh_ids():
    table = window_table(tabletop_scene(32, 24, n_frames=4))
    state = TrackState()
    first = match_windows(None, table, MatchParams(), state)
    closed = MatchParams(max_dh=0.0, max_dd=0.0, max_dn_ratio=0.0)
    shifted = window_table(moving_boxes_scene(32, 24, n_frames=4), seed=9)
    second = match_windows(table, shifted, closed, state)
    assert second.pairs == [] and second.n_new == len(shifted)
    assert set(second.global_ids).isdisjoint(first.global_ids)


def test_track_state_must_describe_previous_window():
    table = window_table(tabletop_scene(32, 24, n_frames=2))
    with pytest.raises(ValueError):
        match_windows(table, table, MatchParams(), TrackState())


def test_distance_matrix_marks_gates_with_inf():
    table = window_table(tabletop_scene(32, 24, n_frames=3))
    h, ok, (dh, dd, dn) = distance_matrix(table, table, MatchParams(max_dh=0.5))
    assert np.all(np.isinf(h[~ok])) and np.all(np.isfinite(h[ok]))
    assert np.all(ok[dh > 0.5] == False)  # noqa: E712
    assert np.allclose(np.diag(dh), 0)


def test_calibrate_gates():
    samples = [(1.0, 0.01, 0.1), (3.0, 0.03, 0.3)]
    g = calibrate_gates(samples, sigmas=3.0)
    assert g["max_dh"] == pytest.approx(2.0 + 3.0)
    assert g["max_dd"] == pytest.approx(0.02 + 0.03)
    assert g["max_dn_ratio"] == pytest.approx(0.2 + 0.3)
    with pytest.raises(ValueError):
        calibrate_gates([])
