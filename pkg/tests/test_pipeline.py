import numpy as np
import pytest

from rgbdseg.hierarchy import Dendrogram
from rgbdseg.pipeline import (
    METRICS_HEADER,
    PipelineConfig,
    PipelineError,
    WindowState,
    load_states,
    palette_color,
    recut,
    run_baseline,
    run_stream,
    run_windows,
    to_uint16,
    window_starts,
    write_run,
)
from rgbdseg.rgbd_io import read_pnm, write_sequence
from rgbdseg.synthetic import moving_boxes_scene, render_scene, tabletop_scene, two_plane_scene


def frames_of(params, seed=0):
    return [f.frame for f in render_scene(params, seed)]


@pytest.fixture(scope="module")
def boxes():
    return render_scene(moving_boxes_scene(32, 24, n_frames=16))


def test_window_starts():
    assert window_starts(16, 8, 4) == [0, 4, 8]
    assert window_starts(18, 8, 4) == [0, 4, 8, 10]
    assert window_starts(5, 8, 4) == [0]
    assert window_starts(0, 8, 4) == []
    with pytest.raises(ValueError):
        window_starts(16, 8, 8)


def test_sixteen_frames_make_three_windows(boxes):
    results = list(run_stream(PipelineConfig(), [f.frame for f in boxes]))
    assert [r.start for r in results] == [0, 4, 8]
    assert [r.frame_indices for r in results] == [list(range(8)), list(range(8, 12)), list(range(12, 16))]
    assert results[0].n_matched == 0 and results[1].n_matched > 0


def test_windows_follow_predicted_starts():
    frames = frames_of(tabletop_scene(24, 18, n_frames=18))
    starts = [r.start for r in run_stream(PipelineConfig(), frames)]
    assert starts == window_starts(18, 8, 4)


def test_static_scene_keeps_labels_and_ids():
    frames = frames_of(two_plane_scene(32, 24, n_frames=16, texture=0.0))
    labels = np.concatenate([r.labels for r in run_stream(PipelineConfig(), frames)])
    assert labels.shape == (16, 24, 32)
    assert all(np.array_equal(labels[0], labels[t]) for t in range(16))
    gt = render_scene(two_plane_scene(32, 24, n_frames=1, texture=0.0))[0].labels
    for g in np.unique(gt):
        assert len(np.unique(labels[0][gt == g])) == 1


def test_output_is_prefix_stable(boxes):
    frames = [f.frame for f in boxes]
    short = np.concatenate([r.labels for r in run_stream(PipelineConfig(), frames[:12])])
    full = np.concatenate([r.labels for r in run_stream(PipelineConfig(), frames)])
    assert np.array_equal(short, full[:12])


def test_recut_same_zeta_is_identity_and_zero_is_overseg(boxes):
    frames = [f.frame for f in boxes]
    cfg = PipelineConfig()
    results = list(run_stream(cfg, frames))
    states = [r.state for r in results]
    again = list(recut(states, cfg.zeta, cfg.match_params()))
    for a, b in zip(results, again):
        assert np.array_equal(a.labels, b.labels)
    raw = list(recut(states, 0.0, cfg.match_params()))
    assert [r.n_regions for r in raw] == [s.overseg.n_regions for s in states]
    coarse = list(recut(states, 1.0, cfg.match_params()))
    for fine, c in zip(raw, coarse):
        assert c.n_regions <= fine.n_regions
        pairs = np.unique(np.stack([fine.labels.ravel(), c.labels.ravel()], axis=1), axis=0)
        assert len(np.unique(pairs[:, 0])) == len(pairs)


def test_state_round_trip(tmp_path, boxes):
    cfg = PipelineConfig(save_state=True, dendrograms=True, render=False)
    results = list(run_stream(cfg, [f.frame for f in boxes]))
    write_run(iter(results), cfg, tmp_path)
    paths = load_states(tmp_path)
    assert len(paths) == 3
    loaded = [WindowState.load(p) for p in paths]
    again = list(recut(loaded, cfg.zeta, cfg.match_params()))
    for a, b in zip(results, again):
        assert np.array_equal(a.labels, b.labels)
    d = Dendrogram.load(tmp_path / "dendrogram_0000.txt")
    assert d.n_leaves == results[0].n_overseg
    for line in (tmp_path / "dendrogram_0000.txt").read_text().splitlines()[1:]:
        assert line.split()[0] == "merge" and len(line.split()) == 5
    with pytest.raises(FileNotFoundError):
        load_states(tmp_path / "nothing")


def test_outputs_written(tmp_path, boxes):
    cfg = PipelineConfig(output_dir=str(tmp_path))
    assert write_run(run_stream(cfg, [f.frame for f in boxes]), cfg) == 16
    labels = read_pnm(tmp_path / "labels_000015.pgm")
    assert labels.dtype == np.uint16 and labels.shape == (24, 32)
    assert (tmp_path / "labels_000015.pgm").read_bytes().startswith(b"P5")
    render = read_pnm(tmp_path / "render_000003.ppm")
    lab3 = read_pnm(tmp_path / "labels_000003.pgm")
    for g in np.unique(lab3):
        assert np.all(render[lab3 == g] == palette_color(int(g)))
    rows = (tmp_path / "metrics.csv").read_text().splitlines()
    assert rows[0] == ",".join(METRICS_HEADER) and len(rows) == 4


def test_palette_is_stable_and_distinct():
    assert np.array_equal(palette_color(7), palette_color(7))
    assert not np.array_equal(palette_color(7), palette_color(8))
    assert not palette_color(0).any()


def test_uint16_folding():
    assert to_uint16(np.array([0, 1, 65535, 65536, 65537])).tolist() == [0, 1, 65535, 1, 2]


def test_baseline_stream():
    frames = frames_of(two_plane_scene(32, 24, n_frames=8))
    a0 = list(run_baseline(PipelineConfig(alpha=0.0), frames))
    a1 = list(run_baseline(PipelineConfig(alpha=1.0), frames))
    assert len(a0) == len(a1) == 1
    assert all(r.state.dendrogram is None for r in a0)
    assert all(r.n_overseg == r.n_regions for r in a0)
    assert not np.array_equal(a0[0].labels, a1[0].labels)


def test_manifest_input(tmp_path, boxes):
    manifest = write_sequence([f.frame for f in boxes[:8]], tmp_path)
    results = list(run_stream(PipelineConfig(), manifest))
    assert len(results) == 1 and results[0].labels.shape == (8, 24, 32)


def test_bad_frame_reports_index():
    frames = frames_of(tabletop_scene(24, 18, n_frames=10))
    frames[9] = frames_of(tabletop_scene(20, 18, n_frames=1))[0]
    with pytest.raises(PipelineError) as err:
        list(run_stream(PipelineConfig(), frames))
    assert err.value.frame == 9


def test_custom_segmenter_is_used():
    calls = []

    def seg(w):
        from rgbdseg.graph_seg import Segmentation

        calls.append(w.shape)
        return Segmentation(w.valid.astype(np.int32), 1)

    frames = frames_of(tabletop_scene(24, 18, n_frames=8))
    results = list(run_windows(PipelineConfig(), frames, segmenter=seg))
    assert calls == [(8, 18, 24)] and results[0].n_regions == 1


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nn = 10\noverlap = 5  # inline\nzeta = 0.5\nrender = false\nhist_L = 0,100,10\n")
    cfg = PipelineConfig.from_file(path, {"zeta": "0.25"})
    assert (cfg.n, cfg.overlap, cfg.zeta, cfg.render) == (10, 5, 0.25, False)
    assert cfg.histograms()[0].bins == 10
    assert PipelineConfig.from_file(_write(tmp_path, cfg.to_text())) == cfg


def _write(tmp_path, text):
    p = tmp_path / "round.cfg"
    p.write_text(text)
    return p


@pytest.mark.parametrize("text", ["n = 8\noverlap = 8\n", "nonsense\n", "colour = 3\n", "zeta = 2\n",
                                  "render = maybe\n", "hist_Z = 5,1,10\n", "flow_patch = 4\n"])
def test_bad_config_rejected(tmp_path, text):
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    with pytest.raises(ValueError):
        PipelineConfig.from_file(p)


def test_config_error_names_line(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("n = 8\n\nwhat = 1\n")
    with pytest.raises(ValueError, match=r"bad.cfg:3"):
        PipelineConfig.from_file(p)


def test_recut_matches_fresh_run_at_new_zeta(boxes):
    frames = [f.frame for f in boxes]
    states = [r.state for r in run_stream(PipelineConfig(), frames)]
    fresh = list(run_stream(PipelineConfig(zeta=0.3), frames))
    redone = list(recut(states, 0.3, PipelineConfig().match_params()))
    for a, b in zip(fresh, redone):
        assert np.array_equal(a.labels, b.labels)
