"""Streaming windowed segmentation with persistent region identities.

Frames are consumed lazily. A window of ``n`` frames is segmented, its
over-segmentation merged down the region hierarchy and the result matched
against the previous window; only the frames no earlier window has emitted
are written out. At most one window of frames plus one stride of look-ahead
is held in memory.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Union

import numpy as np

from .features import DEFAULT_HISTOGRAMS, FeatureTable, HistogramSpec, compute_features
from .graph_seg import (
    DEFAULT_DEPTH_WEIGHT,
    DEFAULT_K_COLOR,
    DEFAULT_K_DEPTH,
    DEFAULT_MIN_SIZE,
    Segmentation,
    ToxelWindow,
    build_window,
    segment_linear_baseline,
    segment_multistage,
)
from .hierarchy import DEFAULT_ZETA, Dendrogram, apply_cut, build_s_graph, cut_dendrogram, kruskal_dendrogram
from .rgbd_io import RgbdFrame, lab_to_srgb, load_sequence, write_pgm16, write_ppm
from .scene_flow import BlockMatchingFlow, SceneFlowField, scene_flow
from .temporal_match import MatchParams, TrackState, match_windows
from .validation import (
    check_alpha,
    check_min_size,
    check_positive,
    check_window_shape,
    check_zeta,
)

logger = logging.getLogger(__name__)

HIST_KEYS = tuple(f"hist_{s.name}" for s in DEFAULT_HISTOGRAMS)
METRICS_HEADER = ("window", "first_frame", "last_frame", "emitted", "overseg_regions",
                  "regions", "matched", "new_ids", "seconds")


class PipelineError(RuntimeError):
    """Failure while reading or processing a specific input frame."""

    def __init__(self, message: str, frame: Optional[int] = None):
        super().__init__(message if frame is None else f"frame {frame}: {message}")
        self.frame = frame


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_hist(text: str) -> tuple[float, float, int]:
    parts = [p for p in text.replace(":", ",").split(",") if p.strip()]
    if len(parts) != 3:
        raise ValueError(f"histogram range must be 'lo,hi,bins', got {text!r}")
    lo, hi, bins = float(parts[0]), float(parts[1]), int(parts[2])
    if not hi > lo or bins < 1:
        raise ValueError(f"bad histogram range {text!r}")
    return lo, hi, bins


@dataclass
class PipelineConfig:
    """Every tunable of a run; flat so it maps one-to-one onto a key=value file."""

    n: int = 8
    overlap: int = 4
    k_depth: float = DEFAULT_K_DEPTH
    k_color: float = DEFAULT_K_COLOR
    min_size: int = DEFAULT_MIN_SIZE
    zeta: float = DEFAULT_ZETA
    beta: float = 1.0
    gamma: float = 10.0
    epsilon: float = 0.001
    max_dh: float = 9.0
    max_dd: float = 0.05
    max_dn_ratio: float = 0.5
    restrict_candidates: bool = True
    bbox_margin: float = 0.1
    s_beta: float = 1.0
    s_gamma: float = 10.0
    s_epsilon: float = 0.0
    alpha: float = 0.5
    k: float = DEFAULT_K_COLOR
    depth_weight: float = DEFAULT_DEPTH_WEIGHT
    flow_patch: int = 9
    flow_radius: int = 4
    flow_levels: int = 3
    max_depth: float = 0.0
    output_dir: str = "out"
    render: bool = True
    dendrograms: bool = False
    save_state: bool = False
    hist_L: str = "0,100,20"
    hist_a: str = "-110,110,20"
    hist_b: str = "-110,110,20"
    hist_X: str = "-4,4,30"
    hist_Y: str = "-4,4,30"
    hist_Z: str = "0,8,30"
    hist_U: str = "-0.5,0.5,20"
    hist_V: str = "-0.5,0.5,20"
    hist_W: str = "-0.5,0.5,20"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        check_window_shape(self.n, self.overlap)
        check_positive("k_depth", self.k_depth)
        check_positive("k_color", self.k_color)
        check_positive("k", self.k)
        check_positive("depth_weight", self.depth_weight, allow_zero=True)
        check_positive("max_depth", self.max_depth, allow_zero=True)
        check_min_size(self.min_size)
        check_zeta(self.zeta)
        check_alpha(self.alpha)
        if self.flow_patch < 1 or self.flow_patch % 2 == 0:
            raise ValueError("flow_patch must be a positive odd integer")
        if self.flow_radius < 0 or self.flow_levels < 1:
            raise ValueError("flow_radius must be >= 0 and flow_levels >= 1")
        self.match_params()
        self.s_graph_params()
        self.histograms()

    @property
    def stride(self) -> int:
        return self.n - self.overlap

    def match_params(self) -> MatchParams:
        return MatchParams(self.beta, self.gamma, self.epsilon, self.max_dh, self.max_dd,
                           self.max_dn_ratio, self.restrict_candidates, self.bbox_margin)

    def s_graph_params(self) -> MatchParams:
        return MatchParams.ungated(beta=self.s_beta, gamma=self.s_gamma, epsilon=self.s_epsilon)

    def histograms(self) -> tuple[HistogramSpec, ...]:
        return tuple(
            HistogramSpec(spec.name, *_parse_hist(getattr(self, key)))
            for spec, key in zip(DEFAULT_HISTOGRAMS, HIST_KEYS)
        )

    def flow_estimator(self) -> BlockMatchingFlow:
        return BlockMatchingFlow(self.flow_patch, self.flow_radius, self.flow_levels)

    # -- key=value serialisation -------------------------------------------

    @classmethod
    def keys(cls) -> dict[str, type]:
        return {f.name: f.type for f in dataclasses.fields(cls)}

    @classmethod
    def convert(cls, key: str, text: str):
        kind = cls.keys().get(key)
        if kind is None:
            raise KeyError(f"unknown config key {key!r}")
        kind = {"int": int, "float": float, "bool": bool, "str": str}.get(kind, kind)
        if kind is bool:
            return _parse_bool(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text.strip()

    @classmethod
    def from_mapping(cls, values: dict, base: Optional["PipelineConfig"] = None) -> "PipelineConfig":
        current = dataclasses.asdict(base) if base is not None else {}
        for key, value in values.items():
            current[key] = cls.convert(key, value) if isinstance(value, str) else value
        return cls(**current)

    @classmethod
    def from_file(cls, path, overrides: Optional[dict] = None) -> "PipelineConfig":
        values = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in cls.keys():
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = value
        values.update(overrides or {})
        return cls.from_mapping(values)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(self).items())


# ---------------------------------------------------------------------------
# windowing


def window_starts(n_total: int, n: int, overlap: int) -> list[int]:
    """Start frame of every window for a sequence of known length.

    Windows advance by ``n - overlap``; if frames remain after the last full
    stride, one final window ending at the last frame covers them.
    """
    check_window_shape(n, overlap)
    if n_total <= 0:
        return []
    if n_total <= n:
        return [0]
    starts = [0]
    stride = n - overlap
    while starts[-1] + n < n_total:
        starts.append(min(starts[-1] + stride, n_total - n))
    return starts


@dataclass(eq=False)
class WindowState:
    """Everything needed to re-cut one window without segmenting it again."""

    index: int
    start: int
    shape: tuple[int, int, int]
    steps: int
    emit_from: int
    overseg: Segmentation
    features: FeatureTable
    dendrogram: Optional[Dendrogram]

    def save(self, path) -> None:
        f = self.features
        d = self.dendrogram
        payload = dict(
            index=self.index, start=self.start, shape=np.array(self.shape), steps=self.steps,
            emit_from=self.emit_from, labels=self.overseg.labels, n_regions=self.overseg.n_regions,
            sizes=f.sizes, xyz_sum=f.xyz_sum, flow_sum=f.flow_sum, flow_count=f.flow_count,
            frame_bbox_min=f.frame_bbox_min, frame_bbox_max=f.frame_bbox_max,
            specs=np.array([(s.lo, s.hi, s.bins) for s in f.specs]),
            has_dendrogram=d is not None,
        )
        for k, h in enumerate(f.hists):
            payload[f"hist{k}"] = h
        if d is not None:
            payload.update(n_leaves=d.n_leaves, children=d.children, weights=d.weights, leaf_pairs=d.leaf_pairs)
        np.savez_compressed(path, **payload)

    @classmethod
    def load(cls, path) -> "WindowState":
        with np.load(path) as z:
            specs = tuple(HistogramSpec(s.name, float(lo), float(hi), int(b))
                          for s, (lo, hi, b) in zip(DEFAULT_HISTOGRAMS, z["specs"]))
            feats = FeatureTable(
                [z[f"hist{k}"] for k in range(len(specs))], z["sizes"], z["xyz_sum"], z["flow_sum"],
                z["flow_count"], z["frame_bbox_min"], z["frame_bbox_max"], specs,
            )
            dend = None
            if bool(z["has_dendrogram"]):
                dend = Dendrogram(int(z["n_leaves"]), z["children"], z["weights"], z["leaf_pairs"])
            return cls(
                int(z["index"]), int(z["start"]), tuple(int(v) for v in z["shape"]), int(z["steps"]),
                int(z["emit_from"]), Segmentation(z["labels"], int(z["n_regions"])), feats, dend,
            )


@dataclass(eq=False)
class WindowResult:
    """Output of one window: global-ID labels of the frames it emits."""

    index: int
    start: int
    n_frames: int
    frame_indices: list[int]
    labels: np.ndarray
    n_overseg: int
    n_regions: int
    n_matched: int
    n_new: int
    seconds: float
    state: WindowState
    pairs: list = field(default_factory=list)
    h: Optional[np.ndarray] = None
    match_terms: Optional[tuple] = None
    region_sizes: Optional[np.ndarray] = None

    def metrics_row(self) -> tuple:
        return (self.index, self.start, self.start + self.n_frames - 1, len(self.frame_indices),
                self.n_overseg, self.n_regions, self.n_matched, self.n_new, round(self.seconds, 4))


Segmenter = Callable[[ToxelWindow], Segmentation]


def _segmenter(config: PipelineConfig, baseline: bool) -> Segmenter:
    if baseline:
        return lambda w: segment_linear_baseline(w, config.alpha, config.k, config.min_size, config.depth_weight)
    return lambda w: segment_multistage(w, config.k_depth, config.k_color, config.min_size)


def _frames(source, config: PipelineConfig, tum_associate: bool) -> Iterator[RgbdFrame]:
    if isinstance(source, (str, Path)):
        max_depth = config.max_depth or None
        return iter(load_sequence(source, tum_associate=tum_associate, max_depth_m=max_depth))
    it = iter(source)
    if config.max_depth:
        return (f.with_depth_clamp(config.max_depth) for f in it)
    return it


def cut_and_match(
    state: WindowState,
    zeta: float,
    params: MatchParams,
    tracks: TrackState,
    prev_table: Optional[FeatureTable],
) -> tuple[Segmentation, FeatureTable, "object"]:
    """Cut a window's hierarchy at ``zeta`` and give its regions global IDs."""
    over, feats = state.overseg, state.features
    if state.dendrogram is not None:
        lut = cut_dendrogram(state.dendrogram, zeta)
        seg = apply_cut(over, lut)
        table = feats.aggregate(lut[1:] - 1, seg.n_regions)
    else:
        seg, table = over, feats
    result = match_windows(prev_table, table, params, tracks, steps=state.steps)
    return seg, table, result


def _global_labels(seg: Segmentation, gids: np.ndarray, shape, emit_from: int) -> np.ndarray:
    lut = np.zeros(seg.n_regions + 1, np.int64)
    lut[1:] = gids
    return lut[seg.labels].reshape(shape)[emit_from:]


def run_windows(
    config: PipelineConfig,
    source: Union[str, Path, Iterable[RgbdFrame]],
    baseline: bool = False,
    tum_associate: bool = False,
    segmenter: Optional[Segmenter] = None,
) -> Iterator[WindowResult]:
    """Core streaming loop; yields one :class:`WindowResult` per window."""
    config.validate()
    seg_fn = segmenter or _segmenter(config, baseline)
    estimator = config.flow_estimator()
    specs = config.histograms()
    params = config.match_params()
    s_params = config.s_graph_params()
    tracks = TrackState()
    frames_in = _frames(source, config, tum_associate)

    buf: deque[RgbdFrame] = deque()
    flows: deque[SceneFlowField] = deque()
    next_index = 0

    def pull(count: int) -> int:
        nonlocal next_index
        got = 0
        while got < count:
            try:
                frame = next(frames_in)
            except StopIteration:
                break
            except Exception as exc:  # decoding errors carry the failing frame's index
                raise PipelineError(str(exc), next_index) from exc
            if buf and frame.shape != buf[0].shape:
                raise PipelineError(f"dimensions {frame.shape} differ from {buf[0].shape}", next_index)
            if buf:
                flows.append(scene_flow(buf[-1], frame, estimator))
            buf.append(frame)
            next_index += 1
            got += 1
        return got

    if pull(config.n) == 0:
        return
    start, emitted_upto, steps, index = 0, 0, 0, 0
    prev_table: Optional[FeatureTable] = None
    while True:
        t0 = time.perf_counter()
        w = build_window(list(buf), list(flows), start_frame=start)
        over = seg_fn(w)
        feats = compute_features(w, over, specs)
        dend = None
        if not baseline:
            dend = kruskal_dendrogram(build_s_graph(over, feats, w.shape, s_params), over.n_regions)
        emit_from = emitted_upto - start
        state = WindowState(index, start, w.shape, steps, emit_from, over, feats, dend)
        seg, table, match = cut_and_match(state, config.zeta, params, tracks, prev_table)
        labels = _global_labels(seg, match.global_ids, w.shape, emit_from)
        frame_ids = list(range(start + emit_from, start + w.n_frames))
        result = WindowResult(
            index, start, w.n_frames, frame_ids, labels, over.n_regions, seg.n_regions,
            len(match.pairs), match.n_new, time.perf_counter() - t0, state,
            match.pairs, match.h, match.terms, table.sizes,
        )
        logger.info("window %d [%d..%d]: %d -> %d regions, %d matched, %.2fs", index, start,
                    start + w.n_frames - 1, over.n_regions, seg.n_regions, len(match.pairs), result.seconds)
        yield result
        emitted_upto = start + w.n_frames
        prev_table = table
        del w, over, feats, dend, seg, result
        steps = pull(config.stride)
        if steps == 0:
            return
        for _ in range(steps):
            buf.popleft()
            flows.popleft()
        start += steps
        index += 1


def run_stream(config: PipelineConfig, source, tum_associate: bool = False) -> Iterator[WindowResult]:
    """Multistage segmentation, hierarchy cut and identity matching over a stream."""
    return run_windows(config, source, baseline=False, tum_associate=tum_associate)


def run_baseline(config: PipelineConfig, source, tum_associate: bool = False) -> Iterator[WindowResult]:
    """Same windowing and matching with the single-pass linear-combination segmenter."""
    return run_windows(config, source, baseline=True, tum_associate=tum_associate)


def recut(states: Iterable[WindowState], zeta: float, params: MatchParams) -> Iterator[WindowResult]:
    """Re-cut saved windows at ``zeta`` and redo the matching; no segmentation is rerun."""
    zeta = check_zeta(zeta)
    tracks = TrackState()
    prev_table = None
    for state in states:
        t0 = time.perf_counter()
        seg, table, match = cut_and_match(state, zeta, params, tracks, prev_table)
        labels = _global_labels(seg, match.global_ids, state.shape, state.emit_from)
        frame_ids = list(range(state.start + state.emit_from, state.start + state.shape[0]))
        yield WindowResult(
            state.index, state.start, state.shape[0], frame_ids, labels, state.overseg.n_regions,
            seg.n_regions, len(match.pairs), match.n_new, time.perf_counter() - t0, state,
            match.pairs, match.h, match.terms, table.sizes,
        )
        prev_table = table


def load_states(directory) -> list[Path]:
    paths = sorted(Path(directory).glob("state_*.npz"))
    if not paths:
        raise FileNotFoundError(f"no saved window state (state_*.npz) in {directory}")
    return paths


# ---------------------------------------------------------------------------
# outputs


def _mix64(x: int) -> int:
    # splitmix64 finaliser: consecutive IDs land far apart in the palette
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def palette_color(gid: int) -> np.ndarray:
    """Fixed sRGB colour of a global ID; ID 0 (no depth) is black."""
    if gid == 0:
        return np.zeros(3, np.uint8)
    h = _mix64(int(gid))
    lab = (45.0 + 40.0 * ((h & 0xFFFF) / 0xFFFF),
           -70.0 + 140.0 * (((h >> 16) & 0xFFFF) / 0xFFFF),
           -70.0 + 140.0 * (((h >> 32) & 0xFFFF) / 0xFFFF))
    return lab_to_srgb(np.array(lab))


def render_labels(labels: np.ndarray) -> np.ndarray:
    ids, inverse = np.unique(labels, return_inverse=True)
    colors = np.stack([palette_color(int(g)) for g in ids])
    return colors[inverse.reshape(labels.shape)]


def to_uint16(labels: np.ndarray) -> np.ndarray:
    """Global IDs folded into 1..65535, keeping 0 for unlabelled pixels."""
    labels = np.asarray(labels, np.int64)
    return np.where(labels > 0, (labels - 1) % 65535 + 1, 0).astype(np.uint16)


class LabelOutput:
    """Writes per-frame label maps, renders, per-window metrics and optional extras."""

    def __init__(self, directory, render: bool = True, dendrograms: bool = False, save_state: bool = False):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.render = render
        self.dendrograms = dendrograms
        self.save_state = save_state
        self._metrics = open(self.dir / "metrics.csv", "w", newline="")
        self._csv = csv.writer(self._metrics)
        self._csv.writerow(METRICS_HEADER)
        self.frames_written = 0

    def write(self, result: WindowResult) -> None:
        for t, frame in zip(result.frame_indices, result.labels):
            write_pgm16(self.dir / f"labels_{t:06d}.pgm", to_uint16(frame))
            if self.render:
                write_ppm(self.dir / f"render_{t:06d}.ppm", render_labels(frame))
            self.frames_written += 1
        self._csv.writerow(result.metrics_row())
        self._metrics.flush()
        if self.dendrograms and result.state.dendrogram is not None:
            result.state.dendrogram.save(self.dir / f"dendrogram_{result.index:04d}.txt")
        if self.save_state:
            result.state.save(self.dir / f"state_{result.index:04d}.npz")

    def close(self) -> None:
        self._metrics.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_run(results: Iterable[WindowResult], config: PipelineConfig, directory=None) -> int:
    """Drain ``results`` into ``directory`` (default ``config.output_dir``); returns frames written."""
    with LabelOutput(directory or config.output_dir, config.render, config.dendrograms, config.save_state) as out:
        for r in results:
            out.write(r)
        return out.frames_written
