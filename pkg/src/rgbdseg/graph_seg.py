"""Spatiotemporal toxel graphs and Felzenszwalb-Huttenlocher segmentation.

Toxels are indexed linearly as ``t * H * W + j * W + i``. The depth-only
graph and the colour graph share one edge topology (lattice neighbours plus
flow-following edges); only the weights differ.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .rgbd_io import CameraIntrinsics, RgbdFrame, backproject
from .scene_flow import FlowEstimator, SceneFlowField, scene_flow

# half of the 3x3x3 neighbourhood, (dt, dj, di); the other half is implied by symmetry
LATTICE_OFFSETS = [(0, 0, 1), (0, 1, -1), (0, 1, 0), (0, 1, 1)] + [
    (1, dj, di) for dj in (-1, 0, 1) for di in (-1, 0, 1)
]

DEFAULT_K_DEPTH = 0.5
DEFAULT_K_COLOR = 300.0
DEFAULT_MIN_SIZE = 50
DEFAULT_DEPTH_WEIGHT = 100.0


@dataclass(frozen=True)
class EdgeList:
    a: np.ndarray
    b: np.ndarray
    weight: np.ndarray

    def __len__(self):
        return self.a.shape[0]

    def with_weights(self, weight: np.ndarray) -> "EdgeList":
        return EdgeList(self.a, self.b, weight)


@dataclass(eq=False)
class ToxelWindow:
    """``n_frames`` consecutive frames flattened into toxel arrays.

    ``flow_uvw`` of a toxel at frame ``t >= 1`` is the scene flow of the pair
    ``(t-1, t)`` at the same pixel; first-frame toxels carry none.
    ``flow_target`` of a toxel at frame ``t < n-1`` is the linear index of the
    toxel its forward flow lands on, or -1.
    """

    height: int
    width: int
    n_frames: int
    lab: np.ndarray
    xyz: np.ndarray
    valid: np.ndarray
    flow_uvw: np.ndarray
    flow_valid: np.ndarray
    flow_target: np.ndarray
    intrinsics: Optional[CameraIntrinsics] = None
    start_frame: int = 0
    _topology: Optional[EdgeList] = field(default=None, repr=False)

    @property
    def n_toxels(self) -> int:
        return self.height * self.width * self.n_frames

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_frames, self.height, self.width)

    @property
    def frame_size(self) -> int:
        return self.height * self.width

    @property
    def depth(self) -> np.ndarray:
        return self.xyz[:, 2]

    def frame_of(self, idx) -> np.ndarray:
        return np.asarray(idx) // self.frame_size

    def topology(self) -> EdgeList:
        if self._topology is None:
            self._topology = build_topology(self)
        return self._topology


def build_window(
    frames: Sequence[RgbdFrame],
    flows: Sequence[SceneFlowField],
    start_frame: int = 0,
) -> ToxelWindow:
    """Stack frames and the scene flow between consecutive frames into a window."""
    if len(frames) == 0:
        raise ValueError("a window needs at least one frame")
    if len(flows) != len(frames) - 1:
        raise ValueError(f"expected {len(frames) - 1} flow fields, got {len(flows)}")
    h, w = frames[0].shape
    for f in frames:
        if f.shape != (h, w):
            raise ValueError(f"frame dimensions differ: {f.shape} vs {(h, w)}")
    for fl in flows:
        if fl.shape != (h, w):
            raise ValueError(f"flow dimensions {fl.shape} differ from frames {(h, w)}")
    n = len(frames)
    hw = h * w
    lab = np.empty((n * hw, 3))
    xyz = np.empty((n * hw, 3))
    valid = np.empty(n * hw, bool)
    uvw = np.zeros((n * hw, 3))
    flow_valid = np.zeros(n * hw, bool)
    target = np.full(n * hw, -1, np.int64)
    for t, frame in enumerate(frames):
        sl = slice(t * hw, (t + 1) * hw)
        lab[sl] = frame.lab.reshape(hw, 3)
        pts, ok = backproject(frame)
        xyz[sl] = pts.reshape(hw, 3)
        valid[sl] = ok.ravel()
    for t, fl in enumerate(flows):
        ok = fl.valid.ravel() & valid[t * hw : (t + 1) * hw]
        nxt = slice((t + 1) * hw, (t + 2) * hw)
        uvw[nxt] = fl.uvw.reshape(hw, 3)
        flow_valid[nxt] = fl.valid.ravel() & valid[nxt]
        tgt = (t + 1) * hw + fl.target_j.ravel() * w + fl.target_i.ravel()
        target[t * hw : (t + 1) * hw] = np.where(ok, tgt, -1)
    # a target without depth cannot anchor an edge
    has = target >= 0
    has[has] = valid[target[has]]
    target[~has] = -1
    return ToxelWindow(
        h, w, n, lab, xyz, valid, uvw, flow_valid, target,
        intrinsics=frames[0].intrinsics, start_frame=start_frame,
    )


def window_from_frames(
    frames: Sequence[RgbdFrame],
    estimator: Optional[FlowEstimator] = None,
    start_frame: int = 0,
) -> ToxelWindow:
    """Estimate scene flow between consecutive frames and build their window."""
    frames = list(frames)
    flows = [scene_flow(a, b, estimator) for a, b in zip(frames[:-1], frames[1:])]
    return build_window(frames, flows, start_frame)


def lattice_pairs(shape, valid: Optional[np.ndarray] = None):
    """All unordered 26-neighbour pairs ``(a, b)``, ``a < b``, of a ``(T, H, W)`` lattice."""
    t, h, w = shape
    idx = np.arange(t * h * w).reshape(shape)
    vol = None if valid is None else valid.reshape(shape)
    a_parts, b_parts = [], []
    for dt, dj, di in LATTICE_OFFSETS:
        src = idx[: t - dt, max(0, -dj) : h - max(0, dj), max(0, -di) : w - max(0, di)]
        dst = idx[dt:, max(0, dj) : h + min(0, dj), max(0, di) : w + min(0, di)]
        if vol is not None:
            m = (
                vol[: t - dt, max(0, -dj) : h - max(0, dj), max(0, -di) : w - max(0, di)]
                & vol[dt:, max(0, dj) : h + min(0, dj), max(0, di) : w + min(0, di)]
            )
            a_parts.append(src[m])
            b_parts.append(dst[m])
        else:
            a_parts.append(src.ravel())
            b_parts.append(dst.ravel())
    return np.concatenate(a_parts), np.concatenate(b_parts)


def build_topology(w: ToxelWindow) -> EdgeList:
    """Edge endpoints shared by the depth and colour graphs, sorted by ``(a, b)``.

    Lattice edges join valid 26-neighbours; flow edges join a toxel to the
    toxel its flow lands on in the next frame. A flow edge landing inside the
    lattice neighbourhood duplicates a lattice edge and is dropped (weights
    depend only on endpoints, so the minimum-weight copy is the same edge).
    """
    a, b = lattice_pairs(w.shape, w.valid)
    src = np.flatnonzero(w.flow_target >= 0)
    src = src[w.valid[src]]
    dst = w.flow_target[src]
    hw = w.frame_size
    dpix_i = (dst % hw) % w.width - (src % hw) % w.width
    dpix_j = (dst % hw) // w.width - (src % hw) // w.width
    far = (np.abs(dpix_i) > 1) | (np.abs(dpix_j) > 1)
    a = np.concatenate([a, src[far]])
    b = np.concatenate([b, dst[far]])
    key = a.astype(np.int64) * w.n_toxels + b
    order = np.argsort(key, kind="stable")
    return EdgeList(a[order], b[order], np.zeros(order.shape[0]))


def depth_weights(w: ToxelWindow, topo: EdgeList) -> np.ndarray:
    z = w.depth
    return np.abs(z[topo.a] - z[topo.b])


def color_weights(w: ToxelWindow, topo: EdgeList) -> np.ndarray:
    return np.linalg.norm(w.lab[topo.a] - w.lab[topo.b], axis=1)


def build_d_graph(w: ToxelWindow) -> EdgeList:
    """Depth-weighted graph: ``|depth(a) - depth(b)|`` in meters."""
    topo = w.topology()
    return topo.with_weights(depth_weights(w, topo))


def build_c_graph(w: ToxelWindow, depth_labels: Optional[np.ndarray] = None) -> EdgeList:
    """Colour graph: Euclidean Lab distance; edges crossing depth regions get ``inf``."""
    topo = w.topology()
    weight = color_weights(w, topo)
    if depth_labels is not None:
        weight[depth_labels[topo.a] != depth_labels[topo.b]] = np.inf
    return topo.with_weights(weight)


@dataclass(eq=False)
class Segmentation:
    """Per-toxel labels ``1..n_regions``; 0 marks toxels without depth."""

    labels: np.ndarray
    n_regions: int

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_regions + 1)[1:]

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.labels))

    def centroids(self, w: ToxelWindow) -> np.ndarray:
        out = np.zeros((self.n_regions, 3))
        sizes = np.maximum(self.sizes, 1)
        for c in range(3):
            out[:, c] = np.bincount(self.labels, w.xyz[:, c], minlength=self.n_regions + 1)[1:] / sizes
        return out

    def frame_ranges(self, w: ToxelWindow) -> np.ndarray:
        """``(n_regions, 2)`` first and last window frame of every region."""
        lab = self.labels
        frames = w.frame_of(np.arange(lab.shape[0]))
        m = lab > 0
        lo = np.full(self.n_regions + 1, np.iinfo(np.int64).max)
        hi = np.full(self.n_regions + 1, -1)
        np.minimum.at(lo, lab[m], frames[m])
        np.maximum.at(hi, lab[m], frames[m])
        return np.stack([lo[1:], hi[1:]], axis=1)

    def volume(self, shape) -> np.ndarray:
        return self.labels.reshape(shape)

    def check_partition(self, valid: np.ndarray) -> None:
        """Raise ``AssertionError`` unless labels partition exactly the valid toxels."""
        assert np.array_equal(self.labels > 0, valid), "labels do not cover exactly the valid toxels"
        sizes = self.sizes
        assert np.all(sizes > 0), "empty region"
        assert sizes.sum() == np.count_nonzero(valid)


def fh_segment(
    edges: EdgeList,
    node_count: int,
    k: float,
    min_size: int = 1,
    valid: Optional[np.ndarray] = None,
) -> Segmentation:
    """Graph segmentation with the Felzenszwalb-Huttenlocher merge predicate.

    Edges are visited by ascending ``(weight, a, b)``; non-finite weights are
    never merged across. Regions smaller than ``min_size`` are then absorbed
    through their lowest-weight finite edge. Labels are numbered by first
    appearance in node order.
    """
    if not k > 0:
        raise ValueError(f"k must be positive, got {k}")
    a = np.asarray(edges.a, dtype=np.int64)
    b = np.asarray(edges.b, dtype=np.int64)
    w = np.asarray(edges.weight, dtype=np.float64)
    finite = np.flatnonzero(np.isfinite(w))
    # lexsort keys: last is primary
    order = finite[np.lexsort((b[finite], a[finite], w[finite]))]
    roots = _kernels.fh_union(a, b, w, order, int(node_count), float(k), int(min_size))
    valid = np.ones(node_count, bool) if valid is None else np.asarray(valid, bool)
    labels, n = _kernels.relabel_first_seen(roots, valid)
    return Segmentation(labels, int(n))


def _fh_sorted(topo: EdgeList, weight: np.ndarray, node_count, k, min_size, valid) -> Segmentation:
    # topology is already sorted by (a, b), so a stable weight sort realises the tie-break
    if not k > 0:
        raise ValueError(f"k must be positive, got {k}")
    finite = np.flatnonzero(np.isfinite(weight))
    order = finite[np.argsort(weight[finite], kind="stable")]
    roots = _kernels.fh_union(topo.a, topo.b, weight, order, int(node_count), float(k), int(min_size))
    labels, n = _kernels.relabel_first_seen(roots, valid)
    return Segmentation(labels, int(n))


@dataclass(eq=False)
class MultistageResult:
    segmentation: Segmentation
    depth_segmentation: Segmentation


def segment_multistage(
    w: ToxelWindow,
    k_depth: float = DEFAULT_K_DEPTH,
    k_color: float = DEFAULT_K_COLOR,
    min_size: int = DEFAULT_MIN_SIZE,
    return_depth: bool = False,
):
    """Depth-only segmentation followed by colour segmentation inside depth regions."""
    topo = w.topology()
    depth_seg = _fh_sorted(topo, depth_weights(w, topo), w.n_toxels, k_depth, min_size, w.valid)
    cw = color_weights(w, topo)
    cw[depth_seg.labels[topo.a] != depth_seg.labels[topo.b]] = np.inf
    seg = _fh_sorted(topo, cw, w.n_toxels, k_color, min_size, w.valid)
    if return_depth:
        return MultistageResult(seg, depth_seg)
    return seg


def linear_weights(w: ToxelWindow, alpha: float, depth_weight: float = DEFAULT_DEPTH_WEIGHT) -> np.ndarray:
    topo = w.topology()
    return (1.0 - alpha) * color_weights(w, topo) + alpha * (depth_weight * depth_weights(w, topo))


def segment_linear_baseline(
    w: ToxelWindow,
    alpha: float,
    k: float = DEFAULT_K_COLOR,
    min_size: int = DEFAULT_MIN_SIZE,
    depth_weight: float = DEFAULT_DEPTH_WEIGHT,
) -> Segmentation:
    """Single pass over ``(1 - alpha) * dLab + alpha * depth_weight * dDepth``.

    ``depth_weight`` converts meters to Lab-comparable units; the default of
    100 makes one centimeter count like one Lab unit.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return _fh_sorted(w.topology(), linear_weights(w, alpha, depth_weight), w.n_toxels, k, min_size, w.valid)


def segment_single(
    w: ToxelWindow,
    cue: str,
    k: float,
    min_size: int = DEFAULT_MIN_SIZE,
    depth_weight: float = DEFAULT_DEPTH_WEIGHT,
) -> Segmentation:
    """Single-cue run: ``cue="color"`` (Lab distance) or ``cue="depth"`` (scaled meters)."""
    topo = w.topology()
    if cue == "color":
        weight = color_weights(w, topo)
    elif cue == "depth":
        weight = depth_weight * depth_weights(w, topo)
    else:
        raise ValueError(f"unknown cue {cue!r}")
    return _fh_sorted(topo, weight, w.n_toxels, k, min_size, w.valid)
