"""Per-region LABXYZUVW histogram features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .graph_seg import Segmentation, ToxelWindow


class HistogramSpec(NamedTuple):
    name: str
    lo: float
    hi: float
    bins: int


DEFAULT_HISTOGRAMS: tuple[HistogramSpec, ...] = (
    HistogramSpec("L", 0.0, 100.0, 20),
    HistogramSpec("a", -110.0, 110.0, 20),
    HistogramSpec("b", -110.0, 110.0, 20),
    HistogramSpec("X", -4.0, 4.0, 30),
    HistogramSpec("Y", -4.0, 4.0, 30),
    HistogramSpec("Z", 0.0, 8.0, 30),
    HistogramSpec("U", -0.5, 0.5, 20),
    HistogramSpec("V", -0.5, 0.5, 20),
    HistogramSpec("W", -0.5, 0.5, 20),
)


def bin_index(values: np.ndarray, spec: HistogramSpec) -> np.ndarray:
    """Bin of each value; out-of-range values land in the end bins."""
    scaled = (np.asarray(values, dtype=np.float64) - spec.lo) / (spec.hi - spec.lo) * spec.bins
    return np.clip(np.floor(scaled), 0, spec.bins - 1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class RegionFeatures:
    hists: tuple[np.ndarray, ...]
    hist_counts: np.ndarray
    size: int
    centroid: np.ndarray
    mean_flow: np.ndarray


@dataclass(eq=False)
class FeatureTable:
    """Features of all regions of a segmentation; row ``r`` is label ``r + 1``.

    Sums rather than means are stored so that merged regions can be
    described exactly by adding rows.
    """

    hists: list[np.ndarray]
    sizes: np.ndarray
    xyz_sum: np.ndarray
    flow_sum: np.ndarray
    flow_count: np.ndarray
    frame_bbox_min: np.ndarray
    frame_bbox_max: np.ndarray
    specs: tuple[HistogramSpec, ...] = DEFAULT_HISTOGRAMS

    def __len__(self) -> int:
        return self.sizes.shape[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.xyz_sum / np.maximum(self.sizes, 1)[:, None]

    @property
    def mean_flow(self) -> np.ndarray:
        return self.flow_sum / np.maximum(self.flow_count, 1)[:, None]

    @property
    def n_frames(self) -> int:
        return self.frame_bbox_min.shape[1]

    def bbox(self, frames: slice = slice(None)) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned 3D box of every region over the given window frames.

        Regions absent from those frames get an empty box (``+inf``/``-inf``).
        """
        return self.frame_bbox_min[:, frames].min(axis=1), self.frame_bbox_max[:, frames].max(axis=1)

    @property
    def bbox_min(self) -> np.ndarray:
        return self.bbox()[0]

    @property
    def bbox_max(self) -> np.ndarray:
        return self.bbox()[1]

    @property
    def hist_counts(self) -> np.ndarray:
        return np.stack([h.sum(axis=1) for h in self.hists], axis=1)

    def __getitem__(self, r: int) -> RegionFeatures:
        return RegionFeatures(
            tuple(h[r] for h in self.hists),
            self.hist_counts[r],
            int(self.sizes[r]),
            self.centroid[r],
            self.mean_flow[r],
        )

    def aggregate(self, group: np.ndarray, n_groups: int) -> "FeatureTable":
        """Features of merged regions; ``group[r]`` is the 0-based target row of row ``r``."""
        group = np.asarray(group, dtype=np.int64)

        def add(x):
            out = np.zeros((n_groups,) + x.shape[1:], dtype=x.dtype)
            np.add.at(out, group, x)
            return out

        lo = np.full((n_groups,) + self.frame_bbox_min.shape[1:], np.inf)
        hi = np.full((n_groups,) + self.frame_bbox_max.shape[1:], -np.inf)
        np.minimum.at(lo, group, self.frame_bbox_min)
        np.maximum.at(hi, group, self.frame_bbox_max)
        return FeatureTable(
            [add(h) for h in self.hists],
            add(self.sizes),
            add(self.xyz_sum),
            add(self.flow_sum),
            add(self.flow_count),
            lo,
            hi,
            self.specs,
        )


def compute_features(
    w: ToxelWindow,
    seg: Segmentation,
    specs: Sequence[HistogramSpec] = DEFAULT_HISTOGRAMS,
) -> FeatureTable:
    """Histogram colour, position and scene flow of every region.

    Toxels without flow (the window's first frame, failed flow) contribute to
    the colour and position histograms only.
    """
    if len(specs) != 9:
        raise ValueError("expected nine histogram specs (L, a, b, X, Y, Z, U, V, W)")
    labels = seg.labels
    n = seg.n_regions
    m = labels > 0
    lab_ = labels[m] - 1
    has_flow = w.flow_valid[m]
    sources = (w.lab[m], w.xyz[m], w.flow_uvw[m])
    hists = []
    for k, spec in enumerate(specs):
        values = sources[k // 3][:, k % 3]
        rows = lab_
        if k >= 6:
            values = values[has_flow]
            rows = lab_[has_flow]
        idx = rows * spec.bins + bin_index(values, spec)
        hists.append(np.bincount(idx, minlength=n * spec.bins).reshape(n, spec.bins))
    sizes = np.bincount(lab_, minlength=n)
    xyz = w.xyz[m]
    xyz_sum = np.stack([np.bincount(lab_, xyz[:, c], minlength=n) for c in range(3)], axis=1)
    uvw = w.flow_uvw[m][has_flow]
    frows = lab_[has_flow]
    flow_sum = np.stack([np.bincount(frows, uvw[:, c], minlength=n) for c in range(3)], axis=1)
    flow_count = np.bincount(frows, minlength=n)
    frame = w.frame_of(np.flatnonzero(m))
    lo = np.full((n, w.n_frames, 3), np.inf)
    hi = np.full((n, w.n_frames, 3), -np.inf)
    np.minimum.at(lo, (lab_, frame), xyz)
    np.maximum.at(hi, (lab_, frame), xyz)
    return FeatureTable(hists, sizes, xyz_sum, flow_sum, flow_count, lo, hi, tuple(specs))
