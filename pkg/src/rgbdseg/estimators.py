"""scikit-learn style wrappers around the segmenters.

Each estimator accepts either a :class:`~rgbdseg.graph_seg.ToxelWindow` or
a sequence of :class:`~rgbdseg.rgbd_io.RgbdFrame` (scene flow is then
estimated with the default block matcher). After ``fit`` the per-toxel labels
are in ``labels_`` (flat, window order) and ``labels_volume_`` (``T, H, W``).
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .features import compute_features
from .graph_seg import (
    DEFAULT_DEPTH_WEIGHT,
    DEFAULT_K_COLOR,
    DEFAULT_K_DEPTH,
    DEFAULT_MIN_SIZE,
    Segmentation,
    ToxelWindow,
    segment_linear_baseline,
    segment_multistage,
    window_from_frames,
)
from .hierarchy import DEFAULT_ZETA, apply_cut, build_s_graph, cut_dendrogram, kruskal_dendrogram
from .pipeline import PipelineConfig, run_windows
from .temporal_match import MatchParams
from .validation import check_alpha, check_frames, check_min_size, check_positive, check_window, check_zeta


def as_window(X) -> ToxelWindow:
    if isinstance(X, ToxelWindow):
        return check_window(X)
    return check_window(window_from_frames(check_frames(X)))


class _WindowSegmenter(ClusterMixin, BaseEstimator):
    def _store(self, w: ToxelWindow, seg: Segmentation):
        self.window_shape_ = w.shape
        self.segmentation_ = seg
        self.labels_ = seg.labels
        self.n_regions_ = seg.n_regions
        return self

    @property
    def labels_volume_(self) -> np.ndarray:
        return self.labels_.reshape(self.window_shape_)

    def fit_predict(self, X, y=None, **kwargs):
        return self.fit(X).labels_


class MultistageSegmenter(_WindowSegmenter):
    """Depth-then-colour graph segmentation of one window.

    ``depth_labels_`` holds the depth-only stage, which the final labels refine.
    """

    def __init__(self, k_depth=DEFAULT_K_DEPTH, k_color=DEFAULT_K_COLOR, min_size=DEFAULT_MIN_SIZE):
        self.k_depth = k_depth
        self.k_color = k_color
        self.min_size = min_size

    def fit(self, X, y=None):
        check_positive("k_depth", self.k_depth)
        check_positive("k_color", self.k_color)
        min_size = check_min_size(self.min_size)
        w = as_window(X)
        res = segment_multistage(w, self.k_depth, self.k_color, min_size, return_depth=True)
        self.depth_labels_ = res.depth_segmentation.labels
        return self._store(w, res.segmentation)


class LinearBaselineSegmenter(_WindowSegmenter):
    """Single graph segmentation on a fixed blend of colour and depth differences."""

    def __init__(self, alpha=0.5, k=DEFAULT_K_COLOR, min_size=DEFAULT_MIN_SIZE, depth_weight=DEFAULT_DEPTH_WEIGHT):
        self.alpha = alpha
        self.k = k
        self.min_size = min_size
        self.depth_weight = depth_weight

    def fit(self, X, y=None):
        alpha = check_alpha(self.alpha)
        check_positive("k", self.k)
        check_positive("depth_weight", self.depth_weight, allow_zero=True)
        w = as_window(X)
        seg = segment_linear_baseline(w, alpha, self.k, check_min_size(self.min_size), self.depth_weight)
        return self._store(w, seg)


class HierarchicalSegmenter(_WindowSegmenter):
    """Multistage over-segmentation merged along its region hierarchy.

    ``fit`` keeps the dendrogram, so :meth:`cut` can produce the labelling at
    any other ``zeta`` without segmenting again.
    """

    def __init__(self, k_depth=DEFAULT_K_DEPTH, k_color=DEFAULT_K_COLOR, min_size=DEFAULT_MIN_SIZE,
                 zeta=DEFAULT_ZETA, s_beta=1.0, s_gamma=10.0, s_epsilon=0.0):
        self.k_depth = k_depth
        self.k_color = k_color
        self.min_size = min_size
        self.zeta = zeta
        self.s_beta = s_beta
        self.s_gamma = s_gamma
        self.s_epsilon = s_epsilon

    def fit(self, X, y=None):
        zeta = check_zeta(self.zeta)
        w = as_window(X)
        over = segment_multistage(w, check_positive("k_depth", self.k_depth),
                                  check_positive("k_color", self.k_color), check_min_size(self.min_size))
        weights = MatchParams.ungated(beta=self.s_beta, gamma=self.s_gamma, epsilon=self.s_epsilon)
        self.overseg_ = over
        self.features_ = compute_features(w, over)
        self.dendrogram_ = kruskal_dendrogram(build_s_graph(over, self.features_, w.shape, weights), over.n_regions)
        return self._store(w, apply_cut(over, cut_dendrogram(self.dendrogram_, zeta)))

    def cut(self, zeta) -> np.ndarray:
        """Flat labels at another merge fraction, from the fitted hierarchy."""
        if not hasattr(self, "dendrogram_"):
            raise AttributeError("HierarchicalSegmenter is not fitted yet")
        return apply_cut(self.overseg_, cut_dendrogram(self.dendrogram_, check_zeta(zeta))).labels


class StreamingSegmenter(ClusterMixin, BaseEstimator):
    """Windowed segmentation of a whole frame sequence with global region IDs.

    ``labels_`` is the ``(T, H, W)`` volume of global IDs (0 where depth is
    missing). Options not exposed here come from ``config``.
    """

    def __init__(self, n=8, overlap=4, k_depth=DEFAULT_K_DEPTH, k_color=DEFAULT_K_COLOR,
                 min_size=DEFAULT_MIN_SIZE, zeta=DEFAULT_ZETA, baseline=False, alpha=0.5,
                 k=DEFAULT_K_COLOR, config: Optional[PipelineConfig] = None):
        self.n = n
        self.overlap = overlap
        self.k_depth = k_depth
        self.k_color = k_color
        self.min_size = min_size
        self.zeta = zeta
        self.baseline = baseline
        self.alpha = alpha
        self.k = k
        self.config = config

    def _config(self) -> PipelineConfig:
        own = {name: getattr(self, name)
               for name in ("n", "overlap", "k_depth", "k_color", "min_size", "zeta", "alpha", "k")}
        return PipelineConfig.from_mapping(own, base=self.config)

    def fit(self, X, y=None):
        frames = check_frames(X)
        results = list(run_windows(self._config(), frames, baseline=bool(self.baseline)))
        self.labels_ = np.concatenate([r.labels for r in results])
        self.n_windows_ = len(results)
        self.window_stats_ = [r.metrics_row() for r in results]
        self.n_ids_ = int(np.unique(self.labels_[self.labels_ > 0]).size)
        return self

    def fit_predict(self, X, y=None, **kwargs):
        return self.fit(X).labels_
