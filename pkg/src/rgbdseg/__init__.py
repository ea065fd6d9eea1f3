"""Streaming hierarchical segmentation of RGBD video.

Frames are grouped into overlapping windows of toxels (pixels in time). Each
window is over-segmented by a depth-then-colour graph segmentation, merged
along a region hierarchy and matched against the previous window so that
regions keep global identities over the whole stream.
"""

from .estimators import HierarchicalSegmenter, LinearBaselineSegmenter, MultistageSegmenter, StreamingSegmenter
from .evaluation import chamfer_error, explained_variation, extract_boundaries, temporal_consistency
from .features import FeatureTable, RegionFeatures, compute_features
from .graph_seg import (
    Segmentation,
    ToxelWindow,
    build_c_graph,
    build_d_graph,
    build_window,
    fh_segment,
    segment_linear_baseline,
    segment_multistage,
    window_from_frames,
)
from .hierarchy import Dendrogram, build_s_graph, cut_dendrogram, kruskal_dendrogram
from .pipeline import PipelineConfig, recut, run_baseline, run_stream
from .rgbd_io import CameraIntrinsics, RgbdFrame, lift_to_3d, load_sequence, srgb_to_lab
from .scene_flow import BlockMatchingFlow, lift_flow, scene_flow
from .temporal_match import MatchParams, TrackState, match_windows, region_distance

__version__ = "0.1.0"

__all__ = [
    "BlockMatchingFlow", "CameraIntrinsics", "Dendrogram", "FeatureTable", "HierarchicalSegmenter",
    "LinearBaselineSegmenter", "MatchParams", "MultistageSegmenter", "PipelineConfig", "RegionFeatures",
    "RgbdFrame", "Segmentation", "StreamingSegmenter", "ToxelWindow", "TrackState", "build_c_graph",
    "build_d_graph", "build_s_graph", "build_window", "chamfer_error", "compute_features", "cut_dendrogram",
    "explained_variation", "extract_boundaries", "fh_segment", "kruskal_dendrogram", "lift_flow",
    "lift_to_3d", "load_sequence", "match_windows", "recut", "region_distance", "run_baseline",
    "run_stream", "scene_flow", "segment_linear_baseline", "segment_multistage", "srgb_to_lab",
    "temporal_consistency", "window_from_frames",
]
