"""Boundary error, explained variation and parameter sweeps against ground truth."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numba import njit
from scipy.ndimage import distance_transform_edt

from .graph_seg import Segmentation, ToxelWindow

logger = logging.getLogger(__name__)

SWEEP_HEADER = ("scene", "method", "param", "value", "frame", "E_bound")


def extract_boundaries(labels: np.ndarray) -> np.ndarray:
    """Pixels with a 4-neighbour of a different label; label 0 never counts."""
    labels = np.asarray(labels)
    out = np.zeros(labels.shape, bool)
    for axis in (0, 1):
        a = np.swapaxes(labels, 0, axis)
        o = np.swapaxes(out, 0, axis)
        diff = (a[1:] != a[:-1]) & (a[1:] > 0) & (a[:-1] > 0)
        o[1:] |= diff
        o[:-1] |= diff
    return out


def distance_to(boundary: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from every pixel to the nearest ``True`` pixel."""
    boundary = np.asarray(boundary, bool)
    if not boundary.any():
        raise ValueError("distance to an empty boundary is undefined")
    return distance_transform_edt(~boundary)


@njit(cache=True)
def _chamfer34(boundary):
    h, w = boundary.shape
    big = 1 << 30
    d = np.full((h, w), big, np.int64)
    for j in range(h):
        for i in range(w):
            if boundary[j, i]:
                d[j, i] = 0
    for j in range(h):
        for i in range(w):
            v = d[j, i]
            if i > 0:
                v = min(v, d[j, i - 1] + 3)
            if j > 0:
                v = min(v, d[j - 1, i] + 3)
                if i > 0:
                    v = min(v, d[j - 1, i - 1] + 4)
                if i < w - 1:
                    v = min(v, d[j - 1, i + 1] + 4)
            d[j, i] = v
    for j in range(h - 1, -1, -1):
        for i in range(w - 1, -1, -1):
            v = d[j, i]
            if i < w - 1:
                v = min(v, d[j, i + 1] + 3)
            if j < h - 1:
                v = min(v, d[j + 1, i] + 3)
                if i < w - 1:
                    v = min(v, d[j + 1, i + 1] + 4)
                if i > 0:
                    v = min(v, d[j + 1, i - 1] + 4)
            d[j, i] = v
    return d


def chamfer34_distance(boundary: np.ndarray) -> np.ndarray:
    """Classic 3-4 chamfer approximation of the Euclidean distance, in pixels."""
    boundary = np.asarray(boundary, bool)
    if not boundary.any():
        raise ValueError("distance to an empty boundary is undefined")
    return _chamfer34(boundary) / 3.0


def chamfer_error(out: np.ndarray, gt: np.ndarray, mask: str = "exact") -> float:
    """Sum over output boundary pixels of the distance to the nearest ground-truth
    boundary pixel, divided by the image area. Only spurious output boundaries
    are penalised; missing ones cost nothing."""
    out = np.asarray(out, bool)
    gt = np.asarray(gt, bool)
    if out.shape != gt.shape:
        raise ValueError(f"boundary maps differ in shape: {out.shape} vs {gt.shape}")
    if mask == "exact":
        dt = distance_to(gt)
    elif mask == "3-4":
        dt = chamfer34_distance(gt)
    else:
        raise ValueError(f"unknown distance mask {mask!r}")
    return float(dt[out].sum() / out.size)


def frame_errors(pred_frames: Iterable[np.ndarray], gt_frames: Iterable[np.ndarray], mask: str = "exact") -> list[float]:
    """Per-frame boundary error of label maps; frames without ground-truth boundaries are skipped."""
    errs = []
    for pred, gt in zip(pred_frames, gt_frames):
        gb = extract_boundaries(gt)
        if not gb.any():
            continue
        errs.append(chamfer_error(extract_boundaries(pred), gb, mask))
    return errs


def explained_variation(w: ToxelWindow, seg: Segmentation) -> float:
    """``1 - within-region / total`` squared Lab deviation over labelled toxels."""
    m = seg.labels > 0
    lab = w.lab[m]
    labels = seg.labels[m]
    total = ((lab - lab.mean(axis=0)) ** 2).sum()
    if total == 0:
        return 1.0
    n = seg.n_regions + 1
    counts = np.bincount(labels, minlength=n).astype(np.float64)
    within = 0.0
    for c in range(3):
        s = np.bincount(labels, lab[:, c], minlength=n)
        mean = s / np.maximum(counts, 1)
        within += ((lab[:, c] - mean[labels]) ** 2).sum()
    return float(max(0.0, min(1.0, 1.0 - within / total)))


@dataclass(frozen=True)
class SweepRow:
    scene: str
    method: str
    param: str
    value: float
    frame: str
    e_bound: float

    def as_tuple(self):
        return (self.scene, self.method, self.param, self.value, self.frame, self.e_bound)


def sweep(
    scenes: dict,
    param: str,
    values: Sequence[float],
    methods: dict[str, Callable],
    mask: str = "exact",
) -> list[SweepRow]:
    """Evaluate ``methods[name](window, param_value) -> Segmentation`` on every scene.

    ``scenes`` maps a name to ``(window, gt_volume)`` with ``gt_volume`` of
    shape ``(T, H, W)``. One row per (scene, method, value) with the boundary
    error averaged over frames (``frame`` column ``"mean"``).
    """
    rows = []
    for scene_name, (window, gt) in scenes.items():
        for method, fn in methods.items():
            for v in values:
                seg = fn(window, v)
                vol = seg.volume(window.shape)
                errs = frame_errors(vol, gt, mask)
                rows.append(SweepRow(scene_name, method, param, float(v), "mean", float(np.mean(errs))))
                logger.info("%s %s %s=%g E=%.5f", scene_name, method, param, v, rows[-1].e_bound)
    return rows


def write_sweep_csv(path, rows: Iterable[SweepRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_HEADER)
        for r in rows:
            writer.writerow(r.as_tuple())


def temporal_consistency(pred: np.ndarray, gt: np.ndarray, objects: Optional[Sequence[int]] = None) -> float:
    """Fraction of object-frames labelled by the object's own stable global ID.

    ``pred`` and ``gt`` are ``(T, H, W)`` label volumes. In every frame an
    object's ID is the most frequent prediction over its ground-truth pixels.
    An object-frame counts when that ID equals the object's most frequent ID
    over the whole run and no other ground-truth label claims the same ID in
    that frame. ``objects`` defaults to every non-zero ground-truth label.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"volumes differ in shape: {pred.shape} vs {gt.shape}")
    all_ids = [int(g) for g in np.unique(gt) if g != 0]
    objects = all_ids if objects is None else [int(o) for o in objects]
    dominant = {}
    for t in range(gt.shape[0]):
        for g in all_ids:
            v = pred[t][(gt[t] == g) & (pred[t] > 0)]
            if v.size:
                ids, counts = np.unique(v, return_counts=True)
                dominant[t, g] = int(ids[np.argmax(counts)])
    good = total = 0
    for g in objects:
        frames = [t for t in range(gt.shape[0]) if (t, g) in dominant]
        if not frames:
            continue
        ids, counts = np.unique([dominant[t, g] for t in frames], return_counts=True)
        stable = int(ids[np.argmax(counts)])
        for t in frames:
            total += 1
            claimed = any(dominant.get((t, o)) == stable for o in all_ids if o != g)
            good += dominant[t, g] == stable and not claimed
    if total == 0:
        raise ValueError("no object is visible in any frame")
    return good / total
