"""Dense 2D optical flow between registered frames and its lift to 3D scene flow."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, median_filter, uniform_filter

from .rgbd_io import RgbdFrame


@dataclass(frozen=True)
class FlowField2D:
    """Per-pixel apparent motion ``(di, dj)`` in pixels/frame."""

    di: np.ndarray
    dj: np.ndarray
    valid: np.ndarray

    @property
    def shape(self):
        return self.di.shape

    @classmethod
    def zeros(cls, shape, valid=None) -> "FlowField2D":
        valid = np.ones(shape, bool) if valid is None else np.asarray(valid, bool)
        return cls(np.zeros(shape), np.zeros(shape), valid)


@dataclass(frozen=True)
class SceneFlowField:
    """3D motion ``(u, v, w)`` in meters/frame anchored at pixels of the earlier frame.

    ``target_i``/``target_j`` hold the rounded pixel each source pixel moves to;
    they are meaningful only where ``valid`` is set.
    """

    uvw: np.ndarray
    valid: np.ndarray
    target_i: np.ndarray
    target_j: np.ndarray

    @property
    def shape(self):
        return self.valid.shape


FlowEstimator = Callable[[RgbdFrame, RgbdFrame], FlowField2D]


def _downsample(img: np.ndarray) -> np.ndarray:
    # low-pass first so that half-pixel motion at the coarser level still matches
    return gaussian_filter(img, sigma=1.0, mode="nearest")[::2, ::2]


def _upsample_flow(flow: np.ndarray, shape) -> np.ndarray:
    up = np.repeat(np.repeat(flow, 2, axis=0), 2, axis=1)[: shape[0], : shape[1]]
    return up * 2


class BlockMatchingFlow:
    """Coarse-to-fine block matching on the Lab lightness channel.

    At every pyramid level each pixel tests the integer displacements within
    ``radius`` of the upsampled coarser estimate (its own and its 8
    neighbours'), plus those within ``radius`` of zero at the finest level, and
    keeps the one with the lowest sum of absolute differences over a
    ``patch`` x ``patch`` window. Levels are Gaussian-smoothed before
    decimation. Ties go to the smaller displacement,
    then to the lexicographically smaller ``(di, dj)``. Coarse estimates are
    median filtered before upsampling. Pixels whose costs are (numerically)
    flat across all candidates keep the coarser estimate, so textureless
    input produces zero flow.
    """

    def __init__(self, patch: int = 9, radius: int = 4, levels: int = 3, flat_tol: float = 1e-6):
        if patch < 1 or patch % 2 == 0:
            raise ValueError("patch must be a positive odd integer")
        if radius < 0 or levels < 1:
            raise ValueError("radius must be >= 0 and levels >= 1")
        self.patch = patch
        self.radius = radius
        self.levels = levels
        self.flat_tol = flat_tol
        r = radius
        offsets = [(di, dj) for di in range(-r, r + 1) for dj in range(-r, r + 1)]
        offsets.sort(key=lambda o: (o[0] ** 2 + o[1] ** 2, o[0], o[1]))
        self._offsets = offsets

    def _refine(self, prev: np.ndarray, nxt: np.ndarray, prior_i: np.ndarray, prior_j: np.ndarray,
                around_zero: bool = True):
        # A pixel searches radius-r windows around its own coarse estimate and
        # those of its 8 neighbours, so one bad coarse match cannot hide the
        # true displacement. Costs are evaluated per candidate displacement over
        # the whole image, which keeps the patch SAD exact.
        h, w = prev.shape
        r = self.radius
        area = float(self.patch * self.patch)
        priors = np.unique(np.stack([prior_i.ravel(), prior_j.ravel()], axis=1), axis=0)
        cands = {(int(pi) + di, int(pj) + dj) for pi, pj in priors for di, dj in self._offsets}
        if around_zero:
            cands.update(self._offsets)
        cands = sorted(cands, key=lambda o: (o[0] ** 2 + o[1] ** 2, o[0], o[1]))
        pad = max(max(abs(c[0]), abs(c[1])) for c in cands)
        padded = np.pad(nxt, pad, mode="edge")
        best = np.full((h, w), np.inf)
        best_i = prior_i.copy()
        best_j = prior_j.copy()
        count = np.zeros((h, w))
        s1 = np.zeros((h, w))
        s2 = np.zeros((h, w))
        for di, dj in cands:
            near = (np.abs(prior_i - di) <= r) & (np.abs(prior_j - dj) <= r)
            inwin = maximum_filter(near, size=3, mode="nearest")
            if around_zero and abs(di) <= r and abs(dj) <= r:
                inwin[:] = True
            if not inwin.any():
                continue
            shifted = padded[pad + dj : pad + dj + h, pad + di : pad + di + w]
            cost = uniform_filter(np.abs(prev - shifted), size=self.patch, mode="nearest") * area
            cost = np.where(inwin, cost, np.inf)
            better = cost < best
            best[better] = cost[better]
            best_i[better] = di
            best_j[better] = dj
            count += inwin
            s1[inwin] += cost[inwin]
            s2[inwin] += cost[inwin] ** 2
        mean = s1 / count
        flat = s2 / count - mean**2 < self.flat_tol
        best_i[flat] = prior_i[flat]
        best_j[flat] = prior_j[flat]
        return best_i, best_j

    def __call__(self, prev: RgbdFrame, nxt: RgbdFrame) -> FlowField2D:
        if prev.shape != nxt.shape:
            raise ValueError(f"frame dimensions differ: {prev.shape} vs {nxt.shape}")
        pyr_prev = [prev.lab[..., 0]]
        pyr_next = [nxt.lab[..., 0]]
        for _ in range(self.levels - 1):
            pyr_prev.append(_downsample(pyr_prev[-1]))
            pyr_next.append(_downsample(pyr_next[-1]))
        fi = np.zeros(pyr_prev[-1].shape, dtype=np.int64)
        fj = np.zeros_like(fi)
        for level in range(self.levels - 1, -1, -1):
            shape = pyr_prev[level].shape
            if fi.shape != shape:
                fi = _upsample_flow(fi, shape)
                fj = _upsample_flow(fj, shape)
            fi, fj = self._refine(pyr_prev[level], pyr_next[level], fi, fj, around_zero=level == 0)
            if level > 0:
                # coarse levels see sub-pixel motion; suppress isolated false matches
                fi = median_filter(fi, size=5, mode="nearest")
                fj = median_filter(fj, size=5, mode="nearest")
        valid = prev.valid
        di = np.where(valid, fi, 0).astype(np.float64)
        dj = np.where(valid, fj, 0).astype(np.float64)
        return FlowField2D(di, dj, valid.copy())


_default_estimator = BlockMatchingFlow()


def dense_flow(prev: RgbdFrame, nxt: RgbdFrame, estimator: Optional[FlowEstimator] = None) -> FlowField2D:
    """2D optical flow from ``prev`` to ``nxt``; invalid wherever ``prev`` lacks depth."""
    if prev.shape != nxt.shape:
        raise ValueError(f"frame dimensions differ: {prev.shape} vs {nxt.shape}")
    return (estimator or _default_estimator)(prev, nxt)


def round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def lift_flow(prev: RgbdFrame, nxt: RgbdFrame, flow: FlowField2D) -> SceneFlowField:
    """Lift 2D flow to scene flow.

    ``w`` is the depth at the flowed pixel of ``nxt`` minus the depth at the
    source pixel of ``prev``; ``u``/``v`` scale the pixel displacement by the
    target depth over the focal length. A pixel is invalid if the flowed
    position leaves the image or either endpoint lacks depth.
    """
    h, w = prev.shape
    jj, ii = np.indices((h, w))
    ti = round_half_up(ii + flow.di)
    tj = round_half_up(jj + flow.dj)
    inside = (ti >= 0) & (ti < w) & (tj >= 0) & (tj < h)
    tic = np.clip(ti, 0, w - 1)
    tjc = np.clip(tj, 0, h - 1)
    z_prev = prev.depth_m
    z_next = nxt.depth_m[tjc, tic]
    valid = flow.valid & prev.valid & inside & (nxt.depth[tjc, tic] > 0)
    k = nxt.intrinsics
    uvw = np.zeros((h, w, 3))
    uvw[..., 0] = flow.di * z_next / k.fx
    uvw[..., 1] = flow.dj * z_next / k.fy
    uvw[..., 2] = z_next - z_prev
    uvw[~valid] = 0.0
    return SceneFlowField(uvw, valid, np.where(valid, ti, -1), np.where(valid, tj, -1))


def scene_flow(prev: RgbdFrame, nxt: RgbdFrame, estimator: Optional[FlowEstimator] = None) -> SceneFlowField:
    return lift_flow(prev, nxt, dense_flow(prev, nxt, estimator))


FLOW_MAGIC = b"FLW1"


def write_flow(path, values: np.ndarray) -> None:
    """Dump an ``(H, W, 3)`` float field as ``FLW1`` + little-endian width, height, f32 triples."""
    values = np.asarray(values, dtype="<f4")
    if values.ndim != 3 or values.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 field, got {values.shape}")
    h, w = values.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(np.ascontiguousarray(values).tobytes())


def read_flow(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FLOW_MAGIC:
        raise ValueError(f"{path}: not a FLW1 file")
    w, h = struct.unpack("<II", data[4:12])
    return np.frombuffer(data, dtype="<f4", offset=12, count=w * h * 3).reshape(h, w, 3).copy()


def flow_to_array(flow) -> np.ndarray:
    """Pack a flow field for :func:`write_flow`: ``(di, dj, valid)`` or ``(u, v, w)``."""
    if isinstance(flow, SceneFlowField):
        return flow.uvw
    return np.stack([flow.di, flow.dj, flow.valid.astype(np.float64)], axis=-1)
