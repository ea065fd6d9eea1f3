"""Argument checks shared by the estimators, the pipeline and the CLI."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .graph_seg import ToxelWindow
from .rgbd_io import RgbdFrame


def check_positive(name: str, value, allow_zero: bool = False) -> float:
    v = float(value)
    if not math.isfinite(v) or v < 0 or (v == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be finite and {bound}, got {value!r}")
    return v


def check_unit_interval(name: str, value) -> float:
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return v


def check_zeta(zeta) -> float:
    return check_unit_interval("zeta", zeta)


def check_alpha(alpha) -> float:
    return check_unit_interval("alpha", alpha)


def check_min_size(min_size) -> int:
    if int(min_size) != min_size or min_size < 1:
        raise ValueError(f"min_size must be a positive integer, got {min_size!r}")
    return int(min_size)


def check_window_shape(n: int, overlap: int) -> tuple[int, int]:
    if int(n) != n or n < 2:
        raise ValueError(f"window length must be an integer >= 2, got {n!r}")
    if int(overlap) != overlap or not 0 < overlap < n:
        raise ValueError(f"overlap must satisfy 0 < overlap < n={n}, got {overlap!r}")
    return int(n), int(overlap)


def check_frames(frames: Sequence[RgbdFrame]) -> list[RgbdFrame]:
    """Non-empty list of frames sharing one image size."""
    frames = list(frames)
    if not frames:
        raise ValueError("at least one frame is required")
    for idx, f in enumerate(frames):
        if not isinstance(f, RgbdFrame):
            raise TypeError(f"frame {idx} is a {type(f).__name__}, expected RgbdFrame")
        if f.shape != frames[0].shape:
            raise ValueError(f"frame {idx} is {f.shape}, expected {frames[0].shape}")
    return frames


def check_window(w) -> ToxelWindow:
    if not isinstance(w, ToxelWindow):
        raise TypeError(f"expected a ToxelWindow, got {type(w).__name__}")
    if w.n_toxels == 0:
        raise ValueError("window has no toxels")
    if not np.isfinite(w.lab[w.valid]).all():
        raise ValueError("window contains non-finite colour values")
    return w
