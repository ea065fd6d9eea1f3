import numpy as np
import pytest

from rgbdseg.graph_seg import window_from_frames
from rgbdseg.rgbd_io import CameraIntrinsics, RgbdFrame
from rgbdseg.synthetic import render_scene


def make_frame(color, depth_raw, intrinsics=None, timestamp=0.0):
    depth_raw = np.asarray(depth_raw)
    h, w = depth_raw.shape
    color = np.broadcast_to(np.asarray(color, np.uint8), (h, w, 3))
    k = intrinsics or CameraIntrinsics.default_for(w, h)
    return RgbdFrame(color, depth_raw.astype(np.uint16), timestamp, k)


def scene_window(params, seed=0):
    """Window and ground-truth volume of a synthetic scene."""
    frames = render_scene(params, seed)
    w = window_from_frames([f.frame for f in frames])
    return w, np.stack([f.labels for f in frames])


def same_partition(x, y) -> bool:
    """True when two labelings group elements identically (label values may differ)."""
    x = np.asarray(x).ravel()
    y = np.asarray(y).ravel()
    if x.shape != y.shape:
        return False
    pairs = np.unique(np.stack([x, y], axis=1), axis=0)
    return len(np.unique(pairs[:, 0])) == len(pairs) == len(np.unique(pairs[:, 1]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance outcomes, reported at the end of the run: {number: (passed, detail)}
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def report(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
