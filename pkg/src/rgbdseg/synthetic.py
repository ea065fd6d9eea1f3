"""Synthetic RGBD scenes with exact ground truth.

Scenes are a background plane plus axis-aligned rectangles ("boxes") facing
the camera, each with its own depth (optionally slanted), Lab colour, texture
and integer-pixel velocity. Ground-truth labels are 1 for the background and
``2 + index`` for the objects.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .rgbd_io import CameraIntrinsics, RgbdFrame, lab_to_srgb

BACKGROUND_ID = 1


@dataclass(frozen=True)
class SceneObject:
    x: int
    y: int
    w: int
    h: int
    depth: float
    lab: tuple[float, float, float]
    velocity: tuple[int, int] = (0, 0)
    texture: float = 0.0
    # depth change in meters per pixel along i and j
    slope: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class SceneParams:
    width: int
    height: int
    n_frames: int
    objects: tuple[SceneObject, ...] = ()
    background_depth: float = 3.0
    background_lab: tuple[float, float, float] = (60.0, 0.0, 0.0)
    background_texture: float = 0.0
    background_slope: tuple[float, float] = (0.0, 0.0)
    depth_noise: float = 0.0
    depth_scale: float = 5000.0
    fps: float = 30.0
    intrinsics: Optional[CameraIntrinsics] = None

    def camera(self) -> CameraIntrinsics:
        return self.intrinsics or CameraIntrinsics.default_for(self.width, self.height, self.depth_scale)

    def validate(self) -> None:
        if self.width < 1 or self.height < 1 or self.n_frames < 1:
            raise ValueError("scene dimensions and frame count must be positive")
        max_depth = 65535 / self.depth_scale
        if not 0 < self.background_depth < max_depth:
            raise ValueError(f"background depth {self.background_depth} outside (0, {max_depth})")
        for n, ob in enumerate(self.objects):
            if ob.w < 1 or ob.h < 1:
                raise ValueError(f"object {n} has non-positive size")
            if not 0 < ob.depth < max_depth:
                raise ValueError(f"object {n} depth {ob.depth} outside (0, {max_depth})")
            if ob.x >= self.width or ob.y >= self.height or ob.x + ob.w <= 0 or ob.y + ob.h <= 0:
                raise ValueError(f"object {n} starts outside the frame")


class SyntheticFrame(NamedTuple):
    frame: RgbdFrame
    labels: np.ndarray


def _texture(rng: np.random.Generator, h: int, w: int, amp: float) -> np.ndarray:
    if amp <= 0:
        return np.zeros((h, w, 3))
    tex = np.zeros((h, w, 3))
    tex[..., 0] = rng.uniform(-amp, amp, (h, w))
    tex[..., 1:] = rng.uniform(-amp / 2, amp / 2, (h, w, 2))
    return tex


class _Renderer:
    def __init__(self, params: SceneParams, seed: int):
        params.validate()
        self.p = params
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.bg_tex = _texture(rng, params.height, params.width, params.background_texture)
        self.obj_tex = [_texture(rng, ob.h, ob.w, ob.texture) for ob in params.objects]
        self.k = params.camera()

    def render(self, t: int) -> SyntheticFrame:
        p = self.p
        h, w = p.height, p.width
        jj, ii = np.indices((h, w), dtype=np.float64)
        sx, sy = p.background_slope
        zbuf = p.background_depth + sx * (ii - w / 2) + sy * (jj - h / 2)
        lab = np.empty((h, w, 3))
        lab[:] = p.background_lab
        lab += self.bg_tex
        labels = np.full((h, w), BACKGROUND_ID, np.uint16)
        for n, ob in enumerate(p.objects):
            x0 = ob.x + ob.velocity[0] * t
            y0 = ob.y + ob.velocity[1] * t
            xa, xb = max(x0, 0), min(x0 + ob.w, w)
            ya, yb = max(y0, 0), min(y0 + ob.h, h)
            if xa >= xb or ya >= yb:
                continue
            lj, li = np.indices((yb - ya, xb - xa))
            lj += ya - y0
            li += xa - x0
            z = ob.depth + ob.slope[0] * li + ob.slope[1] * lj
            # later objects win ties so that decals on a surface stay visible
            front = z <= zbuf[ya:yb, xa:xb]
            zbuf[ya:yb, xa:xb] = np.where(front, z, zbuf[ya:yb, xa:xb])
            patch = np.asarray(ob.lab) + self.obj_tex[n][lj, li]
            lab[ya:yb, xa:xb] = np.where(front[..., None], patch, lab[ya:yb, xa:xb])
            labels[ya:yb, xa:xb] = np.where(front, BACKGROUND_ID + 1 + n, labels[ya:yb, xa:xb])
        if p.depth_noise > 0:
            noise_rng = np.random.default_rng([self.seed, t])
            zbuf = zbuf + noise_rng.normal(0.0, p.depth_noise, zbuf.shape)
        raw = np.clip(np.round(zbuf * p.depth_scale), 1, 65535).astype(np.uint16)
        lab[..., 0] = np.clip(lab[..., 0], 0, 100)
        color = lab_to_srgb(lab)
        frame = RgbdFrame(color, raw, t / p.fps, self.k)
        return SyntheticFrame(frame, labels)


def generate_scene(params: SceneParams, seed: int = 0, start: int = 0) -> Iterator[SyntheticFrame]:
    """Lazily render ``params.n_frames`` frames; identical output for identical seeds."""
    r = _Renderer(params, seed)
    for t in range(start, params.n_frames):
        yield r.render(t)


def render_scene(params: SceneParams, seed: int = 0) -> list[SyntheticFrame]:
    return list(generate_scene(params, seed))


# ---------------------------------------------------------------------------
# preset scenes


def two_plane_scene(width=64, height=48, n_frames=8, texture=6.0, depth_noise=0.0) -> SceneParams:
    """Two planes of identical colour at 1 m and 2 m, split down the middle.

    A red square on the near plane adds a colour-only boundary.
    """
    half = width // 2
    grey = (55.0, 5.0, 10.0)
    objects = (
        SceneObject(0, 0, half, height, 1.0, grey, texture=texture),
        SceneObject(half // 4, height // 4, half // 2, height // 2, 1.0, (50.0, 45.0, 30.0), texture=texture),
    )
    return SceneParams(
        width, height, n_frames, objects,
        background_depth=2.0, background_lab=grey, background_texture=texture,
        depth_noise=depth_noise,
    )


def tabletop_scene(width=64, height=48, n_frames=8, texture=6.0, depth_noise=0.005) -> SceneParams:
    """A slanted table top carrying a box and a flat magazine of similar colour."""
    table = SceneObject(0, height // 2, width, height - height // 2, 1.2, (45.0, 10.0, 25.0),
                        texture=texture, slope=(0.0, -0.004))
    box = SceneObject(width // 6, height // 4, width // 4, height // 3, 1.0, (45.0, 10.0, 25.0),
                      texture=texture)
    magazine = SceneObject(width // 2, height // 2 + 2, width // 4, height // 5, 1.17,
                           (65.0, -20.0, 5.0), texture=texture)
    return SceneParams(
        width, height, n_frames, (table, box, magazine),
        background_depth=2.5, background_lab=(70.0, 0.0, 5.0), background_texture=texture,
        depth_noise=depth_noise,
    )


def moving_boxes_scene(width=64, height=48, n_frames=40, speed=1, texture=8.0, depth_noise=0.0) -> SceneParams:
    """Three textured boxes translating rigidly in front of a textured wall."""
    objects = (
        SceneObject(4, 6, width // 5, height // 3, 1.0, (50.0, 50.0, 30.0), (speed, 0), texture),
        SceneObject(width // 2, 4, width // 5, height // 4, 1.5, (60.0, -40.0, 30.0), (0, speed), texture),
        SceneObject(width // 3, height // 2 + 4, width // 4, height // 4, 2.0, (40.0, 10.0, -45.0),
                    (speed, 0), texture),
    )
    return SceneParams(
        width, height, n_frames, objects,
        background_depth=3.0, background_lab=(75.0, 0.0, 0.0), background_texture=texture,
        depth_noise=depth_noise,
    )


def random_step_scene(rng: np.random.Generator, width=48, height=36, n_frames=4,
                      min_step=0.3, max_objects=4) -> SceneParams:
    """Non-overlapping flat boxes whose depths differ from each other and the wall by >= ``min_step``."""
    count = int(rng.integers(1, max_objects + 1))
    depths = [3.0]
    objects = []
    taken = np.zeros((height, width), bool)
    for _ in range(count * 10):
        if len(objects) == count:
            break
        bw = int(rng.integers(8, width // 2))
        bh = int(rng.integers(8, height // 2))
        x = int(rng.integers(0, width - bw))
        y = int(rng.integers(0, height - bh))
        if taken[max(y - 1, 0) : y + bh + 1, max(x - 1, 0) : x + bw + 1].any():
            continue
        for _ in range(50):
            z = float(rng.uniform(0.6, 2.6))
            if all(abs(z - d) >= min_step for d in depths):
                break
        else:
            continue
        taken[y : y + bh, x : x + bw] = True
        depths.append(z)
        lab = (float(rng.uniform(30, 80)), float(rng.uniform(-40, 40)), float(rng.uniform(-40, 40)))
        objects.append(SceneObject(x, y, bw, bh, z, lab, texture=float(rng.uniform(0, 10))))
    return SceneParams(width, height, n_frames, tuple(objects), background_depth=3.0,
                       background_lab=(70.0, 0.0, 0.0), background_texture=float(rng.uniform(0, 10)))


PRESETS = {
    "two-plane": two_plane_scene,
    "tabletop": tabletop_scene,
    "moving-boxes": moving_boxes_scene,
}
