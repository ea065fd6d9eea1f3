"""RGBD frame containers, image decoding, colour conversion and back-projection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

# D65 reference white, XYZ scaled so Y = 1.
D65_WHITE = np.array([0.95047, 1.0, 1.08883])

_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_SRGB = np.linalg.inv(_SRGB_TO_XYZ)

_LAB_EPS = 216.0 / 24389.0
_LAB_KAPPA = 24389.0 / 27.0


class ManifestError(ValueError):
    """Raised for unreadable manifests, missing images or inconsistent frames."""

    def __init__(self, message: str, path: Optional[Path] = None, line: Optional[int] = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float = 5000.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not self.depth_scale > 0:
            raise ValueError(f"depth_scale must be positive, got {self.depth_scale}")

    def check_image_size(self, width: int, height: int) -> None:
        if not (0 <= self.cx < width and 0 <= self.cy < height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside a {width}x{height} image"
            )

    @classmethod
    def default_for(cls, width: int, height: int, depth_scale: float = 5000.0) -> "CameraIntrinsics":
        """Kinect-like intrinsics (525 px focal length at 640 px width) scaled to the image size."""
        f = 525.0 * width / 640.0
        return cls(fx=f, fy=f, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0, depth_scale=depth_scale)


@dataclass(frozen=True, eq=False)
class RgbdFrame:
    """One registered colour + depth image pair.

    ``color`` is ``(H, W, 3)`` uint8 sRGB, ``depth`` is ``(H, W)`` uint16 raw
    sensor units where 0 marks a missing measurement.
    """

    color: np.ndarray
    depth: np.ndarray
    timestamp: float
    intrinsics: CameraIntrinsics
    _lab: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        color = np.asarray(self.color)
        depth = np.asarray(self.depth)
        if color.ndim != 3 or color.shape[2] != 3:
            raise ValueError(f"color must be HxWx3, got shape {color.shape}")
        if depth.shape != color.shape[:2]:
            raise ValueError(
                f"color {color.shape[:2]} and depth {depth.shape} dimensions differ"
            )
        color = np.ascontiguousarray(color, dtype=np.uint8)
        depth = np.ascontiguousarray(depth, dtype=np.uint16)
        color.flags.writeable = False
        depth.flags.writeable = False
        object.__setattr__(self, "color", color)
        object.__setattr__(self, "depth", depth)
        self.intrinsics.check_image_size(self.width, self.height)

    @property
    def width(self) -> int:
        return self.color.shape[1]

    @property
    def height(self) -> int:
        return self.color.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.color.shape[:2]

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0

    @property
    def depth_m(self) -> np.ndarray:
        """Depth in meters (0 where invalid)."""
        return self.depth.astype(np.float64) / self.intrinsics.depth_scale

    @property
    def lab(self) -> np.ndarray:
        """CIE Lab image, computed once and cached."""
        if self._lab is None:
            lab = srgb_to_lab(self.color)
            lab.flags.writeable = False
            object.__setattr__(self, "_lab", lab)
        return self._lab

    def with_depth_clamp(self, max_depth_m: float) -> "RgbdFrame":
        """Return a copy where depths beyond ``max_depth_m`` are marked invalid."""
        depth = self.depth.copy()
        depth[self.depth_m > max_depth_m] = 0
        return RgbdFrame(self.color, depth, self.timestamp, self.intrinsics)


class LabPixel(NamedTuple):
    L: float
    a: float
    b: float


class Point3(NamedTuple):
    x: float
    y: float
    z: float


def _srgb_linearize(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _srgb_compand(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1 / 2.4) - 0.055)


def srgb_to_lab(rgb):
    """Convert 8-bit sRGB to CIE L*a*b* under a D65 white point.

    Accepts a single triple (returns :class:`LabPixel`) or any array whose
    last axis has length 3 (returns a float64 array of the same shape).
    """
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.shape[-1] != 3:
        raise ValueError(f"expected trailing dimension 3, got shape {arr.shape}")
    linear = _srgb_linearize(arr / 255.0)
    xyz = linear @ _SRGB_TO_XYZ.T / D65_WHITE
    f = np.where(xyz > _LAB_EPS, np.cbrt(xyz), (_LAB_KAPPA * xyz + 16.0) / 116.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    if arr.ndim == 1:
        return LabPixel(*(float(v) for v in lab))
    return lab


def lab_to_srgb(lab) -> np.ndarray:
    """Inverse of :func:`srgb_to_lab`; returns uint8 values, out-of-gamut colours clipped."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    xyz = np.where(f**3 > _LAB_EPS, f**3, (116.0 * f - 16.0) / _LAB_KAPPA) * D65_WHITE
    rgb = _srgb_compand(xyz @ _XYZ_TO_SRGB.T)
    return np.round(rgb * 255.0).astype(np.uint8)


def lift_to_3d(frame: RgbdFrame, i: int, j: int) -> Optional[Point3]:
    """Back-project pixel (column ``i``, row ``j``); ``None`` where depth is missing."""
    if not (0 <= i < frame.width and 0 <= j < frame.height):
        raise IndexError(f"pixel ({i}, {j}) outside a {frame.width}x{frame.height} frame")
    raw = int(frame.depth[j, i])
    if raw == 0:
        return None
    k = frame.intrinsics
    z = raw / k.depth_scale
    return Point3((i - k.cx) * z / k.fx, (j - k.cy) * z / k.fy, z)


def backproject(frame: RgbdFrame) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`lift_to_3d` over the whole frame.

    Returns an ``(H, W, 3)`` array of camera-frame points (zeros where invalid)
    and the ``(H, W)`` validity mask.
    """
    k = frame.intrinsics
    z = frame.depth_m
    jj, ii = np.indices(frame.shape, dtype=np.float64)
    xyz = np.empty(frame.shape + (3,))
    xyz[..., 0] = (ii - k.cx) * z / k.fx
    xyz[..., 1] = (jj - k.cy) * z / k.fy
    xyz[..., 2] = z
    return xyz, frame.valid


# ---------------------------------------------------------------------------
# Netpbm / PNG codecs


def _read_pnm_header(data: bytes) -> tuple[bytes, int, int, int, int]:
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated netpbm header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    return magic, w, h, maxval, pos


def read_pnm(path) -> np.ndarray:
    """Read a binary PPM (P6) or PGM (P5), 8 or 16 bit (big-endian)."""
    data = Path(path).read_bytes()
    magic, w, h, maxval, offset = _read_pnm_header(data)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported netpbm type {magic!r}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h * channels
    raster = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return raster.reshape(shape).astype(np.uint16 if maxval > 255 else np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(rgb.tobytes())


def write_pgm16(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (w, h))
        fh.write(values.astype(">u2").tobytes())


def read_color(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        img = read_pnm(path)
    else:
        from PIL import Image

        with Image.open(path) as im:
            img = np.asarray(im.convert("RGB"))
    if img.ndim != 3 or img.dtype != np.uint8:
        raise ValueError(f"{path}: expected an 8-bit RGB image")
    return img


def read_depth(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".pnm"):
        img = read_pnm(path)
    else:
        from PIL import Image

        with Image.open(path) as im:
            img = np.asarray(im)
    if img.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel depth image")
    return img.astype(np.uint16)


# ---------------------------------------------------------------------------
# Manifests

INTRINSICS_TAG = "# intrinsics"


@dataclass(frozen=True)
class ManifestEntry:
    timestamp: float
    color_path: Path
    depth_path: Path
    line: int


def parse_manifest(manifest_path, tum_associate: bool = False):
    """Parse a manifest into entries sorted by timestamp.

    Returns ``(entries, intrinsics)`` where ``intrinsics`` comes from an optional
    ``# intrinsics fx fy cx cy depth_scale`` header line, else ``None``.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ManifestError("manifest not found", manifest_path)
    base = manifest_path.parent
    entries: list[ManifestEntry] = []
    intrinsics = None
    ncols = 4 if tum_associate else 3
    for lineno, raw in enumerate(manifest_path.read_text().splitlines(), start=1):
        text = raw.strip()
        if not text:
            continue
        if text.startswith("#"):
            if text.startswith(INTRINSICS_TAG):
                try:
                    vals = [float(v) for v in text[len(INTRINSICS_TAG):].split()]
                    intrinsics = CameraIntrinsics(*vals)
                except (TypeError, ValueError) as exc:
                    raise ManifestError(f"bad intrinsics header ({exc})", manifest_path, lineno)
            continue
        parts = text.split()
        if len(parts) != ncols:
            raise ManifestError(
                f"expected {ncols} fields, found {len(parts)}", manifest_path, lineno
            )
        try:
            ts = float(parts[0])
            if tum_associate:
                float(parts[2])
        except ValueError:
            raise ManifestError(f"unparsable timestamp in {text!r}", manifest_path, lineno)
        color = base / parts[1]
        depth = base / (parts[3] if tum_associate else parts[2])
        for p in (color, depth):
            if not p.exists():
                raise ManifestError(f"missing image {p}", manifest_path, lineno)
        entries.append(ManifestEntry(ts, color, depth, lineno))
    entries.sort(key=lambda e: (e.timestamp, e.line))
    return entries, intrinsics


def load_sequence(
    manifest_path,
    intrinsics: Optional[CameraIntrinsics] = None,
    tum_associate: bool = False,
    max_depth_m: Optional[float] = None,
) -> Iterator[RgbdFrame]:
    """Lazily yield frames of a manifest in timestamp order.

    Only the manifest text is read up front; each image pair is decoded when
    its frame is requested.
    """
    manifest_path = Path(manifest_path)
    entries, header_intrinsics = parse_manifest(manifest_path, tum_associate)
    intrinsics = intrinsics or header_intrinsics
    shape = None
    for entry in entries:
        try:
            color = read_color(entry.color_path)
            depth = read_depth(entry.depth_path)
        except (OSError, ValueError) as exc:
            raise ManifestError(str(exc), manifest_path, entry.line) from exc
        if color.shape[:2] != depth.shape:
            raise ManifestError(
                f"color {color.shape[:2]} and depth {depth.shape} dimensions differ",
                manifest_path,
                entry.line,
            )
        if shape is None:
            shape = depth.shape
        elif depth.shape != shape:
            raise ManifestError(
                f"frame size {depth.shape} differs from sequence size {shape}",
                manifest_path,
                entry.line,
            )
        k = intrinsics or CameraIntrinsics.default_for(shape[1], shape[0])
        frame = RgbdFrame(color, depth, entry.timestamp, k)
        if max_depth_m is not None:
            frame = frame.with_depth_clamp(max_depth_m)
        yield frame


def write_sequence(frames, directory, manifest_name: str = "manifest.txt") -> Path:
    """Write frames as PPM/PGM pairs plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = directory / manifest_name
    with open(manifest, "w") as fh:
        header_written = False
        for n, frame in enumerate(frames):
            if not header_written:
                k = frame.intrinsics
                fh.write(f"{INTRINSICS_TAG} {k.fx!r} {k.fy!r} {k.cx!r} {k.cy!r} {k.depth_scale!r}\n")
                header_written = True
            cname, dname = f"color_{n:06d}.ppm", f"depth_{n:06d}.pgm"
            write_ppm(directory / cname, frame.color)
            write_pgm16(directory / dname, frame.depth)
            fh.write(f"{frame.timestamp!r} {cname} {dname}\n")
    return manifest


def write_tum_associate(frames: Sequence[RgbdFrame], directory, name: str = "associate.txt") -> Path:
    """Write frames in TUM layout (``rgb/``, ``depth/``) with an association file."""
    directory = Path(directory)
    (directory / "rgb").mkdir(parents=True, exist_ok=True)
    (directory / "depth").mkdir(parents=True, exist_ok=True)
    path = directory / name
    with open(path, "w") as fh:
        for frame in frames:
            ts = f"{frame.timestamp:.6f}"
            write_ppm(directory / "rgb" / f"{ts}.ppm", frame.color)
            write_pgm16(directory / "depth" / f"{ts}.pgm", frame.depth)
            fh.write(f"{ts} rgb/{ts}.ppm {ts} depth/{ts}.pgm\n")
    return path
