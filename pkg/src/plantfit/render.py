"""Orthographic depth-image rasterization and the acquisition rate.

A normalized cloud fits inside the unit sphere, so an orthographic camera with
a [-1, 1] x [-1, 1] window placed on the sphere sees every point. Each point
covers exactly one pixel; the nearest point wins. Depth t along the viewing
direction is mapped to intensity ``255 - 127 t`` rounded half up, so t = 0 is
255, t = 1 is 128, t = 2 is 1, and 0 is left for background.
"""

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import NotNormalized, ParseError, ZeroPoints
from .geometry import PointCloud

__all__ = [
    "RenderConfig",
    "DepthImage",
    "camera_frame",
    "render_depth_image",
    "compute_acquisition_rate",
    "render_view_set",
    "block_average",
    "write_pgm",
    "read_pgm",
    "view_filename",
]

NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class RenderConfig:
    width: int = 227
    height: int = 227
    t_min: float = 0.0
    t_max: float = 2.0
    check_normalized: bool = True

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not self.t_max > self.t_min:
            raise ValueError("t_max must exceed t_min")


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Row-major ``(height, width)`` uint8 grid; 0 marks background."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.ndim != 2:
            raise ValueError("pixels must be 2-D")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    def occupied(self) -> int:
        return int(np.count_nonzero(self.pixels))

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def digest(self) -> str:
        return hashlib.sha1(self.pixels.tobytes()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, DepthImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    __hash__ = None


def camera_frame(position):
    """Return ``(forward, up, right)`` for a camera at ``position`` looking at the origin.

    Up is world +Z projected off the forward axis (world +Y when looking
    almost straight up or down); right is ``up x forward``.
    """
    pos = np.asarray(position, dtype=np.float64)
    f = -pos / np.linalg.norm(pos)
    ref = np.array([0.0, 0.0, 1.0])
    if abs(f @ ref) > 0.999:
        ref = np.array([0.0, 1.0, 0.0])
    u = ref - (ref @ f) * f
    u /= np.linalg.norm(u)
    r = np.cross(u, f)
    r /= np.linalg.norm(r)
    return f, u, r


def _intensity(t, t_min, t_max):
    frac = (np.clip(t, t_min, t_max) - t_min) / (t_max - t_min)
    # Half-up rounding of 255 - 254 * frac, so t = 0.5 gives 192.
    return np.floor(255.5 - frac * 254.0).astype(np.int64)


def render_depth_image(cloud, pose, cfg: RenderConfig = RenderConfig()) -> DepthImage:
    """Rasterize ``cloud`` as seen from ``pose`` (a CameraPose or a position vector).

    Raises ``NotNormalized`` for points outside the unit sphere unless
    ``cfg.check_normalized`` is off; then points outside the window are dropped.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    position = np.asarray(getattr(pose, "position", pose), dtype=np.float64)
    W, H = cfg.width, cfg.height
    if cfg.check_normalized and len(pts):
        worst = float(np.sqrt((pts**2).sum(axis=1)).max())
        if worst > 1.0 + NORM_TOLERANCE:
            raise NotNormalized(f"point norm {worst:.6g} exceeds 1; normalize the cloud first")
    f, u, r = camera_frame(position)
    rel = pts - position
    a = rel @ r
    b = rel @ u
    t = rel @ f
    # Points within the normalization tolerance of the window edge are clamped in.
    lim = 1.0 + NORM_TOLERANCE
    inside = (np.abs(a) <= lim) & (np.abs(b) <= lim)
    col = np.clip(np.floor((a[inside] + 1.0) / 2.0 * W), 0, W - 1).astype(np.int64)
    row = np.clip(np.floor((1.0 - b[inside]) / 2.0 * H), 0, H - 1).astype(np.int64)
    flat = row * W + col
    inten = _intensity(t[inside], cfg.t_min, cfg.t_max)
    img = np.zeros(H * W, dtype=np.int64)
    np.maximum.at(img, flat, inten)
    return DepthImage(img.reshape(H, W).astype(np.uint8))


def compute_acquisition_rate(image: DepthImage, n_points: int) -> float:
    """Occupied pixels over point count."""
    if n_points < 1:
        raise ZeroPoints("acquisition rate needs at least one point")
    return image.occupied() / n_points


def render_view_set(cloud, poses: Sequence, cfg: RenderConfig = RenderConfig()) -> list:
    return [render_depth_image(cloud, p, cfg) for p in poses]


def block_average(image, side: int) -> np.ndarray:
    """Downsample to ``side`` x ``side`` by averaging contiguous pixel blocks.

    Block edges are ``floor(k * H / side)``, so a 227 image maps to blocks of
    3 or 4 pixels. Returns float32 in [0, 1].
    """
    px = image.pixels if isinstance(image, DepthImage) else np.asarray(image)
    H, W = px.shape
    if side > min(H, W):
        raise ValueError("target side exceeds the image size")
    re = (np.arange(side + 1) * H) // side
    ce = (np.arange(side + 1) * W) // side
    acc = np.add.reduceat(np.add.reduceat(px.astype(np.float64), re[:-1], axis=0), ce[:-1], axis=1)
    area = np.outer(np.diff(re), np.diff(ce))
    return (acc / area / 255.0).astype(np.float32)


# -- PGM files ----------------------------------------------------------------


def view_filename(cloud_id: str, index: int) -> str:
    return f"{cloud_id}_v{index}.pgm"


def write_pgm(image: DepthImage, path, comment: Optional[str] = None) -> None:
    """Binary PGM (P5), maxval 255, row-major."""
    head = b"P5\n"
    if comment:
        for line in comment.splitlines():
            head += b"# " + line.encode("ascii") + b"\n"
    head += f"{image.width} {image.height}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(head + image.tobytes())


def read_pgm(path) -> DepthImage:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ParseError("not a binary PGM (P5)", path=path)
    w, h, maxval = (int(x) for x in tokens[1:])
    if maxval != 255:
        raise ParseError("only maxval 255 is supported", path=path)
    pos += 1
    body = data[pos : pos + w * h]
    if len(body) != w * h:
        raise ParseError("truncated PGM payload", path=path)
    return DepthImage(np.frombuffer(body, dtype=np.uint8).reshape(h, w))
