"""Virtual-camera placement for multi-view rendering.

Three strategies produce the camera sets:

* a fixed ring of 12 cameras at 30 degrees elevation, every 30 degrees of azimuth;
* the normal of the dominant RANSAC plane, expanded to a 13-camera neighborhood;
* the best of the 20 dodecahedron vertices by acquisition rate, expanded the same way.

Angles are in degrees. Elevation ``theta`` is measured from the xy-plane and
azimuth ``phi`` from +x toward +y, so a pose sits at
``(cos theta cos phi, cos theta sin phi, sin theta)``.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DegenerateGeometry, TooFewPoints
from .geometry import PointCloud
from .render import RenderConfig, compute_acquisition_rate, render_depth_image

__all__ = [
    "CameraPose",
    "Plane",
    "RansacConfig",
    "NeighborhoodConfig",
    "NEIGHBORHOOD_OFFSETS",
    "ring_cameras",
    "fit_plane_ransac",
    "candidate_views_from_plane",
    "dodecahedron_candidates",
    "select_view_by_acquisition_rate",
    "expand_view_neighborhood",
    "ransac_views",
    "acquisition_rate_views",
    "format_poses",
    "parse_poses",
]

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


def wrap_azimuth(phi: float) -> float:
    """``phi`` mod 360 in [0, 360); tiny negatives would otherwise round to 360."""
    w = float(phi) % 360.0
    return 0.0 if w >= 360.0 else w


@dataclass(frozen=True)
class CameraPose:
    """A camera on the unit sphere looking at the origin."""

    theta: float
    phi: float

    def __post_init__(self):
        if not -90.0 <= self.theta <= 90.0:
            raise ValueError(f"elevation {self.theta} outside [-90, 90]")
        object.__setattr__(self, "phi", wrap_azimuth(self.phi))

    @property
    def position(self) -> np.ndarray:
        th, ph = math.radians(self.theta), math.radians(self.phi)
        p = np.array([math.cos(th) * math.cos(ph), math.cos(th) * math.sin(ph), math.sin(th)])
        return p / np.linalg.norm(p)

    @property
    def forward(self) -> np.ndarray:
        return -self.position

    @classmethod
    def from_vector(cls, v) -> "CameraPose":
        v = np.asarray(v, dtype=np.float64)
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("cannot place a camera along a zero vector")
        v = v / n
        theta = math.degrees(math.asin(max(-1.0, min(1.0, v[2]))))
        phi = wrap_azimuth(math.degrees(math.atan2(v[1], v[0])))
        return cls(theta, phi)


@dataclass(frozen=True)
class Plane:
    """The plane ``{p : normal . p = offset}`` and the indices of its inliers."""

    normal: np.ndarray
    offset: float
    inliers: tuple = ()

    def distances(self, points) -> np.ndarray:
        return np.abs(np.asarray(points) @ self.normal - self.offset)


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 0.02
    iterations: int = 500
    seed: int = 0

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


# Default 13-camera layout around a center, as (d_theta, d_phi) in units of the step.
NEIGHBORHOOD_OFFSETS = (
    (1, 0), (-1, 0), (2, 0), (-2, 0),
    (0, 1), (0, -1), (0, 2), (0, -2),
    (1, 1), (-1, 1), (1, -1), (-1, -1),
)


@dataclass(frozen=True)
class NeighborhoodConfig:
    step: float = 10.0
    offsets: tuple = NEIGHBORHOOD_OFFSETS

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")


def ring_cameras(elevation: float = 30.0, count: int = 12) -> List[CameraPose]:
    """The 12-camera ring: fixed elevation, azimuth 0, 30, ..., 330."""
    step = 360.0 / count
    return [CameraPose(elevation, i * step) for i in range(count)]


def _plane_from_points(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        return None
    n = n / norm
    return n, float(n @ p0)


def _least_squares_plane(points):
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    n = vt[-1]
    n = n / np.linalg.norm(n)
    return n, float(n @ c)


def _canonical_sign(n, d):
    # Fix the sign so identical planes always come back identical.
    k = int(np.argmax(np.abs(n)))
    if n[k] < 0:
        return -n, -d
    return n, d


def fit_plane_ransac(cloud, cfg: RansacConfig = RansacConfig()) -> Plane:
    """Fit the dominant plane by RANSAC with a least-squares refit.

    Each of ``cfg.iterations`` candidates is the plane through three random
    points. The winner has the most points within ``cfg.threshold``; ties go
    to the smallest sum of squared inlier distances. The winner is refit to
    its inliers by least squares and the inlier set is recomputed against the
    refit plane.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    n_pts = len(pts)
    if n_pts < 3:
        raise TooFewPoints(f"plane fitting needs 3 points, got {n_pts}")
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-10 * sv[0]:
        raise DegenerateGeometry("points are collinear or coincident")

    rng = np.random.default_rng(cfg.seed)
    tau = cfg.threshold
    best = None  # (count, sse, n, d)
    for _ in range(cfg.iterations):
        i, j, k = rng.choice(n_pts, size=3, replace=False)
        plane = _plane_from_points(pts[i], pts[j], pts[k])
        if plane is None:
            continue
        n, d = plane
        dist = np.abs(pts @ n - d)
        mask = dist <= tau
        count = int(mask.sum())
        sse = float((dist[mask] ** 2).sum())
        if best is None or count > best[0] or (count == best[0] and sse < best[1]):
            best = (count, sse, n, d)
    if best is None:
        raise DegenerateGeometry("every sampled triple was collinear")

    _, _, n, d = best
    mask = np.abs(pts @ n - d) <= tau
    n, d = _least_squares_plane(pts[mask])
    mask = np.abs(pts @ n - d) <= tau
    n, d = _canonical_sign(n, d)
    return Plane(n, d, tuple(int(x) for x in np.flatnonzero(mask)))


def candidate_views_from_plane(plane: Plane) -> Tuple[CameraPose, CameraPose]:
    """The two camera poses where the plane normal pierces the unit sphere."""
    return CameraPose.from_vector(plane.normal), CameraPose.from_vector(-plane.normal)


def dodecahedron_candidates() -> List[CameraPose]:
    """The 20 vertices of a regular dodecahedron, projected to the unit sphere."""
    g, ig = GOLDEN, 1.0 / GOLDEN
    verts = [(sx, sy, sz) for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)]
    for a in (1, -1):
        for b in (1, -1):
            verts.append((0.0, a * ig, b * g))
            verts.append((a * ig, b * g, 0.0))
            verts.append((a * g, 0.0, b * ig))
    return [CameraPose.from_vector(v) for v in verts]


def acquisition_rates(cloud, candidates: Sequence, render_cfg: RenderConfig = RenderConfig()) -> List[float]:
    n = len(cloud.points)
    return [compute_acquisition_rate(render_depth_image(cloud, c, render_cfg), n) for c in candidates]


def select_view_by_acquisition_rate(cloud, candidates: Sequence, render_cfg: RenderConfig = RenderConfig()):
    """Candidate with the highest acquisition rate; the lowest index wins ties."""
    if not candidates:
        raise ValueError("at least one candidate is required")
    rates = acquisition_rates(cloud, candidates, render_cfg)
    best = max(range(len(rates)), key=lambda i: (rates[i], -i))
    return candidates[best]


def _key(theta, phi):
    return (round(theta, 9), round(wrap_azimuth(phi), 9))


def expand_view_neighborhood(center: CameraPose, cfg: NeighborhoodConfig = NeighborhoodConfig()) -> List[CameraPose]:
    """Center pose plus one pose per offset, stepping elevation and azimuth.

    Elevations are clamped to [-89, 89] and azimuths wrapped. A pose that
    collides with an earlier one after clamping is nudged by +0.5 degrees of
    azimuth until it is unique, so the count never shrinks.
    """
    out = [center]
    seen = {_key(center.theta, center.phi)}
    for dt, dp in cfg.offsets:
        theta = min(89.0, max(-89.0, center.theta + dt * cfg.step))
        phi = wrap_azimuth(center.phi + dp * cfg.step)
        while _key(theta, phi) in seen:
            phi = wrap_azimuth(phi + 0.5)
        seen.add(_key(theta, phi))
        out.append(CameraPose(theta, phi))
    return out


def ransac_views(cloud, step: float = 10.0, ransac_cfg: RansacConfig = RansacConfig(),
                 render_cfg: RenderConfig = RenderConfig()) -> List[CameraPose]:
    """RANSAC plane normal (sign picked by acquisition rate), expanded to 13 poses."""
    plane = fit_plane_ransac(cloud, ransac_cfg)
    center = select_view_by_acquisition_rate(cloud, list(candidate_views_from_plane(plane)), render_cfg)
    return expand_view_neighborhood(center, NeighborhoodConfig(step))


def acquisition_rate_views(cloud, step: float = 10.0, render_cfg: RenderConfig = RenderConfig()) -> List[CameraPose]:
    center = select_view_by_acquisition_rate(cloud, dodecahedron_candidates(), render_cfg)
    return expand_view_neighborhood(center, NeighborhoodConfig(step))


def format_poses(poses: Sequence[CameraPose]) -> str:
    return "".join(f"{p.theta!r},{p.phi!r}\n" for p in poses)


def parse_poses(text: str) -> List[CameraPose]:
    poses = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        th, ph = line.split(",")
        poses.append(CameraPose(float(th), float(ph)))
    return poses
