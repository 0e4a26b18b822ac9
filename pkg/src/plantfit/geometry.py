"""Point-cloud value types, unit-sphere normalization and downsampling."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateCloud, EmptyCloud

__all__ = [
    "PointCloud",
    "NormalizationRecord",
    "normalize_unit_sphere",
    "denormalize",
    "downsample_points",
]


def _as_points(points) -> np.ndarray:
    arr = np.array(points, dtype=np.float64, copy=True)
    if arr.size == 0:
        raise EmptyCloud("point cloud has no points")
    arr = arr.reshape(-1, 3)
    if not np.all(np.isfinite(arr)):
        raise ValueError("point coordinates must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered set of 3D points with an optional id and class label.

    ``points`` is stored as a read-only ``(n, 3)`` float64 array so a cloud can
    be shared freely between threads and callers.
    """

    points: np.ndarray
    id: str = ""
    label: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))

    def __len__(self):
        return self.points.shape[0]

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, id=self.id, label=self.label)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.points.shape == other.points.shape
            and bool(np.array_equal(self.points, other.points))
        )

    __hash__ = None


@dataclass(frozen=True)
class NormalizationRecord:
    center: np.ndarray = field(repr=True)
    radius: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")


def normalize_unit_sphere(cloud: PointCloud):
    """Center ``cloud`` on its centroid and scale the farthest point to norm 1.

    Returns the normalized cloud and the record needed to undo the transform.
    Raises ``DegenerateCloud`` when every point coincides.
    """
    pts = cloud.points
    if len(pts) == 0:
        raise EmptyCloud("point cloud has no points")
    center = pts.mean(axis=0)
    shifted = pts - center
    radius = float(np.sqrt((shifted**2).sum(axis=1)).max())
    # A cloud of identical points leaves only rounding noise after centering.
    scale = float(np.abs(pts).max())
    if radius <= 1e-12 * max(scale, 1.0):
        raise DegenerateCloud("all points coincide; radius is zero")
    out = shifted / radius
    return cloud.with_points(out), NormalizationRecord(center.copy(), radius)


def denormalize(cloud: PointCloud, record: NormalizationRecord) -> PointCloud:
    return cloud.with_points(cloud.points * record.radius + record.center)


def downsample_points(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Draw exactly ``n`` points from ``cloud``.

    With enough points this is a uniform subset without replacement. Smaller
    clouds keep every original point once and fill the remainder by sampling
    with replacement. The output order is randomized in both cases.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    pts = cloud.points
    m = len(pts)
    if m == 0:
        raise EmptyCloud("point cloud has no points")
    rng = np.random.default_rng(seed)
    if m >= n:
        idx = rng.choice(m, size=n, replace=False)
    else:
        extra = rng.integers(0, m, size=n - m)
        idx = rng.permutation(np.concatenate([np.arange(m), extra]))
    return cloud.with_points(pts[idx])
