"""Synthetic laser-scanned fitting components.

Components are unions of parametric surface patches (tubes, bends, cones,
annuli, spheres) sampled uniformly by area. ``simulate_scan`` then applies the
effects a real plant scan shows: point density that falls off with the
square of the scanner distance, line-of-sight occlusion through a spherical
depth buffer around the scanner, and Gaussian range noise.
"""

import configparser
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from .dataset import (
    DEFAULT_LABELS,
    Manifest,
    Sample,
    Taxonomy,
    save_manifest,
    write_point_cloud,
)
from .errors import InvalidSpec, PlantFitError, ScannerInsideObject
from .geometry import PointCloud

__all__ = [
    "Patch",
    "ComponentSpec",
    "ScanConfig",
    "CorpusConfig",
    "DEFAULT_DIMENSIONS",
    "SUPPORTED_LABELS",
    "component_patches",
    "surface_area",
    "generate_component_surface",
    "simulate_scan",
    "random_rotation",
    "build_synthetic_corpus",
    "load_corpus_config",
    "save_corpus_config",
]

TWO_PI = 2.0 * math.pi
_QUAD_N = 96


# -- parametric patches -------------------------------------------------------


@dataclass(frozen=True)
class Patch:
    """A smooth surface ``fn(u, v)`` over the unit square.

    ``fn`` maps two equal-shape arrays to an ``(..., 3)`` array of points.
    """

    fn: Callable
    name: str = ""

    def __call__(self, u, v):
        return self.fn(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))

    def area_element(self, u, v, h=1e-6):
        u = np.clip(u, h, 1 - h)
        v = np.clip(v, h, 1 - h)
        du = (self(u + h, v) - self(u - h, v)) / (2 * h)
        dv = (self(u, v + h) - self(u, v - h)) / (2 * h)
        return np.linalg.norm(np.cross(du, dv), axis=-1)

    def grid_stats(self):
        """Midpoint-rule area plus the min/max area element on the grid."""
        g = (np.arange(_QUAD_N) + 0.5) / _QUAD_N
        uu, vv = np.meshgrid(g, g, indexing="ij")
        jac = self.area_element(uu, vv)
        return float(jac.mean()), float(jac.min()), float(jac.max())

    def area(self):
        return self.grid_stats()[0]


def _frame(axis):
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    helper = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(a, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    return a, e1, e2


def _outer(s, vec):
    return s[..., None] * vec


def tube(radius, length, origin=(0, 0, 0), axis=(1, 0, 0), arc=1.0, arc_start=0.0):
    """Open cylinder of ``radius`` from ``origin`` along ``axis``."""
    o = np.asarray(origin, dtype=np.float64)
    a, e1, e2 = _frame(axis)

    def fn(u, v):
        th = TWO_PI * (arc_start + arc * u)
        return o + _outer(length * v, a) + _outer(radius * np.cos(th), e1) + _outer(radius * np.sin(th), e2)

    return Patch(fn, "tube")


def frustum(r0, r1, length, origin=(0, 0, 0), axis=(1, 0, 0), offset=0.0):
    """Cone section from radius ``r0`` to ``r1``.

    A non-zero ``offset`` slides the far circle sideways (eccentric reducer).
    """
    o = np.asarray(origin, dtype=np.float64)
    a, e1, e2 = _frame(axis)

    def fn(u, v):
        th = TWO_PI * u
        r = r0 + (r1 - r0) * v
        c = o + _outer(length * v, a) + _outer(offset * v, e1)
        return c + _outer(r * np.cos(th), e1) + _outer(r * np.sin(th), e2)

    return Patch(fn, "frustum")


def annulus(r_in, r_out, origin=(0, 0, 0), axis=(1, 0, 0)):
    o = np.asarray(origin, dtype=np.float64)
    _, e1, e2 = _frame(axis)

    def fn(u, v):
        th = TWO_PI * u
        r = r_in + (r_out - r_in) * v
        return o + _outer(r * np.cos(th), e1) + _outer(r * np.sin(th), e2)

    return Patch(fn, "annulus")


def bend(bend_radius, tube_radius, sweep_deg, origin=(0, 0, 0)):
    """Torus section in the xy-plane, centered on ``origin``, sweeping from +x."""
    o = np.asarray(origin, dtype=np.float64)
    sweep = math.radians(sweep_deg)

    def fn(u, v):
        phi = sweep * v
        psi = TWO_PI * u
        ring = bend_radius + tube_radius * np.cos(psi)
        return o + np.stack([ring * np.cos(phi), ring * np.sin(phi), tube_radius * np.sin(psi)], axis=-1)

    return Patch(fn, "bend")


def sphere(radius, origin=(0, 0, 0)):
    o = np.asarray(origin, dtype=np.float64)

    def fn(u, v):
        th = TWO_PI * u
        z = 1.0 - 2.0 * v
        s = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
        return o + radius * np.stack([s * np.cos(th), s * np.sin(th), z], axis=-1)

    return Patch(fn, "sphere")


def torus_ring(major, minor, origin=(0, 0, 0), axis=(0, 0, 1)):
    o = np.asarray(origin, dtype=np.float64)
    a, e1, e2 = _frame(axis)

    def fn(u, v):
        phi = TWO_PI * v
        psi = TWO_PI * u
        ring = major + minor * np.cos(psi)
        return o + _outer(ring * np.cos(phi), e1) + _outer(ring * np.sin(phi), e2) + _outer(minor * np.sin(psi), a)

    return Patch(fn, "torus")


def _disk(r_in, r_out, thickness, origin, axis):
    """A flange-like disk: two annular faces joined by an outer rim."""
    o = np.asarray(origin, dtype=np.float64)
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    return [
        annulus(r_in, r_out, o, a),
        annulus(r_in, r_out, o + thickness * a, a),
        tube(r_out, thickness, o, a),
    ]


# -- component catalog ----------------------------------------------------------

# Plumbing defaults in meters; none of these come from measured plant data.
DEFAULT_DIMENSIONS: Dict[str, Dict[str, float]] = {
    "Pipe": {"radius": 0.08, "length": 0.9},
    "Elbow 90": {"bend_radius": 0.18, "tube_radius": 0.08, "sweep": 90.0},
    "Elbow non 90": {"bend_radius": 0.18, "tube_radius": 0.08, "sweep": 45.0},
    "Flange": {"pipe_radius": 0.08, "disk_radius": 0.2, "disk_thickness": 0.04, "hub_radius": 0.1, "hub_length": 0.04},
    "Flange WN": {"pipe_radius": 0.08, "disk_radius": 0.2, "disk_thickness": 0.04, "hub_radius": 0.11, "hub_length": 0.16},
    "Blind Flange": {"disk_radius": 0.2, "thickness": 0.05},
    "Tee": {"main_radius": 0.08, "main_length": 0.5, "branch_radius": 0.08, "branch_length": 0.25},
    "Tee RED": {"main_radius": 0.09, "main_length": 0.5, "branch_radius": 0.05, "branch_length": 0.25},
    "Cross": {"radius": 0.08, "arm_length": 0.25},
    "Wye": {"radius": 0.08, "main_length": 0.6, "branch_length": 0.3, "branch_angle": 45.0},
    "Reducer CONC": {"radius_large": 0.12, "radius_small": 0.06, "length": 0.3},
    "Reducer ECC": {"radius_large": 0.12, "radius_small": 0.06, "length": 0.3},
    "Reducer Insert": {"radius_large": 0.12, "radius_small": 0.05, "length": 0.12, "insert_length": 0.25},
    "Valve": {"pipe_radius": 0.08, "body_radius": 0.14, "flange_radius": 0.17, "face_length": 0.5, "stem_length": 0.35, "wheel_radius": 0.16},
    "Strainer": {"pipe_radius": 0.08, "main_length": 0.5, "screen_radius": 0.1, "screen_length": 0.3, "screen_angle": 45.0},
    "Safety Valve": {"inlet_radius": 0.06, "body_radius": 0.12, "outlet_radius": 0.08, "bonnet_length": 0.4, "outlet_length": 0.22},
    "Olet": {"header_radius": 0.3, "saddle_arc": 60.0, "saddle_length": 0.25, "branch_radius": 0.05, "branch_length": 0.12},
    "Orifice Flange": {"pipe_radius": 0.08, "disk_radius": 0.2, "disk_thickness": 0.05, "plate_radius": 0.23, "plate_thickness": 0.008, "tap_radius": 0.012, "tap_length": 0.06},
}

SUPPORTED_LABELS = tuple(lab for lab in DEFAULT_LABELS if lab in DEFAULT_DIMENSIONS)


@dataclass(frozen=True)
class ComponentSpec:
    """A fitting type and its shape parameters (meters, degrees for angles)."""

    label: str
    params: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def default(cls, label: str) -> "ComponentSpec":
        if label not in DEFAULT_DIMENSIONS:
            raise InvalidSpec(f"no generator for label {label!r}")
        return cls(label, dict(DEFAULT_DIMENSIONS[label]))

    def validate(self):
        if self.label not in DEFAULT_DIMENSIONS:
            raise InvalidSpec(f"no generator for label {self.label!r}")
        required = DEFAULT_DIMENSIONS[self.label]
        missing = set(required) - set(self.params)
        if missing:
            raise InvalidSpec(f"{self.label}: missing parameters {sorted(missing)}")
        for k, v in self.params.items():
            if not (math.isfinite(v) and v > 0):
                raise InvalidSpec(f"{self.label}: {k} must be > 0, got {v}")
        for k in ("sweep", "branch_angle", "screen_angle", "saddle_arc"):
            if k in self.params and not 0 < self.params[k] <= 180:
                raise InvalidSpec(f"{self.label}: {k} must be in (0, 180]")
        p = self.params
        if self.label.startswith("Elbow") and p["tube_radius"] >= p["bend_radius"]:
            raise InvalidSpec("tube_radius must be smaller than bend_radius")


def component_patches(spec: ComponentSpec) -> List[Patch]:
    """Build the surface patches of a component in its local frame.

    Straight components run along +x; bends lie in the xy-plane.
    """
    spec.validate()
    p = spec.params
    lab = spec.label
    x = np.array([1.0, 0.0, 0.0])
    y = np.array([0.0, 1.0, 0.0])
    z = np.array([0.0, 0.0, 1.0])

    if lab == "Pipe":
        return [tube(p["radius"], p["length"], -0.5 * p["length"] * x, x)]
    if lab in ("Elbow 90", "Elbow non 90"):
        return [bend(p["bend_radius"], p["tube_radius"], p["sweep"])]
    if lab in ("Flange", "Flange WN"):
        t = p["disk_thickness"]
        parts = _disk(p["pipe_radius"], p["disk_radius"], t, (0, 0, 0), x)
        # Slip-on flanges get a short straight hub; weld necks taper down to the pipe.
        if lab == "Flange":
            parts.append(tube(p["hub_radius"], p["hub_length"], t * x, x))
            parts.append(annulus(p["pipe_radius"], p["hub_radius"], (t + p["hub_length"]) * x, x))
        else:
            parts.append(frustum(p["hub_radius"], p["pipe_radius"], p["hub_length"], t * x, x))
        parts.append(tube(p["pipe_radius"], t, (0, 0, 0), x))
        return parts
    if lab == "Blind Flange":
        return _disk(0.0, p["disk_radius"], p["thickness"], (0, 0, 0), x)
    if lab in ("Tee", "Tee RED"):
        L = p["main_length"]
        return [
            tube(p["main_radius"], L, -0.5 * L * x, x),
            tube(p["branch_radius"], p["branch_length"], p["main_radius"] * 0.9 * y, y),
        ]
    if lab == "Cross":
        r, arm = p["radius"], p["arm_length"]
        return [
            tube(r, 2 * arm, -arm * x, x),
            tube(r, arm - r, r * y, y),
            tube(r, arm - r, -r * y, -y),
        ]
    if lab == "Wye":
        r, L = p["radius"], p["main_length"]
        ang = math.radians(p["branch_angle"])
        d = np.array([math.cos(ang), math.sin(ang), 0.0])
        return [tube(r, L, -0.5 * L * x, x), tube(r, p["branch_length"], r * y, d)]
    if lab == "Reducer CONC":
        return [frustum(p["radius_large"], p["radius_small"], p["length"], -0.5 * p["length"] * x, x)]
    if lab == "Reducer ECC":
        off = p["radius_large"] - p["radius_small"]
        return [frustum(p["radius_large"], p["radius_small"], p["length"], -0.5 * p["length"] * x, x, offset=off)]
    if lab == "Reducer Insert":
        rl, rs = p["radius_large"], p["radius_small"]
        return [
            tube(rl, p["length"], (0, 0, 0), x),
            annulus(rs, rl, p["length"] * x, x),
            tube(rs, p["insert_length"], p["length"] * x, x),
        ]
    if lab == "Valve":
        half = 0.5 * p["face_length"]
        rp, rf = p["pipe_radius"], p["flange_radius"]
        t = 0.04
        parts = _disk(rp, rf, t, -half * x, x) + _disk(rp, rf, t, (half - t) * x, x)
        parts.append(tube(rp * 1.2, p["face_length"] - 2 * t, (-half + t) * x, x))
        parts.append(sphere(p["body_radius"]))
        parts.append(tube(0.03, p["stem_length"], 0.8 * p["body_radius"] * z, z))
        parts.append(torus_ring(p["wheel_radius"], 0.015, (p["body_radius"] + p["stem_length"]) * z, z))
        return parts
    if lab == "Strainer":
        L = p["main_length"]
        ang = math.radians(p["screen_angle"])
        d = np.array([math.cos(ang), 0.0, -math.sin(ang)])
        start = np.zeros(3)
        end = start + p["screen_length"] * d
        return [
            tube(p["pipe_radius"], L, -0.5 * L * x, x),
            tube(p["screen_radius"], p["screen_length"], start, d),
            annulus(0.0, p["screen_radius"] * 1.15, end, d),
        ]
    if lab == "Safety Valve":
        rb = p["body_radius"]
        return [
            _disk(p["inlet_radius"], p["inlet_radius"] * 2.2, 0.03, -(rb + 0.12) * z, z)[0],
            tube(p["inlet_radius"], 0.12, -(rb + 0.12) * z, z),
            sphere(rb),
            tube(p["outlet_radius"], p["outlet_length"], 0.6 * rb * x, x),
            frustum(0.8 * rb, 0.35 * rb, p["bonnet_length"], 0.7 * rb * z, z),
            tube(0.02, 0.1, (0.7 * rb + p["bonnet_length"]) * z, z),
        ]
    if lab == "Olet":
        arc = p["saddle_arc"] / 360.0
        R = p["header_radius"]
        return [
            tube(R, p["saddle_length"], -0.5 * p["saddle_length"] * x, x, arc=arc, arc_start=0.25 - 0.5 * arc),
            frustum(p["branch_radius"] * 1.6, p["branch_radius"], 0.4 * p["branch_length"], R * z, z),
            tube(p["branch_radius"], 0.6 * p["branch_length"], (R + 0.4 * p["branch_length"]) * z, z),
        ]
    if lab == "Orifice Flange":
        t = p["disk_thickness"]
        gap = p["plate_thickness"]
        rp, rd = p["pipe_radius"], p["disk_radius"]
        parts = _disk(rp, rd, t, -(t + 0.5 * gap) * x, x) + _disk(rp, rd, t, 0.5 * gap * x, x)
        parts.append(tube(p["plate_radius"], gap, -0.5 * gap * x, x))
        parts.append(tube(rp, 0.1, (t + 0.5 * gap) * x, x))
        parts.append(tube(rp, 0.1, -(t + 0.5 * gap + 0.1) * x, -x))
        for sgn in (-1.0, 1.0):
            parts.append(tube(p["tap_radius"], p["tap_length"], sgn * 0.5 * t * x + rd * z, z))
        return parts
    raise InvalidSpec(f"no generator for label {lab!r}")


def surface_area(spec: ComponentSpec) -> float:
    return sum(patch.area() for patch in component_patches(spec))


def _sample_patch(patch: Patch, count: int, rng: np.random.Generator, stats=None) -> np.ndarray:
    if count == 0:
        return np.empty((0, 3))
    _, jmin, jmax = stats if stats is not None else patch.grid_stats()
    flat = jmax - jmin <= 1e-9 * jmax
    bound = jmax * 1.05 + 1e-12
    out, have = [], 0
    while have < count:
        m = max(2 * (count - have), 64)
        u = rng.random(m)
        v = rng.random(m)
        w = rng.random(m)
        if flat:
            keep = np.ones(m, dtype=bool)
        else:
            keep = w * bound <= patch.area_element(u, v)
        pts = patch(u[keep], v[keep])
        out.append(pts)
        have += len(pts)
    return np.concatenate(out)[:count]


def generate_component_surface(spec: ComponentSpec, density: float, seed: int) -> PointCloud:
    """Sample ``round(density * area)`` points uniformly over each patch.

    Rejection sampling in parameter space with the analytic surface map keeps
    every point exactly on the surface.
    """
    if not density > 0:
        raise InvalidSpec("density must be positive")
    patches = component_patches(spec)
    rng = np.random.default_rng(seed)
    chunks = []
    for patch in patches:
        stats = patch.grid_stats()
        count = int(math.floor(density * stats[0] + 0.5))
        chunks.append(_sample_patch(patch, count, rng, stats))
    pts = np.concatenate(chunks) if chunks else np.empty((0, 3))
    if len(pts) == 0:
        raise InvalidSpec("density too low: the surface received no points")
    return PointCloud(pts, label=spec.label)


class EmptyScan(PlantFitError):
    """Every point was thinned or occluded away."""


# -- scanning -----------------------------------------------------------------


@dataclass(frozen=True)
class ScanConfig:
    """Scanner placement and acquisition effects.

    ``reference_density`` is the areal density (points/m^2) the scanner
    achieves at 1 m; a surface generated at that density is thinned with
    retention probability ``min(1, (1 m / distance)^2)``.
    """

    scanner_position: tuple = (3.0, 0.0, 0.0)
    reference_density: float = 40000.0
    occlusion: bool = True
    noise_sigma: float = 0.0
    seed: int = 0
    bin_deg: float = 0.25
    density_falloff: bool = True

    def __post_init__(self):
        if not self.reference_density > 0:
            raise ValueError("reference_density must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not self.bin_deg > 0:
            raise ValueError("bin_deg must be positive")


def _angular_bins(rel: np.ndarray, bin_deg: float) -> np.ndarray:
    r = np.linalg.norm(rel, axis=1)
    az = np.degrees(np.arctan2(rel[:, 1], rel[:, 0])) + 180.0
    el = np.degrees(np.arcsin(np.clip(rel[:, 2] / r, -1.0, 1.0))) + 90.0
    n_az = int(math.ceil(360.0 / bin_deg)) + 1
    ia = np.floor(az / bin_deg).astype(np.int64)
    ie = np.floor(el / bin_deg).astype(np.int64)
    return ie * n_az + ia


def visible_mask(points: np.ndarray, scanner, bin_deg: float = 0.25) -> np.ndarray:
    """Spherical depth buffer: keep the nearest point of each angular bin."""
    rel = points - np.asarray(scanner, dtype=np.float64)
    dist = np.linalg.norm(rel, axis=1)
    bins = _angular_bins(rel, bin_deg)
    # Sort by (bin, distance, index) so the survivor does not depend on input order ties.
    order = np.lexsort((np.arange(len(points)), dist, bins))
    first = np.ones(len(order), dtype=bool)
    first[1:] = bins[order][1:] != bins[order][:-1]
    mask = np.zeros(len(points), dtype=bool)
    mask[order[first]] = True
    return mask


def simulate_scan(surface: PointCloud, cfg: ScanConfig, occluders: Optional[PointCloud] = None) -> PointCloud:
    """Turn an ideal surface sample into what a scanner at ``cfg.scanner_position`` sees.

    Steps, each driven by the same seeded stream so toggling one effect does
    not reshuffle the others: distance-based retention, occlusion against the
    retained points (plus optional foreign ``occluders``), Gaussian noise.
    """
    pts = surface.points
    scanner = np.asarray(cfg.scanner_position, dtype=np.float64)
    center = pts.mean(axis=0)
    bound = np.linalg.norm(pts - center, axis=1).max()
    if np.linalg.norm(scanner - center) <= bound:
        raise ScannerInsideObject("scanner lies inside the object's bounding sphere")

    rng = np.random.default_rng(cfg.seed)
    dist = np.linalg.norm(pts - scanner, axis=1)
    draws = rng.random(len(pts))
    noise = rng.standard_normal((len(pts), 3))

    if cfg.density_falloff:
        keep = draws < np.minimum(1.0, (1.0 / dist) ** 2)
    else:
        keep = np.ones(len(pts), dtype=bool)

    if cfg.occlusion:
        idx = np.flatnonzero(keep)
        cand = pts[idx]
        if occluders is not None:
            cand = np.concatenate([cand, occluders.points])
        vis = visible_mask(cand, scanner, cfg.bin_deg)
        keep = np.zeros(len(pts), dtype=bool)
        keep[idx[vis[: len(idx)]]] = True

    out = pts[keep]
    if cfg.noise_sigma > 0:
        out = out + cfg.noise_sigma * noise[keep]
    if len(out) == 0:
        raise EmptyScan(f"no points of {surface.id or surface.label!r} survived the scan")
    return PointCloud(out, id=surface.id, label=surface.label)


def random_rotation(rng: np.random.Generator, mode: str = "full") -> np.ndarray:
    """Random rotation matrix: ``none``, ``yaw`` (about +z) or ``full`` (uniform SO(3))."""
    if mode == "none":
        return np.eye(3)
    if mode == "yaw":
        a = rng.uniform(0.0, TWO_PI)
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    if mode == "full":
        q = rng.standard_normal(4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
    raise ValueError(f"unknown rotation mode {mode!r}")


# -- corpus -------------------------------------------------------------------

_ANGLE_KEYS = ("sweep", "branch_angle", "screen_angle", "saddle_arc")


@dataclass(frozen=True)
class CorpusConfig:
    """Everything that determines a synthetic corpus, byte for byte."""

    counts: Dict[str, int] = field(default_factory=dict)
    jitter: tuple = (0.85, 1.15)
    distance_range: tuple = (2.0, 4.0)
    elevation_range: tuple = (-20.0, 50.0)
    rotation: str = "full"
    reference_density: float = 40000.0
    occlusion: bool = True
    density_falloff: bool = True
    noise_sigma: float = 0.003
    outlier_fraction: float = 0.0
    min_points: int = 64
    seed: int = 0

    def __post_init__(self):
        for lab, n in self.counts.items():
            if lab not in DEFAULT_DIMENSIONS:
                raise InvalidSpec(f"no generator for label {lab!r}")
            if int(n) != n or n < 0:
                raise ValueError(f"count for {lab!r} must be a non-negative integer")
        lo, hi = self.jitter
        if not 0 < lo <= hi:
            raise ValueError("jitter range must satisfy 0 < lo <= hi")
        dlo, dhi = self.distance_range
        if not 0 < dlo <= dhi:
            raise ValueError("distance range must satisfy 0 < lo <= hi")
        elo, ehi = self.elevation_range
        if not -90 <= elo <= ehi <= 90:
            raise ValueError("elevation range must lie in [-90, 90]")
        if self.rotation not in ("none", "yaw", "full"):
            raise ValueError("rotation must be none, yaw or full")
        if not 0 <= self.outlier_fraction < 1:
            raise ValueError("outlier_fraction must be in [0, 1)")

    def labels(self) -> tuple:
        """Labels with a count entry, in canonical taxonomy order."""
        return tuple(lab for lab in DEFAULT_LABELS if lab in self.counts)

    def digest(self) -> str:
        return hashlib.sha256(_config_text(self).encode("utf-8")).hexdigest()[:16]


def jittered_spec(label: str, rng: np.random.Generator, jitter=(0.85, 1.15)) -> ComponentSpec:
    lo, hi = jitter
    params = {}
    for k, v in DEFAULT_DIMENSIONS[label].items():
        val = v * rng.uniform(lo, hi)
        if k in _ANGLE_KEYS:
            val = min(val, 180.0)
        params[k] = val
    if label == "Elbow 90":
        params["sweep"] = 90.0
    return ComponentSpec(label, params)


def _add_outliers(points, fraction, rng):
    n_out = int(round(fraction * len(points)))
    if n_out == 0:
        return points
    center = points.mean(axis=0)
    bound = np.linalg.norm(points - center, axis=1).max()
    d = rng.standard_normal((n_out, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.uniform(bound, 2.0 * bound, size=n_out)
    return np.concatenate([points, center + d * r[:, None]])


def scan_component(spec: ComponentSpec, cfg: CorpusConfig, rng: np.random.Generator, sample_id: str = "") -> PointCloud:
    """Generate, pose, and scan one component with draws from ``rng``."""
    surface = generate_component_surface(spec, cfg.reference_density, int(rng.integers(2**63)))
    rot = random_rotation(rng, cfg.rotation)
    pts = surface.points @ rot.T
    pts = pts - pts.mean(axis=0)
    dist = rng.uniform(*cfg.distance_range)
    bound = np.linalg.norm(pts, axis=1).max()
    dist = max(dist, 1.5 * bound)
    az = rng.uniform(0.0, TWO_PI)
    el = math.radians(rng.uniform(*cfg.elevation_range))
    scanner = dist * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    scan_cfg = ScanConfig(
        scanner_position=tuple(scanner),
        reference_density=cfg.reference_density,
        occlusion=cfg.occlusion,
        density_falloff=cfg.density_falloff,
        noise_sigma=cfg.noise_sigma,
        seed=int(rng.integers(2**63)),
    )
    scanned = simulate_scan(PointCloud(pts, id=sample_id, label=spec.label), scan_cfg)
    out = scanned.points
    if cfg.outlier_fraction > 0:
        out = _add_outliers(out, cfg.outlier_fraction, rng)
    return PointCloud(out, id=sample_id, label=spec.label)


def _slug(label: str) -> str:
    return label.lower().replace(" ", "_")


def _sample_rng(seed: int, index: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index, attempt]))


def _make_sample(cfg: CorpusConfig, label: str, index: int, sample_id: str) -> PointCloud:
    for attempt in range(100):
        rng = _sample_rng(cfg.seed, index, attempt)
        spec = jittered_spec(label, rng, cfg.jitter)
        try:
            cloud = scan_component(spec, cfg, rng, sample_id)
        except EmptyScan:
            continue
        if len(cloud) >= cfg.min_points and np.ptp(cloud.points, axis=0).max() > 0:
            return cloud
    raise EmptyScan(f"could not produce {cfg.min_points} points for {sample_id}")


def _sample_job(args):
    cfg, label, index, sample_id, path, header = args
    cloud = _make_sample(cfg, label, index, sample_id)
    write_point_cloud(cloud, path, header=header)
    return len(cloud)


def build_synthetic_corpus(cfg: CorpusConfig, out_dir, workers: int = 1) -> Manifest:
    """Write one cloud file per sample plus ``manifest.csv`` into ``out_dir``.

    Each sample draws from its own stream seeded by ``(cfg.seed, index)``,
    so the output does not depend on ``workers``.
    """
    out_dir = Path(out_dir)
    cloud_dir = out_dir / "clouds"
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = cfg.labels() or DEFAULT_LABELS
    taxonomy = Taxonomy(labels)
    header = f"seed={cfg.seed} config={cfg.digest()}"

    jobs, samples = [], []
    index = 0
    for c, label in enumerate(labels):
        for i in range(int(cfg.counts.get(label, 0))):
            sid = f"{_slug(label)}_{i:05d}"
            rel = f"clouds/{sid}.xyz"
            jobs.append((cfg, label, index, sid, out_dir / rel, header))
            samples.append(Sample(sid, c, rel))
            index += 1
    if jobs:
        cloud_dir.mkdir(exist_ok=True)
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            list(pool.map(_sample_job, jobs, chunksize=8))
    else:
        for job in jobs:
            _sample_job(job)
    manifest = Manifest(taxonomy, tuple(samples))
    save_manifest(manifest, out_dir / "manifest.csv", header=header)
    return manifest


# -- config files ---------------------------------------------------------------


def _config_text(cfg: CorpusConfig) -> str:
    counts = "; ".join(f"{lab}: {cfg.counts[lab]}" for lab in cfg.labels())
    lines = [
        "[corpus]",
        f"counts = {counts}",
        f"jitter = {cfg.jitter[0]!r}, {cfg.jitter[1]!r}",
        f"distance_range = {cfg.distance_range[0]!r}, {cfg.distance_range[1]!r}",
        f"elevation_range = {cfg.elevation_range[0]!r}, {cfg.elevation_range[1]!r}",
        f"rotation = {cfg.rotation}",
        f"reference_density = {cfg.reference_density!r}",
        f"occlusion = {str(cfg.occlusion).lower()}",
        f"density_falloff = {str(cfg.density_falloff).lower()}",
        f"noise_sigma = {cfg.noise_sigma!r}",
        f"outlier_fraction = {cfg.outlier_fraction!r}",
        f"min_points = {cfg.min_points}",
        f"seed = {cfg.seed}",
    ]
    return "\n".join(lines) + "\n"


def save_corpus_config(cfg: CorpusConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(_config_text(cfg))


def _pair(text):
    a, b = (float(x) for x in text.split(","))
    return (a, b)


def parse_counts(text: str) -> Dict[str, int]:
    counts = {}
    for item in text.split(";"):
        if not item.strip():
            continue
        lab, _, n = item.rpartition(":")
        counts[lab.strip()] = int(n)
    return counts


def corpus_config_from_mapping(section, **overrides) -> CorpusConfig:
    """Build a ``CorpusConfig`` from string key/values (an INI section)."""
    kw = {}
    conv = {
        "counts": parse_counts,
        "jitter": _pair,
        "distance_range": _pair,
        "elevation_range": _pair,
        "rotation": str,
        "reference_density": float,
        "occlusion": lambda s: str(s).strip().lower() in ("1", "true", "yes", "on"),
        "density_falloff": lambda s: str(s).strip().lower() in ("1", "true", "yes", "on"),
        "noise_sigma": float,
        "outlier_fraction": float,
        "min_points": int,
        "seed": int,
    }
    for key, value in section.items():
        if key not in conv:
            raise KeyError(f"unknown corpus key {key!r}")
        kw[key] = conv[key](value)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return CorpusConfig(**kw)


def load_corpus_config(path, **overrides) -> CorpusConfig:
    parser = configparser.ConfigParser(interpolation=None)
    with open(path, encoding="utf-8") as f:
        parser.read_file(f)
    section = parser["corpus"] if parser.has_section("corpus") else {}
    return corpus_config_from_mapping(dict(section), **overrides)
