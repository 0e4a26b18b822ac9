import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plantfit.dataset import load_manifest, read_point_cloud, resolve_sample_path
from plantfit.errors import InvalidSpec, ScannerInsideObject
from plantfit.geometry import PointCloud
from plantfit.synth import (
    DEFAULT_DIMENSIONS,
    ComponentSpec,
    CorpusConfig,
    ScanConfig,
    build_synthetic_corpus,
    generate_component_surface,
    load_corpus_config,
    save_corpus_config,
    simulate_scan,
    surface_area,
)


def plate(x, half, n, rng=None, spacing=None):
    """Square plate in the plane ``X = x`` facing a scanner on the -x side."""
    if spacing is not None:
        g = np.arange(-half, half + 1e-12, spacing)
        yy, zz = np.meshgrid(g, g)
        yz = np.stack([yy.ravel(), zz.ravel()], axis=1)
    else:
        yz = rng.uniform(-half, half, size=(n, 2))
    return np.column_stack([np.full(len(yz), x), yz])


def test_pipe_count_and_radius():
    spec = ComponentSpec("Pipe", {"radius": 0.1, "length": 1.0})
    cloud = generate_component_surface(spec, 10_000, seed=0)
    assert len(cloud.points) == round(10_000 * 2 * math.pi * 0.1 * 1.0) == 6283
    r = np.hypot(cloud.points[:, 1], cloud.points[:, 2])
    assert np.abs(r - 0.1).max() < 1e-9
    assert surface_area(spec) == pytest.approx(2 * math.pi * 0.1, rel=1e-9)


def test_elbow_ninety_stays_in_quadrant():
    cloud = generate_component_surface(ComponentSpec.default("Elbow 90"), 20_000, seed=1)
    ang = np.degrees(np.arctan2(cloud.points[:, 1], cloud.points[:, 0]))
    assert ang.min() >= -1e-9 and ang.max() <= 90 + 1e-9


def test_blind_flange_within_disk_radius():
    spec = ComponentSpec.default("Blind Flange")
    cloud = generate_component_surface(spec, 20_000, seed=2)
    r = np.hypot(cloud.points[:, 1], cloud.points[:, 2])
    assert r.max() <= spec.params["disk_radius"] + 1e-9


def test_bend_points_on_torus():
    spec = ComponentSpec.default("Elbow non 90")
    p = spec.params
    pts = generate_component_surface(spec, 20_000, seed=3).points
    ring = np.hypot(pts[:, 0], pts[:, 1]) - p["bend_radius"]
    np.testing.assert_allclose(np.hypot(ring, pts[:, 2]), p["tube_radius"], atol=1e-9)


def test_surface_deterministic_per_seed():
    spec = ComponentSpec.default("Tee")
    a = generate_component_surface(spec, 5000, seed=4)
    b = generate_component_surface(spec, 5000, seed=4)
    c = generate_component_surface(spec, 5000, seed=5)
    assert a == b and a != c


@pytest.mark.parametrize("label", sorted(DEFAULT_DIMENSIONS))
def test_every_class_generates(label):
    cloud = generate_component_surface(ComponentSpec.default(label), 3000, seed=0)
    assert len(cloud.points) > 50 and np.isfinite(cloud.points).all()


def test_invalid_specs():
    with pytest.raises(InvalidSpec):
        ComponentSpec("Gasket", {}).validate()
    with pytest.raises(InvalidSpec):
        generate_component_surface(ComponentSpec("Pipe", {"radius": -1, "length": 1}), 100, 0)
    with pytest.raises(InvalidSpec):
        generate_component_surface(ComponentSpec("Elbow 90", {"bend_radius": 1, "tube_radius": 0.1, "sweep": 200}), 100, 0)
    with pytest.raises(InvalidSpec):
        generate_component_surface(ComponentSpec("Pipe", {"radius": 0.1}), 100, 0)


def test_flange_wn_extends_flange():
    flange = generate_component_surface(ComponentSpec.default("Flange"), 20_000, 0).points
    wn = generate_component_surface(ComponentSpec.default("Flange WN"), 20_000, 0).points
    assert np.ptp(wn[:, 0]) > 1.5 * np.ptp(flange[:, 0])


def _bin_oracle(points, scanner, bin_deg):
    rel = points - scanner
    out = []
    for p in rel:
        r = math.sqrt(float(p @ p))
        az = math.degrees(math.atan2(p[1], p[0])) + 180.0
        el = math.degrees(math.asin(max(-1.0, min(1.0, p[2] / r)))) + 90.0
        out.append((math.floor(el / bin_deg), math.floor(az / bin_deg)))
    return out


def test_near_plate_hides_far_plate():
    near = plate(2.0, 0.5, 0, spacing=0.004)
    far = plate(3.0, 0.3, 0, spacing=0.01)
    pts = np.concatenate([near, far])
    cfg = ScanConfig(scanner_position=(0.0, 0.0, 0.0), occlusion=True, density_falloff=False, seed=0)
    out = simulate_scan(PointCloud(pts), cfg)
    assert np.all(out.points[:, 0] < 2.5)
    # Ray-cast oracle: a far point is hidden when a near point shares its bin.
    near_bins = set(_bin_oracle(near, np.zeros(3), 0.25))
    far_bins = _bin_oracle(far, np.zeros(3), 0.25)
    assert all(b in near_bins for b in far_bins)
    assert len(out.points) == len(near_bins)


def test_identity_configuration():
    rng = np.random.default_rng(0)
    pts = plate(0.9, 0.1, 500, rng)
    cfg = ScanConfig(scanner_position=(0.0, 0.0, 0.0), occlusion=False, noise_sigma=0.0, seed=3)
    out = simulate_scan(PointCloud(pts), cfg)
    assert np.array_equal(out.points, pts)


def test_inverse_square_ratio():
    rng = np.random.default_rng(1)
    pts = plate(0.0, 0.05, 20_000, rng)
    near, far = [], []
    for seed in range(50):
        base = dict(occlusion=False, density_falloff=True, seed=seed)
        near.append(len(simulate_scan(PointCloud(pts), ScanConfig(scanner_position=(-1.0, 0, 0), **base)).points))
        far.append(len(simulate_scan(PointCloud(pts), ScanConfig(scanner_position=(-2.0, 0, 0), **base)).points))
    ratio = np.mean(near) / np.mean(far)
    assert abs(ratio - 4.0) / 4.0 < 0.10


def test_scanner_inside_object():
    pts = plate(0.0, 1.0, 100, np.random.default_rng(0))
    with pytest.raises(ScannerInsideObject):
        simulate_scan(PointCloud(pts), ScanConfig(scanner_position=(0.1, 0, 0)))


def test_noise_is_isotropic_gaussian():
    pts = plate(0.9, 0.1, 20_000, np.random.default_rng(0))
    cfg = ScanConfig(scanner_position=(0.0, 0.0, 0.0), occlusion=False, noise_sigma=0.01, seed=1)
    d = simulate_scan(PointCloud(pts), cfg).points - pts
    np.testing.assert_allclose(d.std(axis=0), 0.01, rtol=0.05)
    np.testing.assert_allclose(d.mean(axis=0), 0.0, atol=5e-4)


@given(st.integers(0, 10**6), st.floats(1.5, 4.0))
def test_occlusion_never_adds_points(seed, dist):
    pts = generate_component_surface(ComponentSpec.default("Tee"), 4000, seed % 7).points
    base = dict(scanner_position=(dist, 0.3, 0.2), seed=seed)
    on = simulate_scan(PointCloud(pts), ScanConfig(occlusion=True, **base))
    off = simulate_scan(PointCloud(pts), ScanConfig(occlusion=False, **base))
    assert len(on.points) <= len(off.points)
    off_rows = {tuple(p) for p in off.points}
    assert all(tuple(p) in off_rows for p in on.points)


@given(st.integers(0, 10**6), st.floats(1.0, 3.0), st.floats(1.0, 2.0))
def test_falloff_non_increasing_in_distance(seed, d, factor):
    pts = plate(0.0, 0.2, 3000, np.random.default_rng(seed % 11))
    direction = np.array([-1.0, 0.2, 0.1]) / np.linalg.norm([-1.0, 0.2, 0.1])
    counts = []
    for dist in (d, d * factor):
        cfg = ScanConfig(scanner_position=tuple(dist * direction), occlusion=False, seed=seed)
        counts.append(len(simulate_scan(PointCloud(pts), cfg).points))
    assert counts[1] <= counts[0]


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_corpus_counts_match_config(tmp_path):
    cfg = CorpusConfig(counts={"Elbow 90": 1156, "Wye": 6}, reference_density=1500, occlusion=False,
                       min_points=16, seed=0)
    m = build_synthetic_corpus(cfg, tmp_path)
    assert m.count("Elbow 90") == 1156 and m.count("Wye") == 6
    assert len(list((tmp_path / "clouds").glob("*.xyz"))) == 1162


def test_empty_corpus(tmp_path):
    m = build_synthetic_corpus(CorpusConfig(counts={}), tmp_path)
    assert len(m) == 0
    assert not (tmp_path / "clouds").exists()


def test_corpus_rerun_and_workers_identical(tmp_path):
    cfg = CorpusConfig(counts={"Pipe": 3, "Tee": 2, "Valve": 2}, seed=7)
    build_synthetic_corpus(cfg, tmp_path / "a")
    build_synthetic_corpus(cfg, tmp_path / "b")
    build_synthetic_corpus(cfg, tmp_path / "c", workers=2)
    a = _tree_bytes(tmp_path / "a")
    assert a == _tree_bytes(tmp_path / "b") == _tree_bytes(tmp_path / "c")
    m = load_manifest(tmp_path / "a" / "manifest.csv")
    for s in m.samples:
        cloud = read_point_cloud(resolve_sample_path(tmp_path / "a" / "manifest.csv", s))
        assert len(cloud.points) >= cfg.min_points
        assert s.id.startswith(m.taxonomy.labels[s.label].lower().replace(" ", "_"))


def test_corpus_config_round_trip(tmp_path):
    cfg = CorpusConfig(counts={"Pipe": 5, "Elbow 90": 2}, jitter=(0.9, 1.1), rotation="yaw", noise_sigma=0.001, seed=3)
    save_corpus_config(cfg, tmp_path / "c.cfg")
    back = load_corpus_config(tmp_path / "c.cfg")
    assert back == cfg and back.digest() == cfg.digest()
    assert load_corpus_config(tmp_path / "c.cfg", seed=9).seed == 9
