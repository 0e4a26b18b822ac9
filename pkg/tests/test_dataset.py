import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from plantfit.dataset import (
    DEFAULT_LABELS,
    SMALL_CLASSES,
    Manifest,
    Sample,
    SmallClassWarning,
    SplitConfig,
    Taxonomy,
    load_manifest,
    read_point_cloud,
    save_manifest,
    stratified_split,
    write_point_cloud,
)
from plantfit.errors import EmptyClass, ParseError, UnknownLabel
from plantfit.geometry import PointCloud


def _manifest(counts, labels=None):
    tax = Taxonomy(labels or tuple(f"c{i}" for i in range(len(counts))))
    samples = [Sample(f"{c}_{i}", c, f"clouds/{c}_{i}.xyz") for c, n in enumerate(counts) for i in range(n)]
    return Manifest(tax, samples)


def test_default_taxonomy_has_eighteen_types():
    assert len(DEFAULT_LABELS) == 18
    assert DEFAULT_LABELS[0] == "Blind Flange" and DEFAULT_LABELS[-1] == "Wye"
    assert set(SMALL_CLASSES) <= set(DEFAULT_LABELS) and len(SMALL_CLASSES) == 9


def test_taxonomy_rejects_duplicates_and_commas():
    with pytest.raises(ValueError):
        Taxonomy(("a", "a"))
    with pytest.raises(ValueError):
        Taxonomy(("a,b",))
    with pytest.raises(UnknownLabel):
        Taxonomy().index("Gasket")


def test_parse_simple_file(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("0 0 0\n1 2 3\n")
    c = read_point_cloud(p)
    assert c.points.shape == (2, 3) and c.id == "a"
    np.testing.assert_array_equal(c.points[1], [1, 2, 3])


def test_parse_error_reports_line(tmp_path):
    p = tmp_path / "bad.xyz"
    p.write_text("a b c\n")
    with pytest.raises(ParseError) as e:
        read_point_cloud(p)
    assert e.value.line == 1
    p.write_text("# header\n0 0 0\n1 2\n")
    with pytest.raises(ParseError) as e:
        read_point_cloud(p)
    assert e.value.line == 3


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        read_point_cloud(tmp_path / "none.xyz")


def test_round_trip_nine_digits(tmp_path, rng):
    pts = rng.uniform(-1, 1, size=(1000, 3))
    write_point_cloud(PointCloud(pts), tmp_path / "c.xyz", header="seed=1")
    back = read_point_cloud(tmp_path / "c.xyz")
    assert np.abs(back.points - pts).max() < 1e-8
    text = (tmp_path / "c.xyz").read_bytes()
    assert text.startswith(b"# seed=1\n") and b"\r" not in text


def test_write_is_byte_stable(tmp_path, rng):
    c = PointCloud(rng.normal(size=(50, 3)))
    write_point_cloud(c, tmp_path / "a.xyz")
    write_point_cloud(read_point_cloud(tmp_path / "a.xyz"), tmp_path / "b.xyz")
    assert (tmp_path / "a.xyz").read_bytes() == (tmp_path / "b.xyz").read_bytes()


def test_manifest_round_trip_and_counts(tmp_path):
    m = _manifest([0] * 17 + [6], DEFAULT_LABELS)
    save_manifest(m, tmp_path / "manifest.csv", header="seed=0")
    back = load_manifest(tmp_path / "manifest.csv")
    assert back == m
    assert back.count("Wye") == 6
    assert sum(back.counts) == 6


def test_empty_manifest_counts_zero(tmp_path):
    m = Manifest(Taxonomy(), ())
    save_manifest(m, tmp_path / "manifest.csv")
    back = load_manifest(tmp_path / "manifest.csv")
    assert back.counts == (0,) * 18


def test_unknown_label_in_manifest(tmp_path):
    (tmp_path / "manifest.csv").write_text("id,label,path\ng1,Gasket,clouds/g1.xyz\n")
    with pytest.raises(UnknownLabel):
        load_manifest(tmp_path / "manifest.csv")


def test_counts_must_match_tally():
    with pytest.raises(ValueError):
        Manifest(Taxonomy(("a",)), (Sample("x", 0, "x"),), counts=(2,))


def test_split_ten_gives_eight_two():
    train, val = stratified_split(_manifest([10]), SplitConfig(0.8, seed=1))
    assert train.counts == (8,) and val.counts == (2,)


def test_single_sample_class_goes_to_train():
    with pytest.warns(SmallClassWarning):
        train, val = stratified_split(_manifest([1, 5]), SplitConfig())
    assert train.counts[0] == 1 and val.counts[0] == 0
    assert "no-validation:c0" in val.flags


def test_empty_class_rejected():
    with pytest.raises(EmptyClass):
        stratified_split(_manifest([3, 0]))


def test_eighteen_class_tally(rng):
    counts = rng.integers(2, 200, size=18)
    m = _manifest(list(counts), DEFAULT_LABELS)
    train, val = stratified_split(m)
    assert tuple(a + b for a, b in zip(train.counts, val.counts)) == m.counts


@given(st.lists(st.integers(1, 30), min_size=1, max_size=6), st.integers(0, 10**6), st.floats(0.05, 0.95))
def test_split_partition_and_stratification(counts, seed, frac):
    m = _manifest(counts)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmallClassWarning)
        train, val = stratified_split(m, SplitConfig(frac, seed))
        again = stratified_split(m, SplitConfig(frac, seed))
    ids_t = {s.id for s in train.samples}
    ids_v = {s.id for s in val.samples}
    assert not ids_t & ids_v
    assert ids_t | ids_v == {s.id for s in m.samples}
    assert again[0] == train
    for n, k in zip(counts, train.counts):
        if n >= 2:
            assert 1 <= k <= n - 1
            assert abs(k / n - frac) <= 1 / n + 1e-12
