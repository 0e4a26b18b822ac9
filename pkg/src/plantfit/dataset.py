"""On-disk formats, label taxonomy, manifests and the stratified split.

Cloud files are plain text, one ``x y z`` point per line with ``#`` comment
lines allowed. A manifest is a CSV file with header ``id,label,path`` whose
paths are relative to the manifest's directory; the taxonomy lives next to it
in ``taxonomy.txt`` with one label per line.
"""

import csv
import io
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyClass, EmptyCloud, ParseError, UnknownLabel
from .geometry import PointCloud

__all__ = [
    "DEFAULT_LABELS",
    "SMALL_CLASSES",
    "Taxonomy",
    "Sample",
    "Manifest",
    "SplitConfig",
    "SmallClassWarning",
    "read_point_cloud",
    "write_point_cloud",
    "format_point_cloud",
    "load_taxonomy",
    "save_taxonomy",
    "load_manifest",
    "save_manifest",
    "stratified_split",
]

DEFAULT_LABELS = (
    "Blind Flange",
    "Cross",
    "Elbow 90",
    "Elbow non 90",
    "Flange",
    "Flange WN",
    "Olet",
    "Orifice Flange",
    "Pipe",
    "Reducer CONC",
    "Reducer ECC",
    "Reducer Insert",
    "Safety Valve",
    "Strainer",
    "Tee",
    "Tee RED",
    "Valve",
    "Wye",
)

# The nine types with fewer than 60 training clouds in the plant repository.
SMALL_CLASSES = (
    "Cross",
    "Olet",
    "Orifice Flange",
    "Pipe",
    "Reducer ECC",
    "Reducer Insert",
    "Safety Valve",
    "Strainer",
    "Wye",
)

MANIFEST_HEADER = ("id", "label", "path")
TAXONOMY_FILENAME = "taxonomy.txt"


class SmallClassWarning(UserWarning):
    """A class too small to be represented on both sides of a split."""


@dataclass(frozen=True)
class Taxonomy:
    labels: tuple = DEFAULT_LABELS

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if not labels:
            raise ValueError("taxonomy must not be empty")
        if len(set(labels)) != len(labels):
            raise ValueError("taxonomy labels must be unique")
        for lab in labels:
            if not lab or "," in lab or "\n" in lab:
                raise ValueError(f"invalid label {lab!r}")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabel(f"label {label!r} is not in the taxonomy") from None

    def subset(self, labels: Sequence[str]) -> "Taxonomy":
        for lab in labels:
            self.index(lab)
        return Taxonomy(tuple(labels))


@dataclass(frozen=True)
class Sample:
    id: str
    label: int
    path: str


@dataclass(frozen=True)
class Manifest:
    taxonomy: Taxonomy
    samples: tuple = ()
    flags: tuple = ()
    counts: tuple = field(default=None)

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        n = len(self.taxonomy)
        tally = [0] * n
        for s in samples:
            if not 0 <= s.label < n:
                raise UnknownLabel(f"sample {s.id!r} has label index {s.label}")
            tally[s.label] += 1
        if self.counts is not None and tuple(self.counts) != tuple(tally):
            raise ValueError("per-class counts do not match the sample labels")
        object.__setattr__(self, "counts", tuple(tally))

    def __len__(self):
        return len(self.samples)

    def count(self, label: str) -> int:
        return self.counts[self.taxonomy.index(label)]

    def count_map(self) -> dict:
        return dict(zip(self.taxonomy.labels, self.counts))

    def label_name(self, sample: Sample) -> str:
        return self.taxonomy.labels[sample.label]


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


# -- point cloud text files ---------------------------------------------------


def format_point_cloud(cloud: PointCloud, header: Optional[str] = None) -> str:
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    for x, y, z in cloud.points:
        buf.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
    return buf.getvalue()


def write_point_cloud(cloud: PointCloud, path, header: Optional[str] = None) -> None:
    """Write ``cloud`` as text with 9 significant digits per coordinate."""
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(format_point_cloud(cloud, header))


def read_point_cloud(path, id: Optional[str] = None, label: Optional[str] = None) -> PointCloud:
    path = Path(path)
    rows = []
    with open(path, "r", encoding="ascii", newline="") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(f"expected 3 values, got {len(parts)}", lineno, path)
            try:
                xyz = [float(p) for p in parts]
            except ValueError:
                raise ParseError(f"malformed number in {line!r}", lineno, path) from None
            if not all(math.isfinite(v) for v in xyz):
                raise ParseError("non-finite coordinate", lineno, path)
            rows.append(xyz)
    if not rows:
        raise EmptyCloud(f"{path}: no points")
    return PointCloud(np.array(rows), id=id if id is not None else path.stem, label=label)


# -- taxonomy and manifest ------------------------------------------------------


def load_taxonomy(path) -> Taxonomy:
    with open(path, "r", encoding="utf-8") as f:
        labels = [ln.strip() for ln in f if ln.strip() and not ln.startswith("#")]
    return Taxonomy(tuple(labels))


def save_taxonomy(taxonomy: Taxonomy, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(f"{lab}\n" for lab in taxonomy.labels))


def load_manifest(path, taxonomy: Optional[Taxonomy] = None) -> Manifest:
    """Load a manifest CSV.

    The taxonomy is taken from the argument, else from ``taxonomy.txt`` beside
    the manifest, else the default 18 fitting types.
    """
    path = Path(path)
    if taxonomy is None:
        tax_path = path.parent / TAXONOMY_FILENAME
        taxonomy = load_taxonomy(tax_path) if tax_path.exists() else Taxonomy()
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
        raise ParseError(f"manifest header must be {','.join(MANIFEST_HEADER)}", 1, path)
    samples = []
    for i, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", i, path)
        sid, label, rel = row
        samples.append(Sample(sid, taxonomy.index(label), rel))
    return Manifest(taxonomy, tuple(samples))


def save_manifest(manifest: Manifest, path, header: Optional[str] = None) -> None:
    path = Path(path)
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    for s in manifest.samples:
        w.writerow((s.id, manifest.taxonomy.labels[s.label], s.path))
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(buf.getvalue())
    save_taxonomy(manifest.taxonomy, path.parent / TAXONOMY_FILENAME)


def resolve_sample_path(manifest_path, sample: Sample) -> Path:
    p = Path(sample.path)
    if p.is_absolute():
        return p
    return Path(os.path.dirname(os.fspath(manifest_path))) / p


# -- split --------------------------------------------------------------------


def _train_count(n: int, fraction: float) -> int:
    k = int(math.floor(fraction * n + 0.5))
    if n >= 2:
        k = min(max(k, 1), n - 1)
    else:
        k = n
    return k


def stratified_split(manifest: Manifest, cfg: SplitConfig = SplitConfig()):
    """Split each class into train/validation at ``cfg.train_fraction``.

    Every class must have at least one sample. A class of one sample goes
    wholly to train; the validation manifest then carries a flag naming it.
    Within each output the original sample order is preserved.
    """
    tax = manifest.taxonomy
    by_class = [[] for _ in tax.labels]
    for i, s in enumerate(manifest.samples):
        by_class[s.label].append(i)
    empty = [tax.labels[c] for c, idx in enumerate(by_class) if not idx]
    if empty:
        raise EmptyClass(f"classes without samples: {', '.join(empty)}")

    rng = np.random.default_rng(cfg.seed)
    train_idx, flags = set(), []
    for c, idx in enumerate(by_class):
        order = rng.permutation(len(idx))
        k = _train_count(len(idx), cfg.train_fraction)
        train_idx.update(idx[j] for j in order[:k])
        if len(idx) == 1:
            flags.append(f"no-validation:{tax.labels[c]}")
            warnings.warn(
                f"class {tax.labels[c]!r} has a single sample; validation gets none",
                SmallClassWarning,
                stacklevel=2,
            )
    train = [s for i, s in enumerate(manifest.samples) if i in train_idx]
    val = [s for i, s in enumerate(manifest.samples) if i not in train_idx]
    return Manifest(tax, tuple(train)), Manifest(tax, tuple(val), flags=tuple(flags))
