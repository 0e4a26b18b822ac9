"""End-to-end experiment wiring: corpus -> views -> inputs -> training -> reports.

The six experiment cases pair an input preparation with a network:

    MVCNN                         ring of 12 views         multi-view net
    RANSAC (Degree 10 / 40)       13 views around plane    multi-view net
    Acquisition rate (10 / 40)    13 views around best     multi-view net
    Sampled point cloud           2,048 sampled points     point-set net
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .dataset import (
    Manifest,
    SplitConfig,
    load_manifest,
    read_point_cloud,
    resolve_sample_path,
    stratified_split,
)
from .evaluation import (
    PredictionRecord,
    build_report,
    class_accuracy_table,
    confusion_csv,
    pr_curve_csv,
    summary_table,
)
from .geometry import downsample_points, normalize_unit_sphere
from .neural import TrainConfig, forward_mvcnn, forward_pointnet, train_model
from .render import RenderConfig, block_average, read_pgm, render_view_set, view_filename
from .views import (
    RansacConfig,
    acquisition_rate_views,
    ransac_views,
    ring_cameras,
)

log = logging.getLogger(__name__)

STRATEGIES = ("ring12", "ransac", "acqrate", "points")


@dataclass(frozen=True)
class ExperimentCase:
    name: str
    strategy: str
    degree: Optional[float] = None

    @property
    def network(self) -> str:
        return "PointNet" if self.strategy == "points" else "MVCNN"

    @property
    def slug(self) -> str:
        return self.strategy if self.degree is None else f"{self.strategy}{int(self.degree)}"


SIX_CASES = (
    ExperimentCase("MVCNN", "ring12"),
    ExperimentCase("RANSAC (Degree 10)", "ransac", 10.0),
    ExperimentCase("RANSAC (Degree 40)", "ransac", 40.0),
    ExperimentCase("Acquisition rate (Degree 10)", "acqrate", 10.0),
    ExperimentCase("Acquisition rate (Degree 40)", "acqrate", 40.0),
    ExperimentCase("Sampled point cloud", "points"),
)


@dataclass(frozen=True)
class PipelineConfig:
    corpus_dir: str = "corpus"
    render_dir: Optional[str] = None
    checkpoint: str = "model.ckpt"
    report_dir: str = "report"
    strategy: str = "acqrate"
    degree: float = 10.0
    resolution: int = 227
    image_side: int = 64
    n_points: int = 2048
    train_fraction: float = 0.8
    split_seed: int = 0
    sample_seed: int = 0
    ransac_threshold: float = 0.02
    ransac_iterations: int = 500
    mvcnn_train: TrainConfig = field(default_factory=lambda: TrainConfig(kind="mvcnn"))
    pointnet_train: TrainConfig = field(default_factory=lambda: TrainConfig(kind="pointnet"))
    mvcnn_arch: dict = field(default_factory=dict)
    pointnet_arch: dict = field(default_factory=dict)
    excluded_classes: Optional[tuple] = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.strategy in ("ransac", "acqrate") and not self.degree > 0:
            raise ValueError("neighborhood degree must be positive")

    @property
    def render_config(self) -> RenderConfig:
        return RenderConfig(self.resolution, self.resolution)

    @property
    def ransac_config(self) -> RansacConfig:
        return RansacConfig(self.ransac_threshold, self.ransac_iterations, self.sample_seed)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def header(self) -> str:
        return f"seed={self.split_seed}/{self.sample_seed} config={self.digest()}"


# -- corpus access --------------------------------------------------------------


def manifest_path(cfg: PipelineConfig) -> Path:
    return Path(cfg.corpus_dir) / "manifest.csv"


def load_corpus(cfg: PipelineConfig) -> Manifest:
    return load_manifest(manifest_path(cfg))


def load_clouds(manifest: Manifest, path) -> list:
    return [
        read_point_cloud(resolve_sample_path(path, s), id=s.id, label=manifest.taxonomy.labels[s.label])
        for s in manifest.samples
    ]


def split_corpus(manifest: Manifest, cfg: PipelineConfig):
    return stratified_split(manifest, SplitConfig(cfg.train_fraction, cfg.split_seed))


# -- per-cloud inputs ---------------------------------------------------------------


def poses_for(normalized_cloud, strategy: str, degree: float = 10.0,
              render_cfg: RenderConfig = RenderConfig(), ransac_cfg: RansacConfig = RansacConfig()):
    """Camera poses for one normalized cloud under a view strategy."""
    if strategy == "ring12":
        return ring_cameras()
    if strategy == "ransac":
        return ransac_views(normalized_cloud, degree, ransac_cfg, render_cfg)
    if strategy == "acqrate":
        return acquisition_rate_views(normalized_cloud, degree, render_cfg)
    raise ValueError(f"strategy {strategy!r} has no camera poses")


def render_cloud_views(cloud, strategy, degree, render_cfg, ransac_cfg):
    norm, _ = normalize_unit_sphere(cloud)
    poses = poses_for(norm, strategy, degree, render_cfg, ransac_cfg)
    return poses, render_view_set(norm, poses, render_cfg)


def multiview_inputs(clouds, strategy, degree, cfg: PipelineConfig, render_dir=None) -> np.ndarray:
    """Stack of block-averaged views, ``(N, k, side, side)`` float32.

    Views are read from ``render_dir`` when it holds them, else rendered.
    """
    out = []
    for cloud in clouds:
        images = None
        if render_dir is not None:
            images = _read_views(Path(render_dir), cloud.id)
        if images is None:
            _, images = render_cloud_views(cloud, strategy, degree, cfg.render_config, cfg.ransac_config)
        out.append(np.stack([block_average(im, cfg.image_side) for im in images]))
    return np.stack(out) if out else np.empty((0, 0, cfg.image_side, cfg.image_side), np.float32)


def _read_views(render_dir: Path, cloud_id: str):
    images, i = [], 0
    while (render_dir / view_filename(cloud_id, i)).exists():
        images.append(read_pgm(render_dir / view_filename(cloud_id, i)))
        i += 1
    return images or None


def pointset_inputs(clouds, n_points: int, seed: int) -> np.ndarray:
    """Normalized clouds downsampled to ``n_points``; ``(N, n_points, 3)`` float32."""
    out = []
    for i, cloud in enumerate(clouds):
        norm, _ = normalize_unit_sphere(cloud)
        sub = downsample_points(norm, n_points, int(np.random.SeedSequence([seed, i]).generate_state(1)[0]))
        out.append(sub.points.astype(np.float32))
    return np.stack(out) if out else np.empty((0, n_points, 3), np.float32)


def case_inputs(case: ExperimentCase, clouds, cfg: PipelineConfig, render_dir=None):
    if case.strategy == "points":
        return pointset_inputs(clouds, cfg.n_points, cfg.sample_seed)
    return multiview_inputs(clouds, case.strategy, case.degree or cfg.degree, cfg, render_dir)


# -- training and evaluation ----------------------------------------------------------


def labels_of(clouds, manifest: Manifest) -> np.ndarray:
    return np.array([manifest.taxonomy.index(c.label) for c in clouds], dtype=np.int64)


def train_case(case: ExperimentCase, train_x, train_y, val_x, val_y, num_classes, cfg: PipelineConfig):
    if case.strategy == "points":
        tc, arch = cfg.pointnet_train, cfg.pointnet_arch
    else:
        tc, arch = replace(cfg.mvcnn_train, image_side=cfg.image_side), cfg.mvcnn_arch
    return train_model((train_x, train_y), (val_x, val_y), tc, num_classes=num_classes, arch=arch)


def predict_records(model, inputs, labels, ids) -> List[PredictionRecord]:
    fwd = forward_pointnet if model.kind == "pointnet" else forward_mvcnn
    records = []
    for x, y, sid in zip(inputs, labels, ids):
        logits, emb = fwd(x, model)
        records.append(
            PredictionRecord(sid, int(y), int(np.argmax(logits)), logits.astype(np.float64), emb.astype(np.float64))
        )
    return records


def lower_half_classes(train_manifest: Manifest) -> tuple:
    """The half of the classes with the fewest training samples (ties: taxonomy order)."""
    labels = train_manifest.taxonomy.labels
    order = sorted(range(len(labels)), key=lambda c: (train_manifest.counts[c], c))
    return tuple(labels[c] for c in sorted(order[: len(labels) // 2]))


@dataclass
class CaseResult:
    case: ExperimentCase
    report: object
    excluded_report: object
    history: list
    model: object = None


def run_experiment_suite(cfg: PipelineConfig, cases: Sequence[ExperimentCase] = SIX_CASES,
                         out_dir=None) -> List[CaseResult]:
    """Train and evaluate every case and write the report files.

    Files written to ``out_dir`` (default ``cfg.report_dir``):
    ``table2.csv``, ``table3.csv`` (excluded classes dropped), ``table4.csv``,
    ``confusion_<case>.csv``, ``history_<case>.csv`` and
    ``pr/<case>_<class>.csv`` plus ``pr/<case>_all.csv`` for both variants.
    """
    out = Path(out_dir or cfg.report_dir)
    (out / "pr").mkdir(parents=True, exist_ok=True)
    manifest = load_corpus(cfg)
    train_m, val_m = split_corpus(manifest, cfg)
    labels = manifest.taxonomy.labels
    excluded = cfg.excluded_classes if cfg.excluded_classes is not None else lower_half_classes(train_m)
    path = manifest_path(cfg)
    train_clouds = load_clouds(train_m, path)
    val_clouds = load_clouds(val_m, path)
    train_y, val_y = labels_of(train_clouds, manifest), labels_of(val_clouds, manifest)
    header = cfg.header()

    results = []
    for case in cases:
        log.info("case %s", case.name)
        tx = case_inputs(case, train_clouds, cfg)
        vx = case_inputs(case, val_clouds, cfg)
        model, history = train_case(case, tx, train_y, vx, val_y, len(labels), cfg)
        records = predict_records(model, vx, val_y, [c.id for c in val_clouds])
        rep = build_report(records, labels)
        rep_x = build_report(records, labels, excluded_classes=excluded)
        results.append(CaseResult(case, rep, rep_x, history, model))
        write_case_files(out, case, rep, rep_x, history, header)

    rows = [(r.case.name, r.case.network, r.report) for r in results]
    rows_x = [(r.case.name, r.case.network, r.excluded_report) for r in results]
    (out / "table2.csv").write_text(summary_table(rows, header), encoding="utf-8")
    (out / "table3.csv").write_text(
        summary_table(rows_x, header + "\nexcluded=" + ";".join(excluded)), encoding="utf-8"
    )
    (out / "table4.csv").write_text(class_accuracy_table(rows, labels, header), encoding="utf-8")
    return results


def write_case_files(out: Path, case, rep, rep_x, history, header):
    (out / "pr").mkdir(parents=True, exist_ok=True)
    (out / f"confusion_{case.slug}.csv").write_text(confusion_csv(rep, header), encoding="utf-8")
    if history is not None:
        write_history(out / f"history_{case.slug}.csv", history, header)
    for suffix, report in (("", rep), ("_excl", rep_x)):
        for lab, curve in report.pr_curves.items():
            name = f"{case.slug}{suffix}_{lab.lower().replace(' ', '_')}.csv"
            (out / "pr" / name).write_text(pr_curve_csv(curve, header), encoding="utf-8")
        (out / "pr" / f"{case.slug}{suffix}_all.csv").write_text(
            pr_curve_csv(report.overall_pr_curve, header), encoding="utf-8"
        )


def write_history(path, history, header):
    lines = [f"# {header}", "epoch,train_loss,val_loss,val_accuracy"]
    for row in history:
        lines.append(
            f"{row['epoch']},{row['train_loss']:.6f},{row.get('val_loss', float('nan')):.6f},"
            f"{row.get('val_accuracy', float('nan')):.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
