"""``plantfit`` command line: gen, views, render, train, eval, retrieve, report, plot.

Settings resolve in three layers: built-in defaults, then an INI config file
(``--config`` or the ``PLANTFIT_CONFIG`` environment variable), then flags.
Config keys are the flag names with dashes replaced by underscores; ``gen``
reads the ``[corpus]`` section and every other subcommand reads ``[pipeline]``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import PlantFitError

CONFIG_ENV = "PLANTFIT_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


@dataclass(frozen=True)
class Option:
    key: str
    type: Callable
    default: object = None
    help: str = ""
    aliases: tuple = ()

    @property
    def flag(self):
        return "--" + self.key.replace("_", "-")


def _bool(text):
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _pair(text):
    a, b = (float(x) for x in str(text).split(","))
    return (a, b)


def _names(text):
    return tuple(s.strip() for s in str(text).split(";") if s.strip())


CORPUS = Option("corpus", str, "corpus", "corpus directory holding manifest.csv")
STRATEGY = Option("strategy", str, "acqrate", "view strategy: ring12, ransac or acqrate")
DEGREE = Option("degree", float, 10.0, "neighborhood step in degrees")
RES = Option("resolution", int, 227, "render resolution in pixels", ("--res",))
RANSAC_T = Option("ransac_threshold", float, 0.02, "RANSAC inlier distance")
RANSAC_N = Option("ransac_iterations", int, 500, "RANSAC iterations")
SEED = Option("seed", int, 0, "random seed")
SPLIT_SEED = Option("split_seed", int, 0, "seed of the stratified train/validation split")
TRAIN_FRACTION = Option("train_fraction", float, 0.8, "training share of every class")
IMAGE_SIDE = Option("image_side", int, 64, "network input side after block averaging")
N_POINTS = Option("n_points", int, 2048, "points per cloud for the point-set network")
RENDER_DIR = Option("render_dir", str, None, "directory of pre-rendered views")
CHECKPOINT = Option("checkpoint", str, "model.ckpt", "checkpoint path")
NET = Option("net", str, "pointnet", "network: pointnet or mvcnn")
EPOCHS = Option("epochs", int, 30, "training epochs")
BATCH = Option("batch_size", int, None, "mini-batch size (network default when unset)")
LR = Option("learning_rate", float, None, "Adam learning rate (network default when unset)", ("--lr",))
EXCLUDE = Option("exclude", _names, None, "semicolon-separated classes to drop from metrics")
METRIC = Option("metric", str, "euclidean", "retrieval distance: euclidean or cosine")

SUBCOMMANDS = {
    "gen": (
        "corpus",
        "generate a synthetic scan corpus",
        [
            Option("out", str, None, "output corpus directory"),
            Option("counts", str, None, "per-class counts, e.g. 'Pipe: 200; Tee: 200'"),
            Option("jitter", _pair, None, "dimension scale range 'lo, hi'"),
            Option("distance_range", _pair, None, "scanner distance range 'lo, hi'"),
            Option("elevation_range", _pair, None, "scanner elevation range 'lo, hi' in degrees"),
            Option("rotation", str, None, "component orientation: none, yaw or full"),
            Option("reference_density", float, None, "surface points per unit area at distance 1"),
            Option("occlusion", _bool, None, "simulate line-of-sight occlusion"),
            Option("density_falloff", _bool, None, "thin points with the inverse square of distance"),
            Option("noise_sigma", float, None, "Gaussian range noise"),
            Option("outlier_fraction", float, None, "share of uniform outliers"),
            Option("min_points", int, None, "minimum points per scan"),
            SEED,
            Option("workers", int, 1, "worker processes"),
        ],
    ),
    "views": (
        "pipeline",
        "compute camera poses for every cloud",
        [CORPUS, STRATEGY, DEGREE, RES, RANSAC_T, RANSAC_N, SEED, Option("out", str, None, "output directory")],
    ),
    "render": (
        "pipeline",
        "render depth images for every cloud",
        [CORPUS, STRATEGY, DEGREE, RES, RANSAC_T, RANSAC_N, SEED, Option("out", str, None, "output directory")],
    ),
    "train": (
        "pipeline",
        "train a network on the training split",
        [CORPUS, NET, STRATEGY, DEGREE, RES, RANSAC_T, RANSAC_N, IMAGE_SIDE, N_POINTS, RENDER_DIR,
         TRAIN_FRACTION, SPLIT_SEED, EPOCHS, BATCH, LR, SEED, CHECKPOINT],
    ),
    "eval": (
        "pipeline",
        "evaluate a checkpoint on the validation split",
        [CORPUS, STRATEGY, DEGREE, RES, RANSAC_T, RANSAC_N, IMAGE_SIDE, N_POINTS, RENDER_DIR,
         TRAIN_FRACTION, SPLIT_SEED, SEED, CHECKPOINT, EXCLUDE, METRIC,
         Option("out", str, None, "report directory")],
    ),
    "retrieve": (
        "pipeline",
        "rank stored embeddings by distance to a query",
        [Option("records", str, None, "records.npz written by eval"),
         Option("query", str, None, "query sample id"),
         Option("k", int, 10, "number of results", ("-k",)), METRIC],
    ),
    "report": (
        "pipeline",
        "run the six-case experiment suite",
        [CORPUS, DEGREE, RES, RANSAC_T, RANSAC_N, IMAGE_SIDE, N_POINTS, TRAIN_FRACTION, SPLIT_SEED,
         EPOCHS, SEED, EXCLUDE,
         Option("mvcnn_lr", float, None, "multi-view learning rate"),
         Option("pointnet_lr", float, None, "point-set learning rate"),
         Option("cases", _names, None, "semicolon-separated case slugs to run (default: all six)"),
         Option("out", str, None, "report directory")],
    ),
    "plot": (
        "pipeline",
        "draw PR-curve CSV files as SVG",
        [Option("input", str, None, "report directory or directory of PR CSV files"),
         Option("out", str, None, "output directory")],
    ),
}

REQUIRED = {
    "gen": ("out",),
    "views": ("out",),
    "render": ("out",),
    "eval": ("out",),
    "retrieve": ("records", "query"),
    "report": ("out",),
    "plot": ("input", "out"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="plantfit", description="Piping-component classification pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)
    sub.required = True
    for name, (_, help_text, options) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default=None, help=f"INI config file (default: ${CONFIG_ENV})")
        for opt in options:
            p.add_argument(opt.flag, *opt.aliases, dest=opt.key, default=None, help=opt.help)
    return parser


def _read_config(path, section):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as e:
        raise UsageError(f"--config: cannot read {path}: {e.strerror}") from e
    return dict(parser[section]) if parser.has_section(section) else {}


def _known_keys(section):
    keys = set()
    for sec, _, options in SUBCOMMANDS.values():
        if sec == section:
            keys.update(o.key for o in options)
    return keys


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then config file, then flags; values converted to their types."""
    section, _, options = SUBCOMMANDS[command]
    path = args.config or os.environ.get(CONFIG_ENV)
    from_file = _read_config(path, section) if path else {}
    unknown = set(from_file) - _known_keys(section)
    if unknown:
        raise UsageError(f"unknown [{section}] key in {path}: {sorted(unknown)[0]}")
    out = {}
    for opt in options:
        raw = getattr(args, opt.key)
        src = opt.flag
        if raw is None and opt.key in from_file:
            raw, src = from_file[opt.key], f"[{section}] {opt.key}"
        if raw is None:
            out[opt.key] = opt.default
            continue
        try:
            out[opt.key] = opt.type(raw)
        except (TypeError, ValueError) as e:
            raise UsageError(f"{src}: invalid value {raw!r}") from e
    for key in REQUIRED.get(command, ()):
        if out.get(key) is None:
            raise UsageError(f"--{key.replace('_', '-')} is required")
    return out


def config_digest(settings: dict) -> str:
    blob = json.dumps(settings, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _check_choice(flag, value, choices):
    if value not in choices:
        raise UsageError(f"--{flag}: {value!r} is not one of {', '.join(choices)}")


# -- subcommands ---------------------------------------------------------------


def _pipeline_config(s, **extra):
    from .pipeline import PipelineConfig

    kw = dict(
        corpus_dir=s.get("corpus", "corpus"),
        resolution=s.get("resolution", 227),
        ransac_threshold=s.get("ransac_threshold", 0.02),
        ransac_iterations=s.get("ransac_iterations", 500),
        sample_seed=s.get("seed", 0),
    )
    for key in ("degree", "image_side", "n_points", "train_fraction", "split_seed", "render_dir"):
        if key in s and s[key] is not None:
            kw[key] = s[key]
    if s.get("strategy") is not None:
        kw["strategy"] = s["strategy"]
    kw.update(extra)
    try:
        return PipelineConfig(**kw)
    except ValueError as e:
        raise UsageError(str(e)) from e


def cmd_gen(s, header):
    from .synth import build_synthetic_corpus, corpus_config_from_mapping, save_corpus_config

    keys = [o.key for o in SUBCOMMANDS["gen"][2] if o.key not in ("out", "workers")]
    mapping = {}
    for k in keys:
        v = s[k]
        if v is None:
            continue
        if isinstance(v, tuple):
            v = f"{v[0]!r}, {v[1]!r}"
        mapping[k] = str(v).lower() if isinstance(v, bool) else str(v)
    try:
        cfg = corpus_config_from_mapping(mapping)
    except (KeyError, ValueError) as e:
        raise UsageError(str(e)) from e
    out = Path(s["out"])
    manifest = build_synthetic_corpus(cfg, out, workers=max(1, s["workers"]))
    save_corpus_config(cfg, out / "corpus.cfg")
    print(f"wrote {len(manifest)} clouds over {len(manifest.taxonomy)} classes to {out}")


def _all_clouds(cfg):
    from .pipeline import load_clouds, load_corpus, manifest_path

    manifest = load_corpus(cfg)
    return manifest, load_clouds(manifest, manifest_path(cfg))


def cmd_views(s, header):
    from .geometry import normalize_unit_sphere
    from .pipeline import poses_for
    from .views import format_poses

    _check_choice("strategy", s["strategy"], ("ring12", "ransac", "acqrate"))
    cfg = _pipeline_config(s)
    _, clouds = _all_clouds(cfg)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    for cloud in clouds:
        norm, _ = normalize_unit_sphere(cloud)
        poses = poses_for(norm, cfg.strategy, cfg.degree, cfg.render_config, cfg.ransac_config)
        (out / f"{cloud.id}.poses").write_text(f"# {header}\n" + format_poses(poses), encoding="utf-8")
    print(f"wrote poses for {len(clouds)} clouds to {out}")


def cmd_render(s, header):
    from .pipeline import render_cloud_views
    from .render import view_filename, write_pgm

    _check_choice("strategy", s["strategy"], ("ring12", "ransac", "acqrate"))
    cfg = _pipeline_config(s)
    _, clouds = _all_clouds(cfg)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for cloud in clouds:
        _, images = render_cloud_views(cloud, cfg.strategy, cfg.degree, cfg.render_config, cfg.ransac_config)
        for i, im in enumerate(images):
            write_pgm(im, out / view_filename(cloud.id, i), comment=header)
            n += 1
    print(f"wrote {n} views for {len(clouds)} clouds to {out}")


def _case_for(net, strategy, degree):
    from .pipeline import ExperimentCase

    if net == "pointnet":
        return ExperimentCase("Sampled point cloud", "points")
    return ExperimentCase(strategy, strategy, None if strategy == "ring12" else degree)


def _split_inputs(cfg, case):
    from .pipeline import case_inputs, labels_of, load_clouds, load_corpus, manifest_path, split_corpus

    manifest = load_corpus(cfg)
    train_m, val_m = split_corpus(manifest, cfg)
    path = manifest_path(cfg)
    tc, vc = load_clouds(train_m, path), load_clouds(val_m, path)
    return (
        manifest,
        (case_inputs(case, tc, cfg, cfg.render_dir), labels_of(tc, manifest)),
        (case_inputs(case, vc, cfg, cfg.render_dir), labels_of(vc, manifest), [c.id for c in vc]),
    )


def cmd_train(s, header):
    from .neural import TrainConfig, save_checkpoint, train_model
    from .pipeline import write_history

    _check_choice("net", s["net"], ("pointnet", "mvcnn"))
    _check_choice("strategy", s["strategy"], ("ring12", "ransac", "acqrate"))
    cfg = _pipeline_config(s)
    try:
        tc = TrainConfig(kind=s["net"], batch_size=s["batch_size"], learning_rate=s["learning_rate"],
                         epochs=s["epochs"], seed=s["seed"], image_side=cfg.image_side, n_points=cfg.n_points)
    except ValueError as e:
        raise UsageError(str(e)) from e
    case = _case_for(s["net"], cfg.strategy, cfg.degree)
    manifest, (tx, ty), (vx, vy, _) = _split_inputs(cfg, case)

    def report(row):
        print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()), flush=True)

    model, history = train_model((tx, ty), (vx, vy), tc, num_classes=len(manifest.taxonomy), on_epoch=report)
    ckpt = Path(s["checkpoint"])
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    note = json.dumps({"header": header, "case": case.slug, "labels": list(manifest.taxonomy.labels)})
    save_checkpoint(model, ckpt, note=note)
    write_history(str(ckpt) + ".history.csv", history, header)
    print(f"wrote {ckpt}")


def save_records(records, labels, path, header):
    np.savez(
        path,
        ids=np.array([r.id for r in records], dtype=str),
        true_label=np.array([r.true_label for r in records], dtype=np.int64),
        predicted_label=np.array([r.predicted_label for r in records], dtype=np.int64),
        scores=np.stack([r.scores for r in records]),
        embedding=np.stack([r.embedding for r in records]),
        labels=np.array(labels, dtype=str),
        header=np.array(header),
    )


def load_records(path):
    from .evaluation import PredictionRecord

    with np.load(path, allow_pickle=False) as z:
        labels = tuple(str(x) for x in z["labels"])
        records = [
            PredictionRecord(str(i), int(t), int(p), s, e)
            for i, t, p, s, e in zip(z["ids"], z["true_label"], z["predicted_label"], z["scores"], z["embedding"])
        ]
    return records, labels


def cmd_eval(s, header):
    from .evaluation import build_report, class_accuracy_table, summary_table
    from .neural import load_checkpoint
    from .pipeline import predict_records, write_case_files

    _check_choice("metric", s["metric"], ("euclidean", "cosine"))
    model, _, note = load_checkpoint(s["checkpoint"])
    _check_choice("strategy", s["strategy"], ("ring12", "ransac", "acqrate"))
    meta = json.loads(note) if note.startswith("{") else {}
    cfg = _pipeline_config(s)
    case = _case_for(model.kind, cfg.strategy, cfg.degree)
    if meta.get("case") not in (None, case.slug):
        print(f"warning: checkpoint was trained on {meta['case']}, evaluating on {case.slug}", file=sys.stderr)
    manifest, _, (vx, vy, ids) = _split_inputs(cfg, case)
    labels = manifest.taxonomy.labels
    records = predict_records(model, vx, vy, ids)
    rep = build_report(records, labels, metric=s["metric"])
    rep_x = build_report(records, labels, excluded_classes=s["exclude"] or (), metric=s["metric"])
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_case_files(out, case, rep, rep_x, None, header)
    rows = [(case.name, case.network, rep)]
    (out / "summary.csv").write_text(summary_table(rows, header), encoding="utf-8")
    if s["exclude"]:
        rows_x = [(case.name, case.network, rep_x)]
        (out / "summary_excluded.csv").write_text(
            summary_table(rows_x, header + "\nexcluded=" + ";".join(s["exclude"])), encoding="utf-8")
    (out / "class_accuracy.csv").write_text(class_accuracy_table(rows, labels, header), encoding="utf-8")
    save_records(records, labels, out / "records.npz", header)
    print(f"overall_accuracy={rep.overall_accuracy:.4f} class_accuracy={rep.class_accuracy:.4f} "
          f"mAP={rep.mean_ap:.4f}")
    for flag in rep.flags:
        print(f"flag: {flag}")


def cmd_retrieve(s, header):
    from .evaluation import retrieve_similar

    _check_choice("metric", s["metric"], ("euclidean", "cosine"))
    records, labels = load_records(s["records"])
    by_id = {r.id: r for r in records}
    if s["query"] not in by_id:
        raise PlantFitError(f"query id {s['query']!r} is not in {s['records']}")
    q = by_id[s["query"]]
    ids = retrieve_similar(q, records, k=s["k"], metric=s["metric"])
    print(f"query {q.id} ({labels[q.true_label]})")
    for rank, i in enumerate(ids, start=1):
        r = by_id[i]
        dist = float(np.linalg.norm(np.asarray(r.embedding) - np.asarray(q.embedding)))
        mark = "+" if r.true_label == q.true_label else "-"
        print(f"{rank:3d} {mark} {i} ({labels[r.true_label]}) d={dist:.6f}")


def cmd_report(s, header):
    from .neural import TrainConfig
    from .pipeline import SIX_CASES, run_experiment_suite

    cases = SIX_CASES
    if s["cases"]:
        by_slug = {c.slug: c for c in SIX_CASES}
        bad = [c for c in s["cases"] if c not in by_slug]
        if bad:
            raise UsageError(f"--cases: unknown case {bad[0]!r}; choose from {', '.join(by_slug)}")
        cases = tuple(by_slug[c] for c in s["cases"])
    cfg = _pipeline_config(
        s,
        report_dir=s["out"],
        excluded_classes=s["exclude"],
        mvcnn_train=TrainConfig(kind="mvcnn", epochs=s["epochs"], seed=s["seed"], learning_rate=s["mvcnn_lr"]),
        pointnet_train=TrainConfig(kind="pointnet", epochs=s["epochs"], seed=s["seed"],
                                   learning_rate=s["pointnet_lr"]),
    )
    results = run_experiment_suite(cfg, cases)
    for r in results:
        rep = r.report
        print(f"{r.case.name}: overall={rep.overall_accuracy:.4f} class={rep.class_accuracy:.4f} mAP={rep.mean_ap:.4f}")
    print(f"wrote report to {s['out']}")


def cmd_plot(s, header):
    from .plot import plot_directory

    written = plot_directory(Path(s["input"]), Path(s["out"]), header)
    print(f"wrote {len(written)} SVG files to {s['out']}")


COMMANDS = {
    "gen": cmd_gen,
    "views": cmd_views,
    "render": cmd_render,
    "train": cmd_train,
    "eval": cmd_eval,
    "retrieve": cmd_retrieve,
    "report": cmd_report,
    "plot": cmd_plot,
}


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        settings = resolve(args.command, args)
        digest = config_digest({"command": args.command, **settings})
        seed = settings.get("seed", 0)
        header = f"seed={seed} config={digest}"
        print(f"config: {json.dumps(settings, sort_keys=True, default=str)}")
        print(f"seed: {seed}")
        print(f"digest: {digest}", flush=True)
        COMMANDS[args.command](settings, header)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"plantfit {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (PlantFitError, OSError) as e:
        print(f"plantfit {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
