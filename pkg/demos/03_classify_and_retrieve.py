"""Train a small point-set classifier on a toy corpus, then evaluate and query it.

    python3 demos/03_classify_and_retrieve.py [work_dir]
"""

import sys
from pathlib import Path

from plantfit.evaluation import build_report, retrieve_similar
from plantfit.neural import TrainConfig, train_model
from plantfit.pipeline import (
    PipelineConfig,
    labels_of,
    load_clouds,
    load_corpus,
    manifest_path,
    pointset_inputs,
    predict_records,
    split_corpus,
)
from plantfit.synth import CorpusConfig, build_synthetic_corpus

work = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_corpus")
labels = ("Pipe", "Elbow 90", "Blind Flange", "Tee")
build_synthetic_corpus(CorpusConfig(counts={lab: 25 for lab in labels}, rotation="yaw", seed=1), work)

cfg = PipelineConfig(corpus_dir=str(work), n_points=512)
manifest = load_corpus(cfg)
train_m, val_m = split_corpus(manifest, cfg)
train = load_clouds(train_m, manifest_path(cfg))
val = load_clouds(val_m, manifest_path(cfg))
tx, vx = pointset_inputs(train, 512, 0), pointset_inputs(val, 512, 1)
ty, vy = labels_of(train, manifest), labels_of(val, manifest)

tcfg = TrainConfig(kind="pointnet", epochs=15, learning_rate=1e-3)
model, history = train_model((tx, ty), (vx, vy), tcfg, num_classes=len(manifest.taxonomy),
                             on_epoch=lambda r: print(f"epoch {r['epoch']:2d} val accuracy {r['val_accuracy']:.3f}"))

records = predict_records(model, vx, vy, [c.id for c in val])
report = build_report(records, manifest.taxonomy.labels)
print(f"overall {report.overall_accuracy:.3f}  class {report.class_accuracy:.3f}  mAP {report.mean_ap:.3f}")

query = records[0]
hits = retrieve_similar(query, records, k=5)
by_id = {r.id: r for r in records}
print(f"nearest to {query.id}: " + ", ".join(f"{i} ({manifest.taxonomy.labels[by_id[i].true_label]})" for i in hits))
