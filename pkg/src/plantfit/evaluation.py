"""Classification and retrieval metrics and the per-experiment report.

Retrieval ranks a database by Euclidean distance between embeddings; an item
is relevant to a query when it has the same class label. Average precision is
the uninterpolated all-point form. mAP averages query APs within each class
first, then averages the class means.
"""

import io
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import EmptyDatabase, EmptyInput, EmptyRecords, NoRelevantItems, UnknownLabel

__all__ = [
    "PredictionRecord",
    "EvalReport",
    "classification_metrics",
    "retrieve_similar",
    "average_precision",
    "mean_average_precision",
    "precision_recall_curve",
    "mean_pr_curve",
    "build_report",
    "summary_table",
    "class_accuracy_table",
    "pr_curve_csv",
]


@dataclass(frozen=True, eq=False)
class PredictionRecord:
    id: str
    true_label: int
    predicted_label: int
    scores: np.ndarray
    embedding: np.ndarray


@dataclass
class EvalReport:
    labels: tuple
    overall_accuracy: float
    class_accuracy: float
    confusion: np.ndarray
    per_class_accuracy: Dict[str, Optional[float]]
    per_class_ap: Dict[str, Optional[float]]
    mean_ap: float
    pr_curves: Dict[str, list]
    overall_pr_curve: list
    excluded_classes: tuple = ()
    flags: list = field(default_factory=list)


def classification_metrics(records: Sequence[PredictionRecord], num_classes: Optional[int] = None):
    """Overall accuracy, class accuracy and the confusion matrix.

    Confusion rows are true labels, columns predictions. Class accuracy is the
    unweighted mean over classes that have at least one record.
    """
    if not records:
        raise EmptyRecords("no prediction records")
    if num_classes is None:
        num_classes = 1 + max(max(r.true_label, r.predicted_label) for r in records)
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    for r in records:
        conf[r.true_label, r.predicted_label] += 1
    total = int(conf.sum())
    overall = int(np.trace(conf)) / total
    support = conf.sum(axis=1)
    present = np.flatnonzero(support)
    per_class = np.diag(conf)[present] / support[present]
    return overall, float(per_class.mean()), conf


def retrieve_similar(query, database: Sequence[PredictionRecord], k: Optional[int] = None,
                     query_id: Optional[str] = None, metric: str = "euclidean") -> List[str]:
    """Database ids ranked by embedding distance to ``query``; ties by id.

    ``query`` is an embedding or a record. A database item sharing the
    query's id is skipped.
    """
    if not database:
        raise EmptyDatabase("retrieval database is empty")
    if isinstance(query, PredictionRecord):
        query_id = query.id if query_id is None else query_id
        query = query.embedding
    q = np.asarray(query, dtype=np.float64)
    items = [r for r in database if r.id != query_id]
    if not items:
        return []
    emb = np.stack([np.asarray(r.embedding, dtype=np.float64) for r in items])
    if metric == "euclidean":
        dist = np.sqrt(((emb - q) ** 2).sum(axis=1))
    elif metric == "cosine":
        denom = np.linalg.norm(emb, axis=1) * np.linalg.norm(q)
        dist = 1.0 - (emb @ q) / np.where(denom > 0, denom, 1.0)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    order = sorted(range(len(items)), key=lambda i: (dist[i], items[i].id))
    ids = [items[i].id for i in order]
    return ids if k is None else ids[:k]


def average_precision(relevant: Sequence) -> float:
    """Mean of precision@r over the ranks r that hold a relevant item."""
    rel = np.asarray(relevant, dtype=bool)
    n_rel = int(rel.sum())
    if n_rel == 0:
        raise NoRelevantItems("ranking contains no relevant item")
    hits = np.cumsum(rel)
    ranks = np.arange(1, len(rel) + 1)
    return float((hits[rel] / ranks[rel]).sum() / n_rel)


def mean_average_precision(aps: Sequence[float], classes: Sequence) -> float:
    """Average query APs within each class, then across classes."""
    if len(aps) == 0:
        raise EmptyInput("no average precisions given")
    if len(aps) != len(classes):
        raise ValueError("one class per AP is required")
    by_class: Dict = {}
    for ap, c in zip(aps, classes):
        by_class.setdefault(c, []).append(float(ap))
    means = [sum(v) / len(v) for _, v in sorted(by_class.items(), key=lambda kv: str(kv[0]))]
    return sum(means) / len(means)


def precision_recall_curve(relevant: Sequence) -> list:
    """One ``(recall, precision)`` point per rank position, in rank order."""
    rel = np.asarray(relevant, dtype=bool)
    n_rel = int(rel.sum())
    if n_rel == 0:
        raise NoRelevantItems("ranking contains no relevant item")
    hits = np.cumsum(rel)
    ranks = np.arange(1, len(rel) + 1)
    return [(float(h / n_rel), float(h / r)) for h, r in zip(hits, ranks)]


def mean_pr_curve(curves: Sequence[list]) -> list:
    """Rank-wise mean of equal-length PR curves."""
    if not curves:
        return []
    arr = np.asarray(curves, dtype=np.float64)
    m = arr.mean(axis=0)
    return [(float(r), float(p)) for r, p in m]


def _query_rankings(records, metric):
    """Leave-one-out rankings: every record queries all the others."""
    by_id = {r.id: r for r in records}
    out = []
    for q in records:
        ids = retrieve_similar(q, records, metric=metric)
        out.append((q, [by_id[i].true_label == q.true_label for i in ids]))
    return out


def build_report(records: Sequence[PredictionRecord], labels: Sequence[str],
                 excluded_classes: Sequence[str] = (), metric: str = "euclidean") -> EvalReport:
    """Accuracy, confusion, per-class AP, mAP and PR curves for one experiment.

    Records of ``excluded_classes`` are dropped before any metric is computed,
    both as queries and as retrieval candidates. Retrieval is leave-one-out
    over the remaining records; queries whose class has no other member are
    skipped and listed in ``flags``.
    """
    labels = tuple(labels)
    for r in records:
        if not (0 <= r.true_label < len(labels) and 0 <= r.predicted_label < len(labels)):
            raise UnknownLabel(f"record {r.id!r} refers to a class outside the taxonomy")
        if len(r.scores) != len(labels):
            raise UnknownLabel(f"record {r.id!r} has {len(r.scores)} scores for {len(labels)} classes")
    excl = set()
    for name in excluded_classes:
        if name not in labels:
            raise UnknownLabel(f"excluded class {name!r} is not in the taxonomy")
        excl.add(labels.index(name))
    kept = [r for r in records if r.true_label not in excl]
    if not kept:
        raise EmptyRecords("no records left after exclusion")

    overall, class_acc, conf = classification_metrics(kept, len(labels))
    support = conf.sum(axis=1)
    flags = []
    per_class_acc = {}
    for c, name in enumerate(labels):
        if c in excl:
            continue
        if support[c] == 0:
            per_class_acc[name] = None
            flags.append(f"no-validation-samples:{name}")
        else:
            per_class_acc[name] = float(conf[c, c] / support[c])

    aps, ap_classes, class_curves = [], [], {}
    for q, rel in _query_rankings(kept, metric):
        if not any(rel):
            flags.append(f"no-relevant-items:{q.id}")
            continue
        aps.append(average_precision(rel))
        ap_classes.append(q.true_label)
        class_curves.setdefault(q.true_label, []).append(precision_recall_curve(rel))

    per_class_ap = {}
    for c, name in enumerate(labels):
        if c in excl:
            continue
        vals = [a for a, k in zip(aps, ap_classes) if k == c]
        per_class_ap[name] = float(np.mean(vals)) if vals else None
    mean_ap = mean_average_precision(aps, ap_classes) if aps else float("nan")
    pr = {labels[c]: mean_pr_curve(curves) for c, curves in sorted(class_curves.items())}
    overall_pr = mean_pr_curve(list(pr.values()))
    return EvalReport(
        labels=labels,
        overall_accuracy=overall,
        class_accuracy=class_acc,
        confusion=conf,
        per_class_accuracy=per_class_acc,
        per_class_ap=per_class_ap,
        mean_ap=mean_ap,
        pr_curves=pr,
        overall_pr_curve=overall_pr,
        excluded_classes=tuple(labels[c] for c in sorted(excl)),
        flags=flags,
    )


# -- CSV exports ----------------------------------------------------------------


def _header(lines, header):
    if header:
        for ln in header.splitlines():
            lines.write(f"# {ln}\n")


def summary_table(rows: Sequence, header: Optional[str] = None) -> str:
    """Rows of ``(case name, network, EvalReport)`` as overall/class/mAP percentages."""
    buf = io.StringIO()
    _header(buf, header)
    buf.write("input_data,network,overall_accuracy,class_accuracy,mAP\n")
    for name, net, rep in rows:
        buf.write(
            f"{name},{net},{100 * rep.overall_accuracy:.2f},{100 * rep.class_accuracy:.2f},{100 * rep.mean_ap:.2f}\n"
        )
    return buf.getvalue()


def class_accuracy_table(rows: Sequence, labels: Sequence[str], header: Optional[str] = None) -> str:
    """One row per class, one column per experiment; empty cell for classes without samples."""
    buf = io.StringIO()
    _header(buf, header)
    buf.write("class," + ",".join(name for name, _, _ in rows) + "\n")
    for lab in labels:
        cells = []
        for _, _, rep in rows:
            v = rep.per_class_accuracy.get(lab)
            cells.append("" if v is None else f"{v:.2f}")
        buf.write(f"{lab}," + ",".join(cells) + "\n")
    return buf.getvalue()


def confusion_csv(report: EvalReport, header: Optional[str] = None) -> str:
    buf = io.StringIO()
    _header(buf, header)
    buf.write("true\\predicted," + ",".join(report.labels) + "\n")
    for lab, row in zip(report.labels, report.confusion):
        buf.write(lab + "," + ",".join(str(int(v)) for v in row) + "\n")
    return buf.getvalue()


def pr_curve_csv(curve: Sequence, header: Optional[str] = None) -> str:
    buf = io.StringIO()
    _header(buf, header)
    buf.write("rank,recall,precision\n")
    for i, (r, p) in enumerate(curve, start=1):
        buf.write(f"{i},{r:.6f},{p:.6f}\n")
    return buf.getvalue()
