"""Evaluation metrics and retrieval protocol.

ROC/AUC for gap classification (AUC via the rank statistic, ties count
one half), sensitivity at a required specificity, and the retrieval
suite: rank-1 recognition rate and mean average precision over tasks
whose positives are gallery frames near the query's true position. The
"indirect" mode drops positives that are temporal neighbors of the
query, so only true re-identification counts.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

__all__ = [
    "roc_and_auc",
    "sensitivity_at_specificity",
    "RetrievalTask",
    "rank1",
    "mean_average_precision",
    "average_precision",
    "build_retrieval_tasks",
    "write_metric_report",
    "write_roc_csv",
]

NEIGHBOR_EXCLUSION = 10  # frames
POSITION_TOLERANCE = 0.25  # FOV-lengths


def _check_scored(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ContractViolation("scores and labels must be aligned 1-D arrays")
    if not np.all(np.isfinite(scores)):
        raise ContractViolation("scores must be finite")
    if not set(np.unique(labels)) <= {0, 1}:
        raise ContractViolation("labels must be 0/1")
    if labels.min() == labels.max():
        raise ValueError("both classes are required")
    return scores, labels.astype(int)


def roc_and_auc(scores, labels):
    """Threshold sweep over distinct scores (higher score = more positive).

    Returns (points, auc): points is a list of (fpr, tpr, threshold) for
    the rule "predict positive iff score >= threshold", ends included;
    auc is the probability a positive outranks a negative, ties half.
    """
    scores, labels = _check_scored(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos

    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    y_sorted = labels[order]
    points = [(0.0, 0.0, float("inf"))]
    tp = fp = 0
    i = 0
    n = len(scores)
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        tp += int(y_sorted[i:j].sum())
        fp += (j - i) - int(y_sorted[i:j].sum())
        points.append((fp / n_neg, tp / n_pos, float(s_sorted[i])))
        i = j

    # rank-statistic AUC with midranks for ties
    asc = np.argsort(scores, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j < n and scores[asc[j]] == scores[asc[i]]:
            j += 1
        ranks[asc[i:j]] = 0.5 * (i + j - 1) + 1.0  # midrank, 1-based
        i = j
    rank_sum = ranks[labels == 1].sum()
    auc = (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return points, float(auc)


def auc_by_sweep_integration(points) -> float:
    """Trapezoidal area under the sweep curve (cross-check for the rank AUC)."""
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.trapezoid(tpr, fpr))


def sensitivity_at_specificity(scores, labels, specificity: float = 0.90) -> float:
    """Largest sensitivity among thresholds achieving >= the requested
    specificity (predict positive iff score >= threshold; the all-negative
    rule always qualifies)."""
    scores, labels = _check_scored(scores, labels)
    points, _ = roc_and_auc(scores, labels)
    best = 0.0
    for fpr, tpr, _ in points:
        if 1.0 - fpr >= specificity:
            best = max(best, tpr)
    return best


@dataclass
class RetrievalTask:
    query: int  # frame id
    gallery: np.ndarray  # frame ids
    positives: set
    mode: str = "all"  # "all" | "indirect"

    def __post_init__(self):
        if self.query in set(self.gallery.tolist()):
            raise ContractViolation("query must not be in the gallery")
        if not self.positives <= set(self.gallery.tolist()):
            raise ContractViolation("positives must be a subset of the gallery")
        if not self.positives:
            raise ContractViolation("task needs at least one positive")


def _ranked_gallery(task: RetrievalTask, distance_fn):
    dists = np.array([distance_fn(task.query, g) for g in task.gallery])
    # ties break toward the lower frame id, deterministically
    order = np.lexsort((task.gallery, dists))
    return task.gallery[order]


def rank1(tasks, distance_fn) -> float:
    """Fraction of tasks whose nearest gallery frame is a true positive."""
    if not tasks:
        raise ValueError("no retrieval tasks")
    hits = sum(1 for t in tasks if int(_ranked_gallery(t, distance_fn)[0]) in t.positives)
    return hits / len(tasks)


def average_precision(task: RetrievalTask, distance_fn) -> float:
    """Precision averaged at each positive's rank over the ranked gallery."""
    ranked = _ranked_gallery(task, distance_fn)
    rel = np.array([int(g) in task.positives for g in ranked])
    cum = np.cumsum(rel)
    precisions = cum[rel] / (np.flatnonzero(rel) + 1)
    return float(precisions.mean())


def mean_average_precision(tasks, distance_fn) -> float:
    if not tasks:
        raise ValueError("no retrieval tasks")
    return float(np.mean([average_precision(t, distance_fn) for t in tasks]))


def build_retrieval_tasks(
    frame_ids,
    positions,
    mode: str = "all",
    neighbor_exclusion: int = NEIGHBOR_EXCLUSION,
    position_tolerance: float = POSITION_TOLERANCE,
    queries=None,
) -> list:
    """Tasks over good-visibility frames with ground-truth positions.

    Positives are gallery frames within position_tolerance of the query's
    true position; indirect mode additionally drops positives within
    neighbor_exclusion frames of the query index. Tasks with no remaining
    positives are dropped.
    """
    if mode not in ("all", "indirect"):
        raise ContractViolation(f"mode must be all|indirect, got {mode!r}")
    frame_ids = np.asarray(frame_ids, dtype=int)
    positions = np.asarray(positions, dtype=np.float64)
    if frame_ids.shape != positions.shape:
        raise ContractViolation("frame_ids and positions must align")
    if queries is None:
        queries = frame_ids
    tasks = []
    pos_of = dict(zip(frame_ids.tolist(), positions.tolist()))
    for q in queries:
        q = int(q)
        gallery = frame_ids[frame_ids != q]
        close = np.abs(positions[frame_ids != q] - pos_of[q]) <= position_tolerance
        positives = set(gallery[close].tolist())
        if mode == "indirect":
            positives = {g for g in positives if abs(g - q) >= neighbor_exclusion}
        if not positives:
            continue
        tasks.append(RetrievalTask(query=q, gallery=gallery, positives=positives, mode=mode))
    return tasks


def write_metric_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def write_roc_csv(path, points) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr", "threshold"])
        for fpr, tpr, thr in points:
            writer.writerow([fpr, tpr, thr])
