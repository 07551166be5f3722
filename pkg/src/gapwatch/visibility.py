"""Per-frame visibility scoring and timeline partitioning.

A logistic head on frame embeddings produces a raw good-visibility
probability per frame. Scores are then refined by similarity-kernel
smoothing over bounded batches (near-duplicate frames pull each other
toward a shared score), binarized, cleaned with a median filter and
run-length encoded into alternating good/gap segments.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import check_binary_labels, check_embeddings
from .errors import ConfigurationError, ContractViolation

__all__ = [
    "TimelineSegment",
    "VisibilityClassifier",
    "smooth_scores",
    "refine_scores",
    "median_filter",
    "partition_timeline",
    "segment_log_records",
]

SMOOTH_BATCH = 512  # frames per smoothing batch
MEDIAN_WINDOW = 10
MIN_GAP_FRAMES = 3  # shorter gaps are treated as flicker and merged away


@dataclass(frozen=True)
class TimelineSegment:
    kind: str  # "good" | "gap"
    start_frame: int
    end_frame: int  # inclusive

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame + 1

    def duration_s(self, fps: float) -> float:
        return self.n_frames / fps


class VisibilityClassifier(BaseEstimator, ClassifierMixin):
    """L2-regularized logistic regression on embedding vectors.

    Fitting is deterministic: the convex objective is minimized from a
    zero start, so no random state is involved.
    """

    def __init__(self, l2: float = 1e-4, max_iter: int = 1000):
        self.l2 = l2
        self.max_iter = max_iter

    @staticmethod
    def _loss_grad(params, X, y, l2):
        w, b = params[:-1], params[-1]
        z = X @ w + b
        p = expit(z)
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
        gz = (p - y) / len(y)
        grad = np.concatenate([X.T @ gz + l2 * w, [gz.sum()]])
        return loss, grad

    def fit(self, X, y):
        X = check_embeddings(X)
        y = check_binary_labels(y, require_both_classes=True).astype(np.float64)
        x0 = np.zeros(X.shape[1] + 1)
        res = minimize(
            self._loss_grad,
            x0,
            args=(X, y, self.l2),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": self.max_iter, "ftol": 1e-15, "gtol": 1e-12},
        )
        self.weight_ = res.x[:-1]
        self.bias_ = float(res.x[-1])
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X):
        X = check_embeddings(X, dim=self.weight_.shape[0])
        return X @ self.weight_ + self.bias_

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def raw_scores(self, X):
        """P(good visibility) per frame."""
        return expit(self.decision_function(X))

    def predict(self, X):
        return (self.raw_scores(X) >= 0.5).astype(np.int64)


def smooth_scores(embeddings, raw, power: int = 4, max_batch: int = SMOOTH_BATCH):
    """Similarity-kernel smoothing of one batch of raw scores.

    refined_i = sum_j K_ij raw_j / sum_j K_ij with
    K_ij = max(0, cos(f_i, f_j))^power, K_ii included. Rows whose
    embedding has zero norm fall back to their raw score.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    raw = np.asarray(raw, dtype=np.float64)
    if E.ndim != 2 or len(E) != len(raw):
        raise ContractViolation("embeddings and raw scores must align")
    if len(E) > max_batch:
        raise ContractViolation(f"smoothing batch of {len(E)} exceeds {max_batch} frames")
    if len(E) == 0:
        return raw.copy()
    norms = np.linalg.norm(E, axis=1)
    ok = norms > 0
    En = np.where(ok[:, None], E / np.where(ok, norms, 1.0)[:, None], 0.0)
    K = np.clip(En @ En.T, 0.0, None) ** power
    denom = K.sum(axis=1)
    refined = np.where(denom > 0, K @ raw / np.where(denom > 0, denom, 1.0), raw)
    return np.where(ok, refined, raw)


def refine_scores(embeddings, raw, batch_size: int = SMOOTH_BATCH, power: int = 4):
    """Smooth a whole stream in consecutive batches (the streaming layout)."""
    E = np.asarray(embeddings, dtype=np.float64)
    raw = np.asarray(raw, dtype=np.float64)
    out = np.empty_like(raw)
    for lo in range(0, len(raw), batch_size):
        hi = min(lo + batch_size, len(raw))
        out[lo:hi] = smooth_scores(E[lo:hi], raw[lo:hi], power=power, max_batch=batch_size)
    return out


def median_filter(binary, window: int = MEDIAN_WINDOW):
    """Recursive sliding median for 0/1 sequences.

    The window covers (window-1)//2 already-filtered values to the left
    and window//2 raw values from the current position rightward; past
    the ends the edge value is replicated. Ties (possible for even
    windows) keep the previous output value. Recursion plus constant
    edge extension make a single pass idempotent.
    """
    if window < 1:
        raise ContractViolation(f"window must be >= 1, got {window}")
    x = np.asarray(binary, dtype=np.int64)
    n = len(x)
    if n == 0:
        return x.copy()
    before = (window - 1) // 2
    after = window // 2
    out = np.empty(n, dtype=np.int64)
    prev = int(x[0])
    left_pad = int(x[0])
    right_pad = int(x[n - 1])
    for i in range(n):
        lo = i - before
        hi = i + after
        ones = 0
        if lo < 0:
            ones += -lo * left_pad
            lo = 0
        ones += int(out[lo:i].sum())
        hi_in = min(hi, n - 1)
        ones += int(x[i : hi_in + 1].sum())
        if hi > n - 1:
            ones += (hi - (n - 1)) * right_pad
        if 2 * ones > window:
            prev = 1
        elif 2 * ones < window:
            prev = 0
        out[i] = prev
    return out


def _runs(labels):
    """Run-length encode into (value, start, end) triples, end inclusive."""
    runs = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            runs.append((int(labels[start]), start, i - 1))
            start = i
    return runs


def partition_timeline(
    refined,
    threshold: float = 0.5,
    window: int = MEDIAN_WINDOW,
    min_gap_frames: int = MIN_GAP_FRAMES,
):
    """Threshold, median-filter and run-length encode refined scores.

    Gap runs shorter than min_gap_frames are flicker and get absorbed
    into the surrounding good segment. Returns alternating, disjoint
    TimelineSegments covering the whole stream.
    """
    refined = np.asarray(refined, dtype=np.float64)
    if len(refined) == 0:
        raise ContractViolation("score stream is empty")
    binary = (refined >= threshold).astype(np.int64)
    filtered = median_filter(binary, window=window)
    runs = _runs(filtered)
    if min_gap_frames > 1 and len(runs) > 1:
        kept = []
        for value, start, end in runs:
            if value == 0 and end - start + 1 < min_gap_frames:
                value = 1  # absorb flicker into good
            if kept and kept[-1][0] == value:
                kept[-1] = (value, kept[-1][1], end)
            else:
                kept.append((value, start, end))
        runs = kept
    return [
        TimelineSegment(kind="good" if value == 1 else "gap", start_frame=start, end_frame=end)
        for value, start, end in runs
    ]


def segment_log_records(segments, refined):
    """JSON-ready segment log entries: {kind, start_frame, end_frame, mean_refined_score}."""
    refined = np.asarray(refined, dtype=np.float64)
    return [
        {
            "kind": s.kind,
            "start_frame": s.start_frame,
            "end_frame": s.end_frame,
            "mean_refined_score": float(refined[s.start_frame : s.end_frame + 1].mean()),
        }
        for s in segments
    ]


def check_segments(segments, n_frames: int) -> None:
    """Validate the partition invariants; raises ContractViolation."""
    if not segments:
        raise ContractViolation("no segments")
    if segments[0].start_frame != 0 or segments[-1].end_frame != n_frames - 1:
        raise ContractViolation("segments do not cover the stream")
    for prev, cur in zip(segments, segments[1:]):
        if cur.start_frame != prev.end_frame + 1:
            raise ContractViolation("segments are not contiguous")
        if cur.kind == prev.kind:
            raise ContractViolation("segments do not alternate")
