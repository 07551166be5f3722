"""Gap scoring: side descriptors, direct distance, histogram features.

For each poor-visibility gap we fuse the descriptors of the frames in a
short window on each side into one vector per side, weighting each frame
by its raw visibility score and by recency (w_i = v_i * exp(-s_i) with
s_i the temporal distance, in seconds, to the gap boundary). The direct
score is the cosine distance between the two side descriptors; a
supervised refinement (gradient boosting, see boosting.py) operates on
histogram features of the cross-similarity matrix and visibility scores
plus the gap duration.
"""

from dataclasses import dataclass

import numpy as np

from .encoder import cosine_distance
from .errors import ContractViolation, UnevaluableSide

__all__ = [
    "SideWindow",
    "GapRecord",
    "GapFeatures",
    "side_descriptor",
    "direct_score",
    "cross_similarities",
    "extract_features",
    "build_side_windows",
    "calibrate_alert_threshold",
    "FEATURE_DIM",
]

SIDE_WINDOW_S = 2.0
N_BINS = 32
FEATURE_DIM = 3 * N_BINS + 1  # 97
DEFAULT_ALERT_FPR = 0.10


@dataclass
class SideWindow:
    """Frames within 2 s of one gap boundary."""

    side: str  # "before" | "after"
    embeddings: np.ndarray  # (k, 512)
    visibility: np.ndarray  # (k,) raw scores
    seconds_from_gap: np.ndarray  # (k,) >= 0, increasing away from the gap
    frame_indices: np.ndarray  # (k,)

    def __post_init__(self):
        k = len(self.embeddings)
        if not (len(self.visibility) == len(self.seconds_from_gap) == len(self.frame_indices) == k):
            raise ContractViolation("side window arrays must align")
        if k and (self.seconds_from_gap.min() < 0 or self.seconds_from_gap.max() > SIDE_WINDOW_S):
            raise ContractViolation("temporal distances must lie in [0, 2] seconds")

    @property
    def evaluable(self) -> bool:
        return len(self.embeddings) > 0 and bool(np.any(self.visibility > 0))


@dataclass
class GapRecord:
    gap_id: int
    start_frame: int
    end_frame: int
    duration_s: float
    before: SideWindow | None = None
    after: SideWindow | None = None
    inside_visibility: np.ndarray | None = None
    direct_score: float | None = None
    supervised_prob: float | None = None
    alert: bool = False
    unevaluable: bool = False
    label: int | None = None  # ground truth where known: 1 = scene change

    def to_json(self) -> dict:
        doc = {
            "gap_id": self.gap_id,
            "start_frame": self.start_frame,
            "end_frame": self.end_frame,
            "duration_s": self.duration_s,
            "direct_score": self.direct_score,
            "alert": self.alert,
        }
        if self.supervised_prob is not None:
            doc["supervised_prob"] = self.supervised_prob
        if self.unevaluable:
            doc["unevaluable"] = True
        return doc


def side_descriptor(window: SideWindow) -> np.ndarray:
    """Visibility- and recency-weighted mean of the window's descriptors."""
    if len(window.embeddings) == 0 or not np.any(window.visibility > 0):
        raise UnevaluableSide(f"{window.side} window has no usable frames")
    weights = window.visibility * np.exp(-window.seconds_from_gap)
    return (weights[:, None] * window.embeddings).sum(axis=0) / weights.sum()


def direct_score(before: SideWindow, after: SideWindow) -> float:
    """Cosine distance between the fused side descriptors; in [0, 2]."""
    return cosine_distance(side_descriptor(before), side_descriptor(after))


def cross_similarities(before: SideWindow, after: SideWindow) -> np.ndarray:
    """Every before-frame x after-frame cosine similarity, flattened."""
    a = np.asarray(before.embeddings, dtype=np.float64)
    b = np.asarray(after.embeddings, dtype=np.float64)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("zero-norm embedding in side window")
    return ((a / na) @ (b / nb).T).ravel()


def _histogram(values, lo: float, hi: float):
    """Normalized fixed-edge histogram; empty input -> uniform with flag."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return np.full(N_BINS, 1.0 / N_BINS), True
    counts, _ = np.histogram(np.clip(values, lo, hi), bins=N_BINS, range=(lo, hi))
    return counts.astype(np.float64) / counts.sum(), False


@dataclass
class GapFeatures:
    sim_hist: np.ndarray  # 32 bins over [-1, 1]
    vis_outside_hist: np.ndarray  # 32 bins over [0, 1]
    vis_inside_hist: np.ndarray  # 32 bins over [0, 1]
    duration_s: float
    degenerate: bool = False  # some source histogram had no data

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [self.sim_hist, self.vis_outside_hist, self.vis_inside_hist, [self.duration_s]]
        )


def extract_features(gap: GapRecord) -> GapFeatures:
    """97-d feature vector: three 32-bin histograms plus the duration."""
    if gap.before is None or gap.after is None:
        raise ContractViolation("gap record is missing side windows")
    sims = (
        cross_similarities(gap.before, gap.after)
        if len(gap.before.embeddings) and len(gap.after.embeddings)
        else np.empty(0)
    )
    sim_hist, f1 = _histogram(sims, -1.0, 1.0)
    outside = np.concatenate([gap.before.visibility, gap.after.visibility])
    vis_out_hist, f2 = _histogram(outside, 0.0, 1.0)
    inside = gap.inside_visibility if gap.inside_visibility is not None else np.empty(0)
    vis_in_hist, f3 = _histogram(inside, 0.0, 1.0)
    return GapFeatures(
        sim_hist=sim_hist,
        vis_outside_hist=vis_out_hist,
        vis_inside_hist=vis_in_hist,
        duration_s=gap.duration_s,
        degenerate=f1 or f2 or f3,
    )


def build_side_windows(
    gap_segment,
    segments,
    embeddings: np.ndarray,
    raw_scores: np.ndarray,
    fps: float,
    window_s: float = SIDE_WINDOW_S,
):
    """Side windows for one gap, clipped to the adjacent good segments.

    The window never crosses into another gap: only frames of the
    immediately adjacent good segment within window_s of the boundary
    are used. Returns (before, after); either may be empty when the gap
    touches the stream edge.
    """
    max_frames = int(round(window_s * fps))

    def window_frames(boundary: int, step: int):
        seg = next(
            (s for s in segments if s.kind == "good" and s.start_frame <= boundary <= s.end_frame),
            None,
        )
        if seg is None:
            return np.empty(0, dtype=int)
        idx = []
        f = boundary
        while len(idx) < max_frames and seg.start_frame <= f <= seg.end_frame:
            idx.append(f)
            f += step
        return np.array(idx, dtype=int)

    def make(side: str, boundary: int, step: int) -> SideWindow:
        idx = window_frames(boundary, step)
        # near the window edge, exp(-s) spans [exp(-1.9), 1] at 10 fps
        seconds = np.abs(idx - boundary) / fps
        return SideWindow(
            side=side,
            embeddings=embeddings[idx] if len(idx) else np.empty((0, embeddings.shape[1])),
            visibility=raw_scores[idx] if len(idx) else np.empty(0),
            seconds_from_gap=seconds,
            frame_indices=idx,
        )

    before = make("before", gap_segment.start_frame - 1, -1)
    after = make("after", gap_segment.end_frame + 1, +1)
    return before, after


def calibrate_alert_threshold(scores, labels, target_fpr: float = DEFAULT_ALERT_FPR) -> float:
    """Smallest score threshold whose false-positive rate on the negative
    (no scene change) gaps is <= target_fpr. Alert fires when
    score > threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    neg = np.sort(scores[labels == 0])
    if len(neg) == 0:
        raise ContractViolation("threshold calibration needs negative gaps")
    # allow at most floor(target_fpr * n) negatives above the threshold
    k = int(np.floor(target_fpr * len(neg)))
    idx = len(neg) - 1 - k
    return float(neg[idx])
