"""Self-supervised training pairs from artificial gaps.

Inside good-visibility segments we mark random spans as pseudo-gaps,
estimate how far the camera travelled across each span (boundary-flux
displacement accumulated frame to frame), and label the two boundary
frames same-scene / different-scene. Displacements inside the ambiguous
band between the two thresholds are discarded to keep labels pure.
"""

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import flow
from .errors import ConfigurationError
from .visibility import TimelineSegment

__all__ = [
    "LabelThresholds",
    "PseudoGapExample",
    "GapSource",
    "PseudoGapDataset",
    "sample_pseudo_gap",
    "label_displacement",
    "build_training_set",
    "write_training_manifest",
]

logger = logging.getLogger(__name__)

MIN_SPAN_S = 5.0
MAX_SPAN_S = 30.0
PER_VIDEO_CAP = 500
_MARGIN_FRAMES = 1  # spans stay strictly inside their segment


@dataclass(frozen=True)
class LabelThresholds:
    """Displacement cutoffs (FOV-lengths) for same/different-scene labels."""

    tau_same: float = 0.5
    tau_diff: float = 2.0

    def __post_init__(self):
        if not 0 < self.tau_same < self.tau_diff:
            raise ConfigurationError(
                f"need 0 < tau_same < tau_diff, got ({self.tau_same}, {self.tau_diff})"
            )


@dataclass
class PseudoGapExample:
    frame_before: np.ndarray  # boundary frame just before the span
    frame_after: np.ndarray  # boundary frame just after the span
    label: int  # 1 same-scene, 0 different-scene
    accumulated_displacement: float
    source: tuple  # (video_id, (span_start, span_end))
    f1_index: int = -1
    f2_index: int = -1


@dataclass
class GapSource:
    """One video's worth of raw material for pseudo-gap sampling."""

    video_id: str
    frames: np.ndarray  # (n, h, w)
    fps: float
    segments: list  # good TimelineSegments only
    pixels_per_fov: float


@dataclass
class PseudoGapDataset:
    examples: list
    n_same: int = 0
    n_diff: int = 0
    discards: list = field(default_factory=list)  # (video_id, span, displacement)

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    @property
    def class_balance(self) -> float:
        total = self.n_same + self.n_diff
        return self.n_same / total if total else float("nan")


def sample_pseudo_gap(
    segment: TimelineSegment,
    fps: float,
    rng: np.random.Generator,
    min_len_s: float = MIN_SPAN_S,
    max_len_s: float = MAX_SPAN_S,
):
    """Pick a random inner span of the segment.

    Returns (span, f1_index, f2_index) with span=(start, end) inclusive,
    f1 the last frame before and f2 the first frame after the span, or
    None when the segment is too short (skip signal, not an error).
    """
    if segment.kind != "good":
        return None
    avail = segment.n_frames - 2 * _MARGIN_FRAMES
    min_frames = int(round(min_len_s * fps))
    if avail < min_frames:
        return None
    hi_s = min(max_len_s, avail / fps)
    length = int(round(rng.uniform(min_len_s, hi_s) * fps))
    length = max(min_frames, min(length, avail))
    start_lo = segment.start_frame + _MARGIN_FRAMES
    start_hi = segment.end_frame - _MARGIN_FRAMES - length + 1
    start = int(rng.integers(start_lo, start_hi + 1))
    span = (start, start + length - 1)
    return span, start - 1, start + length


def label_displacement(d: float, thr: LabelThresholds = LabelThresholds()):
    """1 same-scene, 0 different-scene, None for the ambiguous band."""
    mag = abs(d.value if isinstance(d, flow.Displacement) else float(d))
    if mag <= thr.tau_same:
        return 1
    if mag >= thr.tau_diff:
        return 0
    return None


class _SegmentDisplacements:
    """Prefix sums of per-frame displacement, computed lazily per segment."""

    def __init__(self, source: GapSource):
        self.source = source
        self._prefix = {}

    def between(self, segment: TimelineSegment, i: int, j: int):
        key = (segment.start_frame, segment.end_frame)
        if key not in self._prefix:
            frames = self.source.frames[segment.start_frame : segment.end_frame + 1]
            values, confs = flow.displacement_series(
                np.asarray(frames, dtype=np.float64) / (255.0 if frames.dtype == np.uint8 else 1.0),
                self.source.pixels_per_fov,
            )
            self._prefix[key] = (
                np.concatenate([[0.0], np.cumsum(values)]),
                np.concatenate([[0.0], np.cumsum(confs)]),
            )
        pref, cpref = self._prefix[key]
        a = i - segment.start_frame
        b = j - segment.start_frame
        value = pref[b] - pref[a]
        conf = (cpref[b] - cpref[a]) / max(b - a, 1)
        return flow.Displacement(value=float(value), confidence=float(conf), per_frame=False)


def build_training_set(
    sources,
    n_target: int,
    thresholds: LabelThresholds = LabelThresholds(),
    rng: np.random.Generator | None = None,
    min_len_s: float = MIN_SPAN_S,
    max_len_s: float = MAX_SPAN_S,
    per_video_cap: int = PER_VIDEO_CAP,
    displacement_fn=None,
) -> PseudoGapDataset:
    """Sample labeled pseudo-gap examples across videos until n_target.

    Videos are visited round-robin with a per-video cap so one long video
    cannot dominate. displacement_fn(source, segment, i, j) may replace
    the flow-based estimate (used by ground-truth oracles).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    usable = []
    for src in sources:
        segs = [
            s
            for s in src.segments
            if s.kind == "good"
            and s.n_frames - 2 * _MARGIN_FRAMES >= int(round(min_len_s * src.fps))
        ]
        if segs:
            usable.append((src, segs, _SegmentDisplacements(src)))
    if not usable:
        raise ConfigurationError("no good segment is long enough for pseudo-gap sampling")

    ds = PseudoGapDataset(examples=[])
    per_video = {src.video_id: 0 for src, _, _ in usable}
    attempts = 0
    max_attempts = max(50 * n_target, 1000)
    while len(ds.examples) < n_target and attempts < max_attempts:
        progressed = False
        for src, segs, disp in usable:
            if len(ds.examples) >= n_target:
                break
            if per_video[src.video_id] >= per_video_cap:
                continue
            attempts += 1
            weights = np.array([s.n_frames for s in segs], dtype=np.float64)
            seg = segs[int(rng.choice(len(segs), p=weights / weights.sum()))]
            picked = sample_pseudo_gap(seg, src.fps, rng, min_len_s, max_len_s)
            if picked is None:
                continue
            span, f1, f2 = picked
            if displacement_fn is not None:
                d = displacement_fn(src, seg, f1, f2)
            else:
                d = disp.between(seg, f1, f2)
            label = label_displacement(d, thresholds)
            if label is None:
                logger.debug(
                    "discarding ambiguous pseudo-gap %s span=%s displacement=%.3f",
                    src.video_id,
                    span,
                    d.value if isinstance(d, flow.Displacement) else d,
                )
                ds.discards.append(
                    (src.video_id, span, float(d.value if isinstance(d, flow.Displacement) else d))
                )
                continue
            value = float(d.value if isinstance(d, flow.Displacement) else d)
            ds.examples.append(
                PseudoGapExample(
                    frame_before=src.frames[f1].copy(),
                    frame_after=src.frames[f2].copy(),
                    label=label,
                    accumulated_displacement=value,
                    source=(src.video_id, span),
                    f1_index=f1,
                    f2_index=f2,
                )
            )
            per_video[src.video_id] += 1
            ds.n_same += label
            ds.n_diff += 1 - label
            progressed = True
        if not progressed and all(
            per_video[s.video_id] >= per_video_cap for s, _, _ in usable
        ):
            break
    if len(ds.examples) < n_target:
        warnings.warn(
            f"pseudo-gap sources exhausted at {len(ds.examples)}/{n_target} examples",
            stacklevel=2,
        )
    if ds.n_same == 0 or ds.n_diff == 0:
        warnings.warn("pseudo-gap training set is single-class", stacklevel=2)
    return ds


def write_training_manifest(dataset: PseudoGapDataset, path, frame_path_fn=None) -> None:
    """JSONL manifest: {video, span, label, displacement, f1_path, f2_path}."""
    with open(path, "w") as fh:
        for k, ex in enumerate(dataset.examples):
            video_id, span = ex.source
            f1 = frame_path_fn(video_id, ex.f1_index) if frame_path_fn else f"{video_id}:{ex.f1_index}"
            f2 = frame_path_fn(video_id, ex.f2_index) if frame_path_fn else f"{video_id}:{ex.f2_index}"
            fh.write(
                json.dumps(
                    {
                        "video": video_id,
                        "span": [span[0], span[1]],
                        "label": ex.label,
                        "displacement": ex.accumulated_displacement,
                        "f1_path": f1,
                        "f2_path": f2,
                    }
                )
                + "\n"
            )
