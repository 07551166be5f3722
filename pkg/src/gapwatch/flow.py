"""Block-matching optical flow and boundary-flux displacement.

Flow between consecutive frames is estimated per 8x8 block by exhaustive
integer search (sum of absolute differences). The net outward-normal
flow through the frame boundary is a proxy for forward/backward camera
translation: texture exiting the view radially means the camera moved
forward. A per-dataset calibration constant converts boundary flux in
pixels/frame into FOV-lengths/frame.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_frame
from .errors import ContractViolation

__all__ = [
    "FlowField",
    "Displacement",
    "estimate_flow",
    "boundary_flux",
    "accumulate",
    "displacement_series",
    "calibrate_pixels_per_fov",
    "dump_flow_jsonl",
]

DEFAULT_BLOCK_SIZE = 8
DEFAULT_SEARCH_RADIUS = 6
_MIN_OVERLAP_FRACTION = 0.5


@dataclass
class FlowField:
    """Per-block motion vectors (dx, dy) in pixels/frame with match confidence."""

    vectors: np.ndarray  # (gh, gw, 2)
    confidence: np.ndarray  # (gh, gw) in [0, 1]
    block_size: int = DEFAULT_BLOCK_SIZE

    @property
    def grid_shape(self):
        return self.confidence.shape


@dataclass(frozen=True)
class Displacement:
    """Signed camera displacement in FOV-lengths. Positive = forward."""

    value: float
    confidence: float
    per_frame: bool = True

    @property
    def low_confidence(self) -> bool:
        return self.confidence <= 0.0


def _search_geometry(size: int, block_size: int, search_radius: int):
    """Cached per-(size, block, radius) data: offset ordering and overlap counts."""
    key = (size, block_size, search_radius)
    cached = _GEOMETRY_CACHE.get(key)
    if cached is not None:
        return cached
    g = size // block_size
    crop = g * block_size
    span = 2 * search_radius + 1
    offsets = [(dx, dy) for dy in range(-search_radius, search_radius + 1)
               for dx in range(-search_radius, search_radius + 1)]
    # smallest displacement first so SAD ties resolve toward zero motion
    order = sorted(range(len(offsets)),
                   key=lambda i: (offsets[i][0] ** 2 + offsets[i][1] ** 2,
                                  offsets[i][1], offsets[i][0]))
    # in-frame pixel indicator per (offset, block): the window slides over
    # a frame padded by `search_radius`, so border offsets overlap partially
    valid = np.zeros((span, span, crop, crop), dtype=np.float32)
    for k, (dx, dy) in enumerate(offsets):
        r0, r1 = max(0, -dy), min(crop, size - dy)
        c0, c1 = max(0, -dx), min(crop, size - dx)
        valid[k // span, k % span, r0:r1, c0:c1] = 1.0
    counts = (
        valid.reshape(span * span, g, block_size, g, block_size)
        .sum(axis=(2, 4))
        .astype(np.float32)
    )
    ordered_offsets = np.array([offsets[i] for i in order], dtype=np.float64)
    cached = (g, crop, np.array(order), ordered_offsets, counts, valid)
    _GEOMETRY_CACHE[key] = cached
    return cached


_GEOMETRY_CACHE: dict = {}


def estimate_flow(
    prev,
    next_,
    block_size: int = DEFAULT_BLOCK_SIZE,
    search_radius: int = DEFAULT_SEARCH_RADIUS,
) -> FlowField:
    """Where did each block of `prev` go in `next_`?

    SAD is the mean absolute difference over the in-frame overlap, so
    boundary blocks can still match content that partially left the view.
    Confidence is 1 - best/second-best SAD over distinct offsets.
    """
    a = check_frame(prev)
    b = check_frame(next_)
    if a.shape != b.shape:
        raise ContractViolation(f"frame sizes differ: {a.shape} vs {b.shape}")
    size = a.shape[0]
    if size // block_size < 1:
        raise ContractViolation(f"frame size {size} smaller than block size {block_size}")
    g, crop, order, offsets, counts, valid = _search_geometry(size, block_size, search_radius)
    a32 = a[:crop, :crop].astype(np.float32)

    pad = search_radius
    padded = np.zeros((size + 2 * pad, size + 2 * pad), dtype=np.float32)
    padded[pad : pad + size, pad : pad + size] = b
    windows = np.lib.stride_tricks.sliding_window_view(padded, (crop, crop))

    diff = np.abs(a32[None, None, :, :] - windows)
    diff *= valid  # out-of-frame pixels contribute nothing
    sums = diff.reshape(-1, g, block_size, g, block_size).sum(axis=(2, 4))
    min_overlap = block_size * block_size * _MIN_OVERLAP_FRACTION
    with np.errstate(invalid="ignore", divide="ignore"):
        sad = np.where(counts >= min_overlap, sums / counts, np.float32(np.inf))[order]

    best_idx = np.argmin(sad, axis=0)  # first minimum = smallest offset on ties
    grid_i, grid_j = np.indices((g, g))
    best = sad[best_idx, grid_i, grid_j]
    sad[best_idx, grid_i, grid_j] = np.inf
    second = np.min(sad, axis=0)
    best_vec = offsets[best_idx]

    with np.errstate(invalid="ignore", divide="ignore"):
        conf = 1.0 - best / second
    conf = np.where(np.isfinite(conf), conf, 0.0)
    conf = np.clip(conf, 0.0, 1.0)
    # flat blocks: everything matches equally well -> no information
    conf[~np.isfinite(best)] = 0.0
    conf[(best == 0) & (second == 0)] = 0.0
    return FlowField(vectors=best_vec, confidence=conf, block_size=block_size)


def _boundary_normals(g: int) -> np.ndarray:
    """Outward unit normal per boundary block; zero for interior blocks."""
    normals = np.zeros((g, g, 2))
    normals[:, 0] += (-1.0, 0.0)
    normals[:, g - 1] += (1.0, 0.0)
    normals[0, :] += (0.0, -1.0)
    normals[g - 1, :] += (0.0, 1.0)
    norms = np.linalg.norm(normals, axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        normals = np.where(norms > 0, normals / norms, 0.0)
    return normals


def boundary_flux(flow: FlowField, pixels_per_fov: float) -> Displacement:
    """Confidence-weighted mean outward-normal flow over boundary blocks,
    converted to FOV-lengths/frame."""
    if pixels_per_fov <= 0:
        raise ContractViolation(f"pixels_per_fov must be > 0, got {pixels_per_fov}")
    g = flow.grid_shape[0]
    normals = _boundary_normals(g)
    on_boundary = np.linalg.norm(normals, axis=2) > 0
    conf = flow.confidence[on_boundary]
    outward = (flow.vectors * normals).sum(axis=2)[on_boundary]
    total = conf.sum()
    if total <= 0.0:
        return Displacement(value=0.0, confidence=0.0, per_frame=True)
    flux_px = float((conf * outward).sum() / total)
    return Displacement(
        value=flux_px / pixels_per_fov,
        confidence=float(conf.mean()),
        per_frame=True,
    )


def accumulate(displacements, confidences=None) -> Displacement:
    """Sum per-frame displacements over an interval; additive by construction."""
    values = [d.value if isinstance(d, Displacement) else float(d) for d in displacements]
    if confidences is None:
        confidences = [d.confidence if isinstance(d, Displacement) else 1.0 for d in displacements]
    else:
        confidences = [float(c) for c in confidences]
    if len(values) != len(confidences):
        raise ContractViolation("displacements and confidences must align")
    if not values:
        return Displacement(value=0.0, confidence=0.0, per_frame=False)
    return Displacement(
        value=float(np.sum(values)),
        confidence=float(np.mean(confidences)),
        per_frame=False,
    )


def displacement_series(
    frames,
    pixels_per_fov: float,
    block_size: int = DEFAULT_BLOCK_SIZE,
    search_radius: int = DEFAULT_SEARCH_RADIUS,
):
    """Per-frame displacements for consecutive pairs of a frame stack.

    Returns (values, confidences) of length n-1; values[k] is the motion
    from frame k to k+1.
    """
    frames = np.asarray(frames, dtype=np.float64)
    n = len(frames)
    values = np.zeros(max(n - 1, 0))
    confs = np.zeros(max(n - 1, 0))
    for k in range(n - 1):
        fld = estimate_flow(frames[k], frames[k + 1], block_size, search_radius)
        d = boundary_flux(fld, pixels_per_fov)
        values[k] = d.value
        confs[k] = d.confidence
    return values, confs


def calibrate_pixels_per_fov(
    render_at,
    rng: np.random.Generator,
    n_pairs: int = 100,
    shift_range=(0.01, 0.08),
    position_range=(0.0, 200.0),
    block_size: int = DEFAULT_BLOCK_SIZE,
    search_radius: int = DEFAULT_SEARCH_RADIUS,
) -> float:
    """Regress raw boundary flux (pixels) against known FOV shifts.

    `render_at(u)` must return a clean frame at camera position u. The
    returned constant converts pixel flux to FOV-lengths via a
    through-origin least-squares fit.
    """
    num = 0.0
    den = 0.0
    for _ in range(n_pairs):
        u = rng.uniform(*position_range)
        delta = rng.uniform(*shift_range) * (1 if rng.random() < 0.5 else -1)
        fld = estimate_flow(render_at(u), render_at(u + delta), block_size, search_radius)
        flux = boundary_flux(fld, pixels_per_fov=1.0)  # raw pixels/frame
        if flux.confidence <= 0:
            continue
        num += flux.value * delta
        den += delta * delta
    if den == 0.0 or num <= 0.0:
        raise ContractViolation("calibration failed: no confident flow on rendered pairs")
    return num / den


def dump_flow_jsonl(path, fields, start_index: int = 0) -> None:
    """Debug dump: one JSON object per frame pair."""
    with open(path, "w") as fh:
        for i, fld in enumerate(fields):
            fh.write(
                json.dumps(
                    {
                        "frame_index": start_index + i,
                        "vectors": [
                            [float(v[0]), float(v[1])] for v in fld.vectors.reshape(-1, 2)
                        ],
                        "confidences": [float(c) for c in fld.confidence.ravel()],
                    }
                )
                + "\n"
            )
