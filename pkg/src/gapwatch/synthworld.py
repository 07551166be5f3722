"""Procedural tube-world video generator with per-frame ground truth.

A world is a textured tube (value noise over arclength x angle) viewed
by a camera travelling along the centerline. Frames render the texture
window [u, u+1] through a radial mapping: concentric rings sample
increasing arclength, so the center of the frame acts as a vanishing
point and forward motion makes rings flow outward. One FOV-length is
the arclength visible in a single clean frame, and is the unit for all
positions, velocities and drifts.

Corruption events (blur / occlusion / wall_contact) mark poor-visibility
spans. While an event is active the base velocity profile is suspended
and the camera moves only by the event's drift, so the true position
change across an event equals its drift exactly. That makes every gap's
scene-change label derivable from ground truth.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import pgm, rng as rng_mod
from .errors import ConfigurationError, StorageError

__all__ = [
    "CorruptionEvent",
    "WorldConfig",
    "Frame",
    "GroundTruthRecord",
    "World",
    "Video",
    "generate_world",
    "render_frame",
    "generate_dataset",
    "load_video",
    "world_to_video",
    "sample_events",
    "sample_velocity_profile",
]

EVENT_KINDS = ("blur", "occlusion", "wall_contact")

# Value-noise octaves: (arclength cells per FOV, angular cells per turn, amplitude).
# The mix is weighted toward mid frequencies so a single frame carries enough
# independent detail that disjoint texture windows decorrelate, while staying
# smooth enough that sub-0.05-FOV shifts barely change the image.
_OCTAVES = ((4.0, 3, 0.5), (8.0, 6, 0.8), (16.0, 12, 1.0), (32.0, 20, 0.45))
_TEXTURE_PERIOD_FOV = 512.0  # arclength period; trajectories never get close to wrapping
_CONTRAST_GAIN = 2.4

BLUR_KERNEL = 9
OCCLUSION_MIN_COVER = 0.60
WALL_CONTACT_LEVEL = 0.88


@dataclass(frozen=True)
class CorruptionEvent:
    """A poor-visibility span. drift=None means: sample at world build time."""

    start: float
    length: float
    kind: str
    drift: float | None = None

    def contains(self, t: float) -> bool:
        return self.start <= t < self.start + self.length


@dataclass(frozen=True)
class WorldConfig:
    seed: int
    duration: float
    frame_size: int = 64
    fps: float = 10.0
    texture_scale: float = 1.0
    # (duration s, mean speed FOV/s, speed jitter std) per phase, covering `duration`.
    velocity_profile: tuple = ((math.inf, 0.0, 0.0),)
    corruption_events: tuple = ()
    drift_probability: float = 0.5
    drift_magnitude: tuple = (2.5, 6.0)
    # 0 = drift chance independent of event length; 1 = strongly tied to it.
    duration_drift_coupling: float = 0.0


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray  # (h, w) luminance in [0, 1]
    index: int
    timestamp: float


@dataclass(frozen=True)
class GroundTruthRecord:
    frame_index: int
    position: float  # camera arclength u, FOV-lengths
    visible: bool
    event_id: int | None = None


@dataclass(frozen=True)
class ResolvedEvent:
    index: int
    start: float
    length: float
    kind: str
    drift: float

    @property
    def end(self) -> float:
        return self.start + self.length

    def contains(self, t: float) -> bool:
        return self.start <= t < self.end


def _validate_config(config: WorldConfig) -> None:
    if config.fps <= 0:
        raise ConfigurationError(f"fps must be > 0, got {config.fps}")
    if config.duration <= 0:
        raise ConfigurationError(f"duration must be > 0, got {config.duration}")
    if config.frame_size < 16:
        raise ConfigurationError(f"frame_size must be >= 16, got {config.frame_size}")
    if not 0.0 <= config.drift_probability <= 1.0:
        raise ConfigurationError(f"drift_probability must be in [0,1], got {config.drift_probability}")
    if config.texture_scale <= 0:
        raise ConfigurationError(f"texture_scale must be > 0, got {config.texture_scale}")
    if not config.velocity_profile:
        raise ConfigurationError("velocity_profile must have at least one phase")
    total = 0.0
    for i, phase in enumerate(config.velocity_profile):
        if len(phase) != 3:
            raise ConfigurationError(f"velocity_profile[{i}] must be (duration, speed, jitter_std)")
        dur, _, jitter = phase
        if dur <= 0:
            raise ConfigurationError(f"velocity_profile[{i}] duration must be > 0")
        if jitter < 0:
            raise ConfigurationError(f"velocity_profile[{i}] jitter_std must be >= 0")
        total += dur
    if total < config.duration - 1e-9:
        raise ConfigurationError(
            f"velocity_profile covers {total} s but duration is {config.duration} s"
        )
    prev_end = -math.inf
    for i, ev in enumerate(sorted(config.corruption_events, key=lambda e: e.start)):
        if ev.kind not in EVENT_KINDS:
            raise ConfigurationError(f"corruption_events[{i}] kind must be one of {EVENT_KINDS}")
        if ev.length <= 0:
            raise ConfigurationError(f"corruption_events[{i}] length must be > 0")
        if ev.start < 0 or ev.start + ev.length > config.duration:
            raise ConfigurationError(f"corruption_events[{i}] lies outside [0, duration]")
        if ev.start < prev_end:
            raise ConfigurationError(f"corruption_events[{i}] overlaps the previous event")
        prev_end = ev.start + ev.length


class _TubeTexture:
    """Periodic multi-octave value noise over (arclength, angle)."""

    def __init__(self, seed: int, texture_scale: float):
        rng = rng_mod.stream(seed, "texture")
        self.octaves = []
        for freq_a, freq_t, amp in _OCTAVES:
            fa = freq_a * texture_scale
            period_a = max(4, int(round(fa * _TEXTURE_PERIOD_FOV)))
            lattice = rng.random((period_a, freq_t))
            self.octaves.append((fa, freq_t, amp, lattice))
        self._amp_total = sum(o[2] for o in self.octaves)

    def __call__(self, arclength: np.ndarray, angle: np.ndarray) -> np.ndarray:
        acc = np.zeros(np.broadcast(arclength, angle).shape)
        for fa, ft, amp, lattice in self.octaves:
            pa, pt = lattice.shape
            xa = arclength * fa
            xt = angle * (ft / (2.0 * math.pi))
            ia = np.floor(xa)
            it = np.floor(xt)
            wa = xa - ia
            wt = xt - it
            # smoothstep weights
            wa = wa * wa * (3.0 - 2.0 * wa)
            wt = wt * wt * (3.0 - 2.0 * wt)
            i0 = ia.astype(np.int64) % pa
            i1 = (i0 + 1) % pa
            j0 = it.astype(np.int64) % pt
            j1 = (j0 + 1) % pt
            v00 = lattice[i0, j0]
            v01 = lattice[i0, j1]
            v10 = lattice[i1, j0]
            v11 = lattice[i1, j1]
            acc += amp * ((v00 * (1 - wt) + v01 * wt) * (1 - wa) + (v10 * (1 - wt) + v11 * wt) * wa)
        out = acc / self._amp_total
        return np.clip(0.5 + _CONTRAST_GAIN * (out - 0.5), 0.0, 1.0)


@dataclass
class World:
    config: WorldConfig
    events: list
    n_frames: int
    positions: np.ndarray  # (n_frames + 1,), u at t = k/fps
    velocities: np.ndarray  # realized per-frame-interval velocity contribution / dt
    _texture: _TubeTexture = field(repr=False)
    _arc_offset: np.ndarray = field(repr=False)  # 1 - r per pixel
    _angle: np.ndarray = field(repr=False)

    @property
    def duration(self) -> float:
        return self.config.duration

    @property
    def fps(self) -> float:
        return self.config.fps

    def position_at(self, t: float) -> float:
        x = t * self.config.fps
        k = min(int(x), self.n_frames - 1)
        frac = x - k
        return float(self.positions[k] + frac * (self.positions[k + 1] - self.positions[k]))

    def event_at(self, t: float):
        for ev in self.events:
            if ev.contains(t):
                return ev
        return None


def _resolve_events(config: WorldConfig) -> list:
    rng = rng_mod.stream(config.seed, "event-drift")
    events = []
    ordered = sorted(config.corruption_events, key=lambda e: e.start)
    for i, ev in enumerate(ordered):
        drift = ev.drift
        # Draw unconditionally so explicit drifts don't shift later events' draws.
        coin, mag, sgn = rng.random(), rng.uniform(*config.drift_magnitude), rng.random()
        if drift is None:
            c = config.duration_drift_coupling
            p = config.drift_probability * ((1.0 - c) + c * min(1.0, ev.length / 20.0))
            drift = (mag if sgn < 0.5 else -mag) if coin < p else 0.0
        events.append(ResolvedEvent(i, ev.start, ev.length, ev.kind, float(drift)))
    return events


def _integrate_trajectory(config: WorldConfig, events: list):
    fps = config.fps
    dt = 1.0 / fps
    n_frames = int(round(config.duration * fps))
    jitter_rng = rng_mod.stream(config.seed, "speed-jitter")
    z = jitter_rng.standard_normal(n_frames)

    phase_ends = np.cumsum([p[0] for p in config.velocity_profile])
    positions = np.zeros(n_frames + 1)
    velocities = np.zeros(n_frames)
    phase_idx = 0
    for k in range(n_frames):
        t0 = k * dt
        t1 = t0 + dt
        while phase_idx < len(phase_ends) - 1 and t0 >= phase_ends[phase_idx]:
            phase_idx += 1
        _, speed, jitter = config.velocity_profile[phase_idx]
        overlap = 0.0
        drift_contrib = 0.0
        for ev in events:
            o = min(t1, ev.end) - max(t0, ev.start)
            if o > 0:
                overlap += o
                drift_contrib += (ev.drift / ev.length) * o
        active = dt - overlap
        v = speed + jitter * z[k]
        step = v * active + drift_contrib
        positions[k + 1] = positions[k] + step
        velocities[k] = step / dt
    return n_frames, positions, velocities


def generate_world(config: WorldConfig) -> World:
    """Deterministic function of the config (seed included)."""
    _validate_config(config)
    events = _resolve_events(config)
    n_frames, positions, velocities = _integrate_trajectory(config, events)

    size = config.frame_size
    c = (size - 1) / 2.0
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    dist = np.hypot(xs - c, ys - c)
    r = dist / (c * math.sqrt(2.0))
    return World(
        config=config,
        events=events,
        n_frames=n_frames,
        positions=positions,
        velocities=velocities,
        _texture=_TubeTexture(config.seed, config.texture_scale),
        _arc_offset=1.0 - r,
        _angle=np.arctan2(ys - c, xs - c),
    )


def _event_rng(world: World, event: ResolvedEvent, frame_index: int) -> np.random.Generator:
    return rng_mod.stream(world.config.seed, f"corrupt-{event.index}-{frame_index}")


def _blob_field(rng: np.random.Generator, size: int, n_lo: int, n_hi: int, sigma_frac=(1 / 6, 1 / 3)):
    n = int(rng.integers(n_lo, n_hi + 1))
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    fld = np.zeros((size, size))
    for _ in range(n):
        cy, cx = rng.uniform(0, size, 2)
        sigma = rng.uniform(sigma_frac[0] * size, sigma_frac[1] * size)
        fld += np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma * sigma))
    lo, hi = fld.min(), fld.max()
    return (fld - lo) / (hi - lo) if hi > lo else fld


def _corrupt(world: World, clean: np.ndarray, event: ResolvedEvent, frame_index: int) -> np.ndarray:
    if event.kind == "blur":
        return ndimage.uniform_filter(clean, size=BLUR_KERNEL, mode="nearest")
    rng = _event_rng(world, event, frame_index)
    size = clean.shape[0]
    if event.kind == "occlusion":
        fld = _blob_field(rng, size, 4, 7)
        cover = rng.uniform(OCCLUSION_MIN_COVER, 0.85)
        thresh = np.quantile(fld, 1.0 - cover)
        intensity = 0.25 + 0.55 * fld
        return np.where(fld >= thresh, intensity, clean)
    if event.kind == "wall_contact":
        fld = _blob_field(rng, size, 2, 3, sigma_frac=(1 / 3, 2 / 3))
        return np.clip(WALL_CONTACT_LEVEL + 0.03 * (fld - 0.5), 0.0, 1.0)
    raise ConfigurationError(f"unknown corruption kind {event.kind!r}")


def render_frame(world: World, t: float):
    """Render the frame at time t. Pure: same (world, t) -> identical output.

    Returns (Frame, GroundTruthRecord).
    """
    if not 0.0 <= t <= world.duration:
        raise ValueError(f"t={t} outside [0, {world.duration}]")
    frame_index = min(int(round(t * world.fps)), world.n_frames - 1)
    u = world.position_at(t)
    pixels = world._texture(u + world._arc_offset, world._angle)
    event = world.event_at(t)
    if event is not None:
        pixels = _corrupt(world, pixels, event, frame_index)
    gt = GroundTruthRecord(
        frame_index=frame_index,
        position=u,
        visible=event is None,
        event_id=None if event is None else event.index,
    )
    return Frame(pixels=pixels, index=frame_index, timestamp=t), gt


def _render_all(world: World):
    """Render every frame of the stream (batched clean render, then corruption)."""
    fps = world.fps
    n = world.n_frames
    size = world.config.frame_size
    out = np.empty((n, size, size))
    arc = world._arc_offset[None, :, :]
    ang = world._angle[None, :, :]
    chunk = 64
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        u = world.positions[lo:hi, None, None]
        out[lo:hi] = world._texture(u + arc, np.broadcast_to(ang, (hi - lo, size, size)))
    records = []
    for k in range(n):
        t = k / fps
        event = world.event_at(t)
        if event is not None:
            out[k] = _corrupt(world, out[k], event, k)
        records.append(
            GroundTruthRecord(k, float(world.positions[k]), event is None, None if event is None else event.index)
        )
    return out, records


@dataclass
class Video:
    """A rendered stream plus whatever ground truth is available."""

    video_id: str
    fps: float
    frames: np.ndarray  # (n, h, w) uint8
    timestamps: np.ndarray
    positions: np.ndarray | None = None
    visible: np.ndarray | None = None
    event_ids: list | None = None
    events: list | None = None

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def frames_float(self, idx=None) -> np.ndarray:
        sel = self.frames if idx is None else self.frames[idx]
        return pgm.u8_to_frame(sel)


def world_to_video(world: World, video_id: str = "world") -> Video:
    pixels, records = _render_all(world)
    return Video(
        video_id=video_id,
        fps=world.fps,
        frames=pgm.frame_to_u8(pixels),
        timestamps=np.arange(world.n_frames) / world.fps,
        positions=np.array([r.position for r in records]),
        visible=np.array([r.visible for r in records]),
        event_ids=[r.event_id for r in records],
        events=list(world.events),
    )


def _scene_change_label(drift: float, tau_same: float, tau_diff: float) -> str:
    if abs(drift) <= tau_same:
        return "same"
    if abs(drift) >= tau_diff:
        return "change"
    return "ambiguous"


@dataclass
class DatasetManifest:
    path: Path
    n_frames: int
    fps: float
    frame_size: int
    events: list


def generate_dataset(config: WorldConfig, out_path) -> DatasetManifest:
    """Render a world to disk: fNNNNNN.pgm frames + manifest.jsonl + events.json."""
    from .pseudogaps import LabelThresholds  # local import: pseudogaps does not import us

    thr = LabelThresholds()
    world = generate_world(config)
    out = Path(out_path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        pixels, records = _render_all(world)
        u8 = pgm.frame_to_u8(pixels)
        for k in range(world.n_frames):
            pgm.write_pgm(out / f"f{k:06d}.pgm", u8[k])
        with open(out / "manifest.jsonl", "w") as fh:
            for k, rec in enumerate(records):
                fh.write(
                    json.dumps(
                        {
                            "index": rec.frame_index,
                            "timestamp": k / world.fps,
                            "position": rec.position,
                            "visible": rec.visible,
                            "event_id": rec.event_id,
                        }
                    )
                    + "\n"
                )
        events_doc = {
            "fps": world.fps,
            "frame_size": config.frame_size,
            "n_frames": world.n_frames,
            "seed": config.seed,
            "label_thresholds": {"tau_same": thr.tau_same, "tau_diff": thr.tau_diff},
            "events": [
                {
                    "id": ev.index,
                    "start": ev.start,
                    "length": ev.length,
                    "kind": ev.kind,
                    "drift": ev.drift,
                    "scene_change": _scene_change_label(ev.drift, thr.tau_same, thr.tau_diff),
                }
                for ev in world.events
            ],
        }
        (out / "events.json").write_text(json.dumps(events_doc, indent=2) + "\n")
    except OSError as exc:
        raise StorageError(f"cannot write dataset to {out}: {exc}") from exc
    return DatasetManifest(out, world.n_frames, world.fps, config.frame_size, world.events)


def load_video(path) -> Video:
    """Load a dataset directory written by generate_dataset."""
    root = Path(path)
    manifest = root / "manifest.jsonl"
    if not manifest.exists():
        raise StorageError(f"no manifest.jsonl under {root}")
    records = [json.loads(line) for line in manifest.read_text().splitlines() if line.strip()]
    records.sort(key=lambda r: r["index"])
    frames = np.stack([pgm.read_pgm(root / f"f{r['index']:06d}.pgm") for r in records])
    events = None
    fps = None
    ev_file = root / "events.json"
    if ev_file.exists():
        doc = json.loads(ev_file.read_text())
        fps = doc.get("fps")
        events = [
            ResolvedEvent(e["id"], e["start"], e["length"], e["kind"], e["drift"])
            for e in doc.get("events", [])
        ]
    if fps is None:
        ts = [r["timestamp"] for r in records]
        fps = (len(ts) - 1) / (ts[-1] - ts[0]) if len(ts) > 1 and ts[-1] > ts[0] else 10.0
    return Video(
        video_id=root.name,
        fps=float(fps),
        frames=frames,
        timestamps=np.array([r["timestamp"] for r in records]),
        positions=np.array([r["position"] for r in records]),
        visible=np.array([r["visible"] for r in records], dtype=bool),
        event_ids=[r["event_id"] for r in records],
        events=events,
    )


def sample_events(
    rng: np.random.Generator,
    duration: float,
    n_events: int,
    length_range=(2.0, 40.0),
    min_gap_s: float = 6.0,
    margin_s: float = 4.0,
    kinds=EVENT_KINDS,
) -> tuple:
    """Place non-overlapping events with good-visibility space between them."""
    if n_events <= 0:
        return ()
    lo, hi = length_range
    budget = duration - 2 * margin_s - (n_events - 1) * min_gap_s
    max_len = budget / n_events
    if max_len < lo:
        raise ConfigurationError(
            f"cannot fit {n_events} events of >= {lo} s into {duration} s"
        )
    lengths = rng.uniform(lo, min(hi, max_len), n_events)
    slack = budget - lengths.sum()
    cuts = np.sort(rng.uniform(0.0, slack, n_events))
    starts = margin_s + np.concatenate(([0.0], np.cumsum(lengths[:-1] + min_gap_s))) + cuts
    events = []
    for i in range(n_events):
        events.append(
            CorruptionEvent(
                start=float(starts[i]),
                length=float(lengths[i]),
                kind=kinds[int(rng.integers(0, len(kinds)))],
            )
        )
    return tuple(events)


def sample_velocity_profile(
    rng: np.random.Generator,
    duration: float,
    phase_range=(6.0, 16.0),
    dwell_prob: float = 0.45,
    reverse_prob: float = 0.1,
    speed_range=(0.2, 0.55),
    jitter_range=(0.01, 0.05),
) -> tuple:
    """Alternating dwell/advance phases; speeds stay within flow's detectable
    range, and dwells are long and slow enough that spans inside them stay
    clearly same-scene."""
    phases = []
    total = 0.0
    while total < duration:
        dur = float(rng.uniform(*phase_range))
        roll = rng.random()
        if roll < dwell_prob:
            speed = float(rng.uniform(0.0, 0.025))
        else:
            speed = float(rng.uniform(*speed_range))
            if rng.random() < reverse_prob:
                speed = -speed
        phases.append((dur, speed, float(rng.uniform(*jitter_range))))
        total += dur
    return tuple(phases)
