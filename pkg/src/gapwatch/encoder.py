"""The shared frame encoder: 64x64 grayscale -> 512-d descriptor.

Architecture (fixed per training run): 4x4-patch linear embedding to 32
channels, 2x2 mean pooling of the patch grid, two tanh hidden layers of
width 256, and a linear 512-d head. A parallel linear 512->64 projection
head exists only for unsupervised pretraining. Everything is plain
numpy with hand-written backprop so every gradient can be checked
against finite differences.
"""

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_frame, check_frames
from .errors import CheckpointMismatch, ContractViolation, StorageError

__all__ = [
    "EncoderParams",
    "encode",
    "encode_batch",
    "cosine_distance",
    "save_checkpoint",
    "load_checkpoint",
    "ARCHITECTURE",
    "INPUT_SIZE",
    "EMBED_DIM",
    "PROJ_DIM",
]

INPUT_SIZE = 64
PATCH = 4
PATCH_CHANNELS = 32
POOL = 2
GRID = INPUT_SIZE // PATCH  # 16x16 patches
POOLED = GRID // POOL  # 8x8 after mean pooling
FLAT_DIM = POOLED * POOLED * PATCH_CHANNELS  # 2048
HIDDEN = 256
EMBED_DIM = 512
PROJ_DIM = 64

ARCHITECTURE = "patch4c32-pool2-tanh256x2-embed512-proj64"

# (name, shape, fan_in) in serialization order
_LAYOUT = (
    ("patch_w", (PATCH * PATCH, PATCH_CHANNELS), PATCH * PATCH),
    ("patch_b", (PATCH_CHANNELS,), None),
    ("h1_w", (FLAT_DIM, HIDDEN), FLAT_DIM),
    ("h1_b", (HIDDEN,), None),
    ("h2_w", (HIDDEN, HIDDEN), HIDDEN),
    ("h2_b", (HIDDEN,), None),
    ("out_w", (HIDDEN, EMBED_DIM), HIDDEN),
    ("out_b", (EMBED_DIM,), None),
    ("proj_w", (EMBED_DIM, PROJ_DIM), EMBED_DIM),
    ("proj_b", (PROJ_DIM,), None),
)


@dataclass
class EncoderParams:
    arrays: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    @classmethod
    def init(cls, seed: int = 0, dtype=np.float64) -> "EncoderParams":
        rng = np.random.default_rng(seed)
        arrays = OrderedDict()
        for name, shape, fan_in in _LAYOUT:
            if fan_in is None:
                arrays[name] = np.zeros(shape, dtype=dtype)
            else:
                arrays[name] = (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype)
        return cls(arrays)

    @classmethod
    def zeros(cls, dtype=np.float64) -> "EncoderParams":
        return cls(OrderedDict((n, np.zeros(s, dtype=dtype)) for n, s, _ in _LAYOUT))

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    @property
    def n_params(self) -> int:
        return sum(int(a.size) for a in self.arrays.values())

    def copy(self) -> "EncoderParams":
        return EncoderParams(OrderedDict((k, v.copy()) for k, v in self.arrays.items()))

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(OrderedDict((k, v.astype(dtype)) for k, v in self.arrays.items()))

    def pack(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    @classmethod
    def unpack(cls, vector, dtype=np.float64) -> "EncoderParams":
        arrays = OrderedDict()
        pos = 0
        for name, shape, _ in _LAYOUT:
            n = int(np.prod(shape))
            arrays[name] = np.asarray(vector[pos : pos + n], dtype=dtype).reshape(shape)
            pos += n
        if pos != len(vector):
            raise ContractViolation(f"parameter vector has {len(vector)} values, expected {pos}")
        return cls(arrays)

    def validate(self) -> None:
        for name, shape, _ in _LAYOUT:
            if name not in self.arrays:
                raise CheckpointMismatch(f"missing parameter array {name!r}")
            if tuple(self.arrays[name].shape) != shape:
                raise CheckpointMismatch(
                    f"array {name!r} has shape {self.arrays[name].shape}, expected {shape}"
                )
            if not np.all(np.isfinite(self.arrays[name])):
                raise CheckpointMismatch(f"array {name!r} contains non-finite values")

    def axpy(self, alpha: float, grads: "OrderedDict[str, np.ndarray]") -> None:
        """In-place update: params += alpha * grads."""
        for k, g in grads.items():
            self.arrays[k] += alpha * g


def forward(params: EncoderParams, X: np.ndarray, project: bool = False):
    """Batched forward pass. X is (B, 64, 64); returns embeddings and a
    backprop cache (plus projections when project=True)."""
    p = params.arrays
    B = X.shape[0]
    X = np.asarray(X, dtype=p["patch_w"].dtype)
    patches = (
        X.reshape(B, GRID, PATCH, GRID, PATCH)
        .transpose(0, 1, 3, 2, 4)
        .reshape(B, GRID * GRID, PATCH * PATCH)
    )
    pe = patches @ p["patch_w"] + p["patch_b"]  # (B, 256, 32)
    pooled = pe.reshape(B, POOLED, POOL, POOLED, POOL, PATCH_CHANNELS).mean(axis=(2, 4))
    flat = pooled.reshape(B, FLAT_DIM)
    h1 = np.tanh(flat @ p["h1_w"] + p["h1_b"])
    h2 = np.tanh(h1 @ p["h2_w"] + p["h2_b"])
    emb = h2 @ p["out_w"] + p["out_b"]
    cache = (patches, flat, h1, h2, emb)
    if project:
        z = emb @ p["proj_w"] + p["proj_b"]
        return emb, z, cache
    return emb, cache


def backward(params: EncoderParams, cache, d_emb: np.ndarray, d_proj: np.ndarray | None = None):
    """Gradients of a scalar loss w.r.t. every parameter array.

    d_emb is dL/d embeddings; d_proj (optional) is dL/d projections and
    adds the projection-head path.
    """
    p = params.arrays
    patches, flat, h1, h2, emb = cache
    B = patches.shape[0]
    grads = OrderedDict()
    d_emb = np.asarray(d_emb, dtype=p["patch_w"].dtype)
    if d_proj is not None:
        grads["proj_w"] = emb.T @ d_proj
        grads["proj_b"] = d_proj.sum(axis=0)
        d_emb = d_emb + d_proj @ p["proj_w"].T
    else:
        grads["proj_w"] = np.zeros_like(p["proj_w"])
        grads["proj_b"] = np.zeros_like(p["proj_b"])
    grads["out_w"] = h2.T @ d_emb
    grads["out_b"] = d_emb.sum(axis=0)
    dh2 = d_emb @ p["out_w"].T
    da2 = dh2 * (1.0 - h2 * h2)
    grads["h2_w"] = h1.T @ da2
    grads["h2_b"] = da2.sum(axis=0)
    dh1 = da2 @ p["h2_w"].T
    da1 = dh1 * (1.0 - h1 * h1)
    grads["h1_w"] = flat.T @ da1
    grads["h1_b"] = da1.sum(axis=0)
    dflat = da1 @ p["h1_w"].T
    dpooled = dflat.reshape(B, POOLED, POOLED, PATCH_CHANNELS)
    dpe = (
        np.repeat(np.repeat(dpooled.reshape(B, POOLED, 1, POOLED, 1, PATCH_CHANNELS), POOL, axis=2), POOL, axis=4)
        / (POOL * POOL)
    ).reshape(B, GRID * GRID, PATCH_CHANNELS)
    grads["patch_w"] = np.einsum("bpi,bpo->io", patches, dpe)
    grads["patch_b"] = dpe.sum(axis=(0, 1))
    return grads


def encode_batch(params: EncoderParams, frames) -> np.ndarray:
    frames = check_frames(frames, size=INPUT_SIZE)
    if frames.dtype == np.uint8:
        frames = frames.astype(params.dtype) / 255.0
    emb, _ = forward(params, frames)
    return emb


def encode(params: EncoderParams, frame) -> np.ndarray:
    """Deterministic embedding of one frame."""
    frame = check_frame(frame, size=INPUT_SIZE)
    return encode_batch(params, frame[None])[0]


def cosine_distance(f1, f2) -> float:
    """1 - cos(f1, f2); in [0, 2], zero iff positively collinear."""
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    n1 = np.linalg.norm(f1)
    n2 = np.linalg.norm(f2)
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("cosine_distance undefined for zero-norm input")
    return float(1.0 - float(f1 @ f2) / (n1 * n2))


def save_checkpoint(path, params: EncoderParams, meta: dict | None = None) -> None:
    """One file: a JSON header line, then raw little-endian float32 arrays
    in declared order."""
    params.validate()
    header = {
        "architecture": ARCHITECTURE,
        "dims": {name: list(shape) for name, shape, _ in _LAYOUT},
        "dtype": "float32",
    }
    header.update(meta or {})
    try:
        with open(path, "wb") as fh:
            fh.write(json.dumps(header).encode("utf-8") + b"\n")
            for name, _, _ in _LAYOUT:
                fh.write(params.arrays[name].astype("<f4").tobytes())
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path, dtype=np.float64):
    """Returns (EncoderParams, header dict). Validates dims and finiteness."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from exc
    nl = data.find(b"\n")
    if nl < 0:
        raise CheckpointMismatch("checkpoint has no header line")
    try:
        header = json.loads(data[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointMismatch(f"unreadable checkpoint header: {exc}") from exc
    if header.get("architecture") != ARCHITECTURE:
        raise CheckpointMismatch(
            f"architecture {header.get('architecture')!r} != expected {ARCHITECTURE!r}"
        )
    for name, shape, _ in _LAYOUT:
        if list(header.get("dims", {}).get(name, [])) != list(shape):
            raise CheckpointMismatch(f"checkpoint dims mismatch for {name!r}")
    blob = data[nl + 1 :]
    arrays = OrderedDict()
    pos = 0
    for name, shape, _ in _LAYOUT:
        n = int(np.prod(shape)) * 4
        if pos + n > len(blob):
            raise CheckpointMismatch("checkpoint payload truncated")
        arrays[name] = (
            np.frombuffer(blob[pos : pos + n], dtype="<f4").reshape(shape).astype(dtype)
        )
        pos += n
    if pos != len(blob):
        raise CheckpointMismatch("checkpoint payload has trailing bytes")
    params = EncoderParams(arrays)
    params.validate()
    return params, header
