"""Encoder training: unsupervised pretraining and pair-distance fitting.

Pretraining minimizes the normalized-temperature cross entropy over two
augmented views per frame (positives = views of the same frame,
negatives = the rest of the batch), through the projection head.

Pair training then minimizes the signed cosine-distance objective over
auto-labeled frame pairs: same-scene pairs (label 1) contribute +d and
different-scene pairs (label 0) contribute -d, so gradient descent
pulls same-scene descriptors together and pushes different-scene ones
apart. Both loops use plain SGD with a cosine-decayed learning rate and
are deterministic for a fixed seed in 64-bit mode.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import rng as rng_mod
from ._validation import check_frame_pairs, check_frames
from .encoder import EncoderParams, backward, forward
from .errors import ConfigurationError

__all__ = [
    "TrainConfig",
    "augment_batch",
    "nt_xent",
    "pair_distance_loss",
    "pretrain_simclr",
    "train_pairs",
    "ScenePairEncoder",
]


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    steps: int = 600
    temperature: float = 0.5
    seed: int = 0
    dtype: str = "float64"  # float64 for gradient-exact runs, float32 for speed

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature}")
        if self.steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {self.steps}")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


def _cosine_lr(base: float, step: int, total: int) -> float:
    return base * 0.5 * (1.0 + math.cos(math.pi * step / max(total, 1)))


_RESIZE_CACHE: dict = {}


def _resize_grid(in_size: int, out_size: int):
    key = (in_size, out_size)
    cached = _RESIZE_CACHE.get(key)
    if cached is None:
        s = np.linspace(0.0, in_size - 1.0, out_size)
        i0 = np.floor(s).astype(int)
        i1 = np.minimum(i0 + 1, in_size - 1)
        cached = _RESIZE_CACHE[key] = (i0, i1, s - i0)
    return cached


def _bilinear_resize(img: np.ndarray, out_size: int) -> np.ndarray:
    h, w = img.shape
    y0, y1, wy = _resize_grid(h, out_size)
    x0, x1, wx = _resize_grid(w, out_size)
    rows = img[y0, :] * (1 - wy)[:, None] + img[y1, :] * wy[:, None]
    return rows[:, x0] * (1 - wx)[None, :] + rows[:, x1] * wx[None, :]


def augment_batch(
    frames: np.ndarray,
    rng: np.random.Generator,
    crop_scale=(0.6, 1.0),
    flip_prob: float = 0.5,
    jitter: float = 0.2,
    noise_sigma: float = 0.02,
) -> np.ndarray:
    """Random crop-and-resize, horizontal flip, brightness/contrast jitter
    and pixel noise; one independent draw per frame."""
    out = np.empty_like(frames, dtype=np.float64)
    size = frames.shape[1]
    for i, frame in enumerate(frames):
        side = int(round(size * rng.uniform(*crop_scale)))
        side = max(8, min(side, size))
        y0 = int(rng.integers(0, size - side + 1))
        x0 = int(rng.integers(0, size - side + 1))
        view = frame[y0 : y0 + side, x0 : x0 + side]
        view = _bilinear_resize(view, size) if side != size else view.astype(np.float64)
        if rng.random() < flip_prob:
            view = view[:, ::-1]
        brightness = rng.uniform(-jitter, jitter)
        contrast = rng.uniform(1.0 - jitter, 1.0 + jitter)
        view = (view - view.mean()) * contrast + view.mean() + brightness
        view = view + rng.normal(0.0, noise_sigma, size=view.shape)
        out[i] = np.clip(view, 0.0, 1.0)
    return out


def nt_xent(z: np.ndarray, temperature: float):
    """Loss and gradient w.r.t. raw projections z of shape (2B, D), where
    rows i and i+B are the two views of frame i.

    For a batch of identical projections the loss is exactly
    ln(2B - 1): every candidate is equally similar, so the positive is
    one among 2B-1.
    """
    n = len(z)
    if n < 4 or n % 2:
        raise ConfigurationError(f"need an even batch of >= 4 views, got {n}")
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero-norm projection in batch")
    zt = z / norms
    sims = (zt @ zt.T) / temperature
    np.fill_diagonal(sims, -np.inf)  # self-similarity is never a candidate
    pos = (np.arange(n) + n // 2) % n

    row_max = sims.max(axis=1, keepdims=True)
    expd = np.exp(sims - row_max)
    denom = expd.sum(axis=1, keepdims=True)
    log_denom = np.log(denom[:, 0]) + row_max[:, 0]
    loss = float(np.mean(log_denom - sims[np.arange(n), pos]))

    G = expd / denom / n  # softmax over candidates, averaged over anchors
    G[np.arange(n), pos] -= 1.0 / n
    dzt = (G + G.T) @ zt / temperature
    dz = (dzt - zt * (zt * dzt).sum(axis=1, keepdims=True)) / norms
    return loss, dz


def pair_distance_loss(f1: np.ndarray, f2: np.ndarray, labels: np.ndarray):
    """Signed cosine-distance objective over a batch of embedding pairs.

    loss = sum_k (2 c_k - 1) * (1 - cos(f1_k, f2_k)); same-scene pairs
    (c=1) add +distance, different-scene pairs (c=0) subtract it.
    Returns (loss, d_f1, d_f2).
    """
    labels = np.asarray(labels)
    sign = (2.0 * labels - 1.0)[:, None]
    n1 = np.linalg.norm(f1, axis=1, keepdims=True)
    n2 = np.linalg.norm(f2, axis=1, keepdims=True)
    if np.any(n1 == 0) or np.any(n2 == 0):
        raise ValueError("zero-norm embedding in batch")
    dots = (f1 * f2).sum(axis=1, keepdims=True)
    cos = dots / (n1 * n2)
    loss = float((sign[:, 0] * (1.0 - cos[:, 0])).sum())
    # d(1-cos)/df1 = cos * f1 / |f1|^2 - f2 / (|f1||f2|)
    d_f1 = sign * (cos * f1 / (n1 * n1) - f2 / (n1 * n2))
    d_f2 = sign * (cos * f2 / (n2 * n2) - f1 / (n1 * n2))
    return loss, d_f1, d_f2


def pretrain_simclr(frames, config: TrainConfig, params: EncoderParams | None = None):
    """Unsupervised pretraining on unlabeled frames.

    Returns (EncoderParams, history) with history = [(step, loss), ...].
    """
    frames = check_frames(frames)
    if frames.dtype == np.uint8:
        frames = frames.astype(np.float64) / 255.0
    n = len(frames)
    if n < config.batch_size:
        raise ConfigurationError(f"{n} frames < batch_size {config.batch_size}")
    dtype = config.np_dtype
    if params is None:
        params = EncoderParams.init(config.seed, dtype=dtype)
    else:
        params = params.astype(dtype)
    rng = rng_mod.stream(config.seed, "pretrain")
    history = []
    for step in range(config.steps):
        idx = rng.choice(n, size=config.batch_size, replace=False)
        batch = frames[idx]
        views = np.concatenate([augment_batch(batch, rng), augment_batch(batch, rng)])
        _, z, cache = forward(params, views.astype(dtype), project=True)
        loss, dz = nt_xent(z.astype(np.float64), config.temperature)
        grads = backward(params, cache, np.zeros_like(cache[4]), d_proj=dz.astype(dtype))
        params.axpy(-_cosine_lr(config.learning_rate, step, config.steps), grads)
        history.append((step, loss))
    return params, history


def train_pairs(
    params: EncoderParams,
    frames1,
    frames2,
    labels,
    config: TrainConfig,
):
    """Mini-batch SGD on the signed pair-distance objective, starting from
    the (normally pretrained) params. Returns (EncoderParams, history)."""
    frames1 = check_frames(frames1)
    frames2 = check_frames(frames2)
    labels = np.asarray(labels, dtype=np.int64)
    if not (len(frames1) == len(frames2) == len(labels)):
        raise ConfigurationError("pair arrays must align")
    if frames1.dtype == np.uint8:
        frames1 = frames1.astype(np.float64) / 255.0
        frames2 = frames2.astype(np.float64) / 255.0
    n = len(labels)
    if n < 1:
        raise ConfigurationError("no training pairs")
    if len(np.unique(labels)) < 2:
        warnings.warn("pair training set is single-class; the objective is degenerate", stacklevel=2)
    dtype = config.np_dtype
    params = params.astype(dtype)
    rng = rng_mod.stream(config.seed, "pair-train")
    batch = min(config.batch_size, n)
    history = []
    for step in range(config.steps):
        idx = rng.choice(n, size=batch, replace=False)
        f1, cache1 = forward(params, frames1[idx].astype(dtype))
        f2, cache2 = forward(params, frames2[idx].astype(dtype))
        loss, d1, d2 = pair_distance_loss(
            f1.astype(np.float64), f2.astype(np.float64), labels[idx]
        )
        g1 = backward(params, cache1, d1.astype(dtype))
        g2 = backward(params, cache2, d2.astype(dtype))
        lr = _cosine_lr(config.learning_rate, step, config.steps)
        params.axpy(-lr, g1)
        params.axpy(-lr, g2)
        history.append((step, loss))
    return params, history


class ScenePairEncoder(BaseEstimator):
    """Scene-descriptor encoder with the fit/transform surface.

    pretrain() runs the unsupervised stage on raw frames; fit() takes
    labeled frame pairs X of shape (n, 2, 64, 64) and y in {0, 1}
    (1 = same scene). transform() maps frames to 512-d descriptors.
    """

    def __init__(
        self,
        batch_size: int = 64,
        learning_rate: float = 2e-4,
        steps: int = 600,
        pretrain_steps: int = 600,
        pretrain_learning_rate: float = 1e-2,
        temperature: float = 0.5,
        seed: int = 0,
        dtype: str = "float64",
    ):
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.steps = steps
        self.pretrain_steps = pretrain_steps
        self.pretrain_learning_rate = pretrain_learning_rate
        self.temperature = temperature
        self.seed = seed
        self.dtype = dtype

    def _config(self, steps: int, lr: float) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=lr,
            steps=steps,
            temperature=self.temperature,
            seed=self.seed,
            dtype=self.dtype,
        )

    def pretrain(self, frames):
        cfg = self._config(self.pretrain_steps, self.pretrain_learning_rate)
        self.params_, self.pretrain_history_ = pretrain_simclr(frames, cfg)
        return self

    def fit(self, X, y):
        X = check_frame_pairs(X)
        params = getattr(self, "params_", None)
        if params is None:
            params = EncoderParams.init(self.seed, dtype=np.float64)
        cfg = self._config(self.steps, self.learning_rate)
        self.params_, self.history_ = train_pairs(params, X[:, 0], X[:, 1], y, cfg)
        return self

    def transform(self, frames) -> np.ndarray:
        from .encoder import encode_batch

        return encode_batch(self.params_, frames)
