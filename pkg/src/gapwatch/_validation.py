"""Input validation helpers used by the estimators and pure functions."""

import numpy as np

from .errors import ConfigurationError, ContractViolation

__all__ = [
    "check_frame",
    "check_frames",
    "check_frame_pairs",
    "check_embeddings",
    "check_features",
    "check_binary_labels",
    "as_float_array",
]


def as_float_array(x, dtype=np.float64) -> np.ndarray:
    arr = np.asarray(x, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("array contains non-finite values")
    return arr


def check_frame(frame, size: int | None = None) -> np.ndarray:
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ContractViolation(f"frame must be a square 2-D array, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ContractViolation(f"frame size {arr.shape[0]} != expected {size}")
    return arr


def check_frames(frames, size: int | None = None) -> np.ndarray:
    arr = np.asarray(frames)
    if arr.ndim != 3:
        raise ContractViolation(f"frames must be (n, h, w), got shape {arr.shape}")
    if arr.shape[1] != arr.shape[2]:
        raise ContractViolation(f"frames must be square, got shape {arr.shape}")
    if size is not None and arr.shape[1] != size:
        raise ContractViolation(f"frame size {arr.shape[1]} != expected {size}")
    return arr


def check_frame_pairs(pairs, size: int | None = None) -> np.ndarray:
    arr = np.asarray(pairs)
    if arr.ndim != 4 or arr.shape[1] != 2:
        raise ContractViolation(f"pairs must be (n, 2, h, w), got shape {arr.shape}")
    if size is not None and arr.shape[2] != size:
        raise ContractViolation(f"frame size {arr.shape[2]} != expected {size}")
    return arr


def check_embeddings(X, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractViolation(f"embeddings must be 2-D, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ContractViolation(f"embedding dim {arr.shape[1]} != expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("embeddings contain non-finite values")
    return arr


def check_features(X, dim: int) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ContractViolation(f"feature matrix must be (n, {dim}), got shape {np.asarray(X).shape}")
    return arr


def check_binary_labels(y, require_both_classes: bool = False) -> np.ndarray:
    arr = np.asarray(y)
    uniq = np.unique(arr)
    if not np.isin(uniq, (0, 1)).all():
        raise ContractViolation(f"labels must be 0/1, got values {uniq}")
    if require_both_classes and uniq.size < 2:
        raise ConfigurationError("both classes must be present")
    return arr.astype(np.int64)
