"""Binary PGM (P5) frame files.

Frames are stored as 8-bit grayscale; pixel value 255 maps to luminance
1.0. The format is deliberately minimal so datasets stay inspectable
with standard image tools.
"""

import re
from pathlib import Path

import numpy as np

from .errors import StorageError

__all__ = ["write_pgm", "read_pgm", "frame_to_u8", "u8_to_frame", "parse_pgm_bytes"]

_HEADER_RE = re.compile(rb"^P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def frame_to_u8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(frame, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def u8_to_frame(u8: np.ndarray) -> np.ndarray:
    return u8.astype(np.float64) / 255.0


def pgm_bytes(frame: np.ndarray) -> bytes:
    u8 = frame if frame.dtype == np.uint8 else frame_to_u8(frame)
    h, w = u8.shape
    return b"P5\n%d %d\n255\n" % (w, h) + u8.tobytes()


def write_pgm(path, frame: np.ndarray) -> None:
    try:
        Path(path).write_bytes(pgm_bytes(frame))
    except OSError as exc:
        raise StorageError(f"cannot write frame file {path}: {exc}") from exc


def parse_pgm_bytes(data: bytes) -> np.ndarray:
    """Decode one P5 image; raises StorageError on malformed input."""
    m = _HEADER_RE.match(data)
    if not m:
        raise StorageError("not a binary PGM (P5) image")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise StorageError(f"unsupported PGM maxval {maxval}")
    pixels = data[m.end():m.end() + w * h]
    if len(pixels) != w * h:
        raise StorageError("truncated PGM pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


def read_pgm(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read frame file {path}: {exc}") from exc
    return parse_pgm_bytes(data)
