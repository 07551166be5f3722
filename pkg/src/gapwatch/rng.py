"""Seeded random streams.

Every random draw in the pipeline flows from one root seed through a
named sub-stream, so that e.g. re-running training does not disturb the
world generator and vice versa.
"""

import hashlib

import numpy as np

__all__ = ["stream", "spawn_seed"]


def _name_key(name: str) -> int:
    # Stable across processes/platforms, unlike hash().
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator for the sub-stream ``name`` of the root ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), _name_key(name)]))


def spawn_seed(seed: int, name: str, index: int = 0) -> int:
    """Derive a child seed (for e.g. per-video worlds) from the root seed."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), _name_key(name), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
