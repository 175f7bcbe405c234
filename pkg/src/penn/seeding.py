"""Named, reproducible random sub-streams derived from one integer seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(name: str | int) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


def stream(seed: int, *names: str | int) -> np.random.Generator:
    """Generator for the sub-stream ``names`` of ``seed``.

    The same (seed, names) pair always yields the same sequence, and distinct
    name paths yield statistically independent streams.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed: int, *names: str | int) -> int:
    """Integer seed for APIs that do not accept a Generator."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(n) for n in names))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
