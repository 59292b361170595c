"""Deterministic random substreams.

Every random quantity is drawn from a generator keyed by a root seed and a
tuple of tags (purpose, trial index, ...).  Keys are hashed, never counted, so
adding trials or purposes leaves existing streams untouched.  Within a stream
draws are sequential, so extending a horizon only appends values.
"""

from __future__ import annotations

import hashlib

import numpy as np

_TINY = 2.0**-60


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)) and not isinstance(tag, bool) and tag >= 0:
        return int(tag)
    digest = hashlib.sha256(repr(tag).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, *tags) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *tags)``."""
    if seed is None or int(seed) < 0:
        raise ValueError("seed must be a nonnegative integer")
    key = tuple(_tag_to_int(t) for t in tags)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws on the open interval (0, 1)."""
    u = rng.random(size)
    return np.where(u == 0.0, _TINY, u)


def mapping_inputs(seed: int, tags: tuple, trials: int, horizon: int, first_trial: int = 0):
    """Coupling coins ``u`` and innovations ``e``, shape ``(trials, horizon)``.

    Row ``i`` depends only on ``(seed, tags, first_trial + i)``.
    """
    u = np.empty((trials, horizon))
    e = np.empty((trials, horizon))
    for i in range(trials):
        k = first_trial + i
        u[i] = open_uniform(substream(seed, *tags, "coin", k), horizon)
        e[i] = open_uniform(substream(seed, *tags, "innovation", k), horizon)
    return u, e
