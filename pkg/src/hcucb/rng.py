"""Named, independent random substreams.

Every stream is a Philox (counter-based) generator keyed by a root seed and a
fixed stream code, so draws in one stream never shift draws in another.
"""
from __future__ import annotations

import numpy as np

STREAMS = {
    "spec": 1,
    "feasibility": 2,
    "context": 3,
    "noise": 4,
    "agent": 5,
    "mdp": 6,
    "packing": 7,
    "spec-per-seed": 8,
}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    if name not in STREAMS:
        raise KeyError(f"unknown stream {name!r}")
    seq = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                 spawn_key=(STREAMS[name], *extra))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, name: str, *extra: int) -> int:
    """A 63-bit integer seed derived from ``seed`` for the named purpose."""
    seq = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                 spawn_key=(STREAMS[name], *extra))
    hi, lo = (int(w) for w in seq.generate_state(2, dtype=np.uint32))
    return ((hi << 32) | lo) & ((1 << 63) - 1)
