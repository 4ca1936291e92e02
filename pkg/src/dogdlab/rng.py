"""Counter-based random streams.

Every draw in the library comes from a Philox generator keyed by
``(seed, component, *indices)``. Two streams with different keys are
independent, and a stream's content never depends on how many other
streams exist or in which order they are consumed, so running agents or
seeds in parallel cannot change the numbers.
"""
from __future__ import annotations

import hashlib

import numpy as np

_COMPONENTS = {
    "graph": 1,
    "ridge": 2,
    "ridge_target": 3,
    "tasks": 4,
    "task_data": 5,
    "batches": 6,
    "spectral": 7,
    "misc": 8,
}


def _key(seed: int, component: str, indices: tuple[int, ...]) -> int:
    if component not in _COMPONENTS:
        raise KeyError(f"unknown rng component {component!r}")
    payload = ",".join(str(int(v)) for v in (seed, _COMPONENTS[component], *indices))
    digest = hashlib.sha256(payload.encode()).digest()
    return int.from_bytes(digest[:16], "little")


def substream(seed: int, component: str, *indices: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, component, *indices)``."""
    return np.random.Generator(np.random.Philox(key=_key(seed, component, indices)))
