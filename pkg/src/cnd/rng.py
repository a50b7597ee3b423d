"""Counter-based random streams and a replication-parallel map.

Replication ``r`` under seed ``s`` always draws from the Philox stream keyed
by ``SeedSequence(s, spawn_key=(r,))``, so results never depend on how
replications are grouped into blocks or spread over worker processes.
Within a replication vertex ``i`` owns column ``i`` of every draw.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np

DEFAULT_BLOCK = 1000


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(rep),))))


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent auxiliary stream; ``key`` extends the replication index."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))))


def normal_block(seed: int, start: int, stop: int, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normals of shape ``(stop - start,) + shape``, one stream per replication."""
    out = np.empty((stop - start,) + tuple(shape))
    for k, rep in enumerate(range(start, stop)):
        out[k] = replication_rng(seed, rep).standard_normal(shape)
    return out


def blocks(reps: int, block: int = DEFAULT_BLOCK) -> list[tuple[int, int]]:
    return [(a, min(a + block, reps)) for a in range(0, reps, block)]


def resolve_workers(workers: int | None) -> int:
    if workers is None or workers <= 0:
        return max(1, min(8, os.cpu_count() or 1))
    return int(workers)


def map_blocks(fn: Callable[[int, int], object], reps: int, workers: int = 1, block: int = DEFAULT_BLOCK) -> list:
    """Apply ``fn(start, stop)`` to every replication block, results in block order.

    ``fn`` must be picklable when ``workers > 1`` (a module-level function or
    a ``functools.partial`` of one).
    """
    spans = blocks(reps, block)
    workers = resolve_workers(workers)
    if workers == 1 or len(spans) == 1:
        return [fn(a, b) for a, b in spans]
    with ProcessPoolExecutor(max_workers=min(workers, len(spans))) as pool:
        futures = [pool.submit(fn, a, b) for a, b in spans]
        return [f.result() for f in futures]
